import threading
import unittest

from events import ATTACK_RETRY, SOLVER_INCUMBENT, SWEEP_CELL_DONE, EventBus, emit


class EventBusTests(unittest.TestCase):
    def test_handlers_receive_only_their_event(self) -> None:
        bus = EventBus()
        retries, cells = [], []
        bus.subscribe(ATTACK_RETRY, lambda e: retries.append(e.payload["b_max"]))
        bus.subscribe(SWEEP_CELL_DONE, lambda e: cells.append(e.payload["seed"]))
        event = bus.emit(ATTACK_RETRY, b_max=8, previous_status="infeasible")
        self.assertEqual(event.name, ATTACK_RETRY)
        self.assertEqual(retries, [8])
        self.assertEqual(cells, [])

    def test_unknown_event_name_rejected(self) -> None:
        bus = EventBus()
        with self.assertRaises(ValueError):
            bus.subscribe("SOLVER_FINISHED", lambda e: None)
        with self.assertRaises(ValueError):
            bus.subscribe("", lambda e: None)

    def test_emit_without_bus_is_a_no_op(self) -> None:
        emit(None, SOLVER_INCUMBENT, objective=3)

    def test_concurrent_publishers_deliver_every_event(self) -> None:
        bus = EventBus()
        seen = []
        bus.subscribe(SOLVER_INCUMBENT, lambda e: seen.append(e.payload["objective"]))

        def worker(base: int) -> None:
            for i in range(200):
                emit(bus, SOLVER_INCUMBENT, objective=base + i)

        threads = [threading.Thread(target=worker, args=(w * 1000,)) for w in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        self.assertEqual(sorted(seen), sorted(w * 1000 + i for w in range(4) for i in range(200)))

    def test_handler_may_publish_follow_up(self) -> None:
        bus = EventBus()
        cells = []
        bus.subscribe(ATTACK_RETRY, lambda e: bus.emit(SWEEP_CELL_DONE, seed=e.payload["seed"]))
        bus.subscribe(SWEEP_CELL_DONE, lambda e: cells.append(e.payload["seed"]))
        bus.emit(ATTACK_RETRY, seed=4)
        self.assertEqual(cells, [4])


if __name__ == "__main__":
    unittest.main(verbosity=2)
