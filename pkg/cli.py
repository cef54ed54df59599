"""
Command-line interface.

Subcommands wrap the library operations and exchange JSON/CSV files so that
one command's output is the next command's input. Progress notices come from
EventBus subscriptions and go to stderr; results go to files or stdout.

Exit codes: 0 success (feasible or optimal), 1 input or usage error,
2 infeasible (including an exhausted b_max retry cap), 3 no answer within
the time limit.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from typing import Any, Optional, Sequence

from data_model import AttributeSchema, load_dataset, load_schema, sample_training_set, save_dataset
from db import get_connection, init_db
from evaluation import random_baseline, reconstruction_error, write_pairs_csv
from events import ATTACK_RETRY, SOLVER_INCUMBENT, SWEEP_CELL_DONE, Event, EventBus
from forest import (
    accuracy,
    build_interval_tables,
    export_array_format,
    import_array_format,
    load_forest,
    save_forest,
    validate_forest,
)
from recon import ReconProblem, ReconstructionError, benchmark_fixed_assignment, run_attack
from reduction import decode_assignment, encode_3sat, problem_to_dict, read_dimacs
from runs import parse_depth
from services import ExperimentService, load_config, summarize_runs
from solver import Status
from trainer import TrainParams, train_forest

LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_UNKNOWN = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _configure_logging() -> None:
    level_name = os.environ.get("FORESTLEAK_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _handle_incumbent(event: Event) -> None:
    p = event.payload
    print(f"[solver] incumbent objective={p.get('objective')} nodes={p.get('nodes')} t={p.get('seconds', 0):.2f}s", file=sys.stderr)


def _handle_retry(event: Event) -> None:
    p = event.payload
    print(f"[attack] {p.get('previous_status')}; retrying with b_max={p.get('b_max')}", file=sys.stderr)


def _handle_cell_done(event: Event) -> None:
    p = event.payload
    print(
        f"[sweep] seed={p.get('seed')} T={p.get('n_trees')} depth={p.get('max_depth')} "
        f"known={p.get('n_known')}: {p.get('status')} error={p.get('error')}",
        file=sys.stderr,
    )


def _bus(verbose: bool) -> EventBus:
    bus = EventBus()
    bus.subscribe(ATTACK_RETRY, _handle_retry)
    bus.subscribe(SWEEP_CELL_DONE, _handle_cell_done)
    if verbose:
        bus.subscribe(SOLVER_INCUMBENT, _handle_incumbent)
    return bus


def _write_json(doc: Any, path: Optional[str]) -> None:
    text = json.dumps(doc, indent=2)
    if path is None:
        print(text)
        return
    with open(path, "w", encoding="utf-8") as f:
        f.write(text + "\n")


def _read_json(path: str) -> Any:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _optional_schema(path: Optional[str]) -> Optional[AttributeSchema]:
    return load_schema(path) if path else None


def read_known_attributes(path: str, schema: AttributeSchema) -> dict[tuple[int, int], float]:
    """CSV with header example,attribute,value; attributes by name."""
    known: dict[tuple[int, int], float] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"example", "attribute", "value"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header example,attribute,value.")
        for line, rec in enumerate(reader, start=2):
            try:
                k = int(rec["example"])
                i = schema.index(rec["attribute"].strip())
                value = float(rec["value"])
            except (KeyError, ValueError) as e:
                raise ValueError(f"{path}: line {line}: {e}") from e
            known[k, i] = value
    return known


def cmd_train(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema)
    data = load_dataset(args.data, schema, args.class_column)
    if args.n is not None:
        train, holdout = sample_training_set(data, args.n, args.seed)
    else:
        train, holdout = data, None
    params = TrainParams(
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        bootstrap=args.bagging,
        seed=args.seed,
        excluded_features=tuple(schema.index(n) for n in args.exclude),
    )
    forest = train_forest(train, params)
    if args.array_format:
        _write_json(export_array_format(forest), args.out)
    else:
        save_forest(forest, args.out)
    if args.train_out:
        save_dataset(train, args.train_out, args.class_column)
    summary = {
        "forest": args.out,
        "n_examples": train.n_examples,
        "train_accuracy": accuracy(forest, train),
        "test_accuracy": accuracy(forest, holdout) if holdout is not None and holdout.n_examples else None,
    }
    _write_json(summary, None)
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    forest = load_forest(args.forest, _optional_schema(args.schema))
    report = validate_forest(forest)
    _write_json(report.to_dict(), None)
    return EXIT_OK if report.ok else EXIT_INPUT


def cmd_import(args: argparse.Namespace) -> int:
    forest = import_array_format(_read_json(args.arrays), _optional_schema(args.schema))
    save_forest(forest, args.out)
    print(f"Imported {forest.n_trees} trees (N={forest.n_examples}) into {args.out}", file=sys.stderr)
    return EXIT_OK


def _exit_for(status: Status) -> int:
    if status.has_solution:
        return EXIT_OK
    return EXIT_INFEASIBLE if status is Status.INFEASIBLE else EXIT_UNKNOWN


def cmd_attack(args: argparse.Namespace) -> int:
    schema = _optional_schema(args.schema)
    forest = load_forest(args.forest, schema)
    known = read_known_attributes(args.known_attrs, forest.schema) if args.known_attrs else {}
    problem = ReconProblem(
        forest,
        bagging=args.bagging,
        b_max=args.b_max,
        known_attributes=known,
        time_limit=args.time_limit,
        seed=args.seed,
        workers=args.threads,
        encoding=args.encoding,
        symmetry_breaking=args.symmetry,
        b_max_cap=args.b_max_cap,
    )
    try:
        outcome = run_attack(problem, _bus(args.verbose))
    except ReconstructionError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    os.makedirs(args.out, exist_ok=True)
    decoded = None
    if outcome.dataset is not None:
        decoded = os.path.join(args.out, "reconstruction.csv")
        save_dataset(outcome.dataset, decoded, args.class_column)
    _write_json(outcome.to_report(decoded), os.path.join(args.out, "report.json"))
    print(f"{outcome.status.value} (b_max={outcome.b_max_used}, {outcome.seconds:.2f}s)", file=sys.stderr)
    return _exit_for(outcome.status)


def _intervals_for(args: argparse.Namespace, schema: AttributeSchema):
    if args.forest:
        return build_interval_tables(load_forest(args.forest, schema))
    if schema.has_numerical():
        raise ValueError("Numerical attributes need --forest to define their intervals.")
    return None


def cmd_eval(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema)
    orig = load_dataset(args.orig, schema, args.class_column)
    recon = load_dataset(args.recon, schema, args.class_column)
    report = reconstruction_error(orig, recon, _intervals_for(args, schema))
    if args.pairs:
        write_pairs_csv(report, orig, recon, args.pairs)
    _write_json(report.to_dict(), args.out)
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema)
    orig = load_dataset(args.orig, schema, args.class_column)
    error = random_baseline(schema, orig, args.runs, args.seed, _intervals_for(args, schema))
    _write_json({"baseline_error": error, "runs": args.runs, "seed": args.seed}, args.out)
    return EXIT_OK


def cmd_reduce(args: argparse.Namespace) -> int:
    inst = read_dimacs(args.cnf)
    forest, problem = encode_3sat(inst, args.encoding)
    os.makedirs(args.out, exist_ok=True)
    save_forest(forest, os.path.join(args.out, "forest.json"))
    _write_json(problem_to_dict(inst, forest, problem), os.path.join(args.out, "problem.json"))
    if not args.solve:
        return EXIT_OK
    outcome = run_attack(problem)
    if outcome.dataset is None:
        _write_json({"status": outcome.status.value, "assignment": None}, None)
        return _exit_for(outcome.status)
    assignment = decode_assignment(outcome.dataset, inst)
    _write_json({"status": outcome.status.value, "assignment": [int(b) for b in assignment]}, None)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    schema = _optional_schema(args.schema)
    forest = load_forest(args.forest, schema)
    truth = load_dataset(args.orig, forest.schema, args.class_column)
    problem = ReconProblem(forest, bagging=True, time_limit=args.time_limit, seed=args.seed, workers=args.threads)
    result = benchmark_fixed_assignment(problem, truth)
    _write_json(result.to_dict(), args.out)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.out_dir:
        config = dataclasses.replace(config, out_dir=args.out_dir)
    if args.cell_workers:
        config = dataclasses.replace(config, cell_workers=args.cell_workers)
    os.makedirs(config.out_dir, exist_ok=True)
    conn = get_connection(os.path.join(config.out_dir, "runs.sqlite"))
    try:
        init_db(conn)
        service = ExperimentService(conn, _bus(False))
        if args.fresh:
            service.reset_sweep(config.sweep_name)
        records = service.run_sweep(config)
        service.export_csv(config.sweep_name, os.path.join(config.out_dir, "results.csv"))
        _write_json(summarize_runs(records, len(config.seeds)), os.path.join(config.out_dir, "summary.json"))
    finally:
        conn.close()
    failed = sum(1 for r in records if not r.completed)
    print(f"{len(records)} runs, {failed} without a reconstruction; results in {config.out_dir}", file=sys.stderr)
    return EXIT_OK


def _depth(text: str) -> Optional[int]:
    try:
        return parse_depth(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forestleak", description="Training-set reconstruction from random forests.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a forest on a (sampled) dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--class-column", default="c")
    p.add_argument("--n", type=int, help="training sample size (default: whole file)")
    p.add_argument("--n-trees", type=int, required=True)
    p.add_argument("--max-depth", type=_depth, default=None)
    p.add_argument("--bagging", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--exclude", nargs="*", default=[], help="attribute names never split on")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--array-format", action="store_true")
    p.add_argument("--train-out", help="write the sampled training set here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("validate", help="check forest count invariants")
    p.add_argument("forest")
    p.add_argument("--schema")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("import", help="convert the array format to native JSON")
    p.add_argument("arrays")
    p.add_argument("--schema")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("attack", help="reconstruct the training set of a forest")
    p.add_argument("forest")
    p.add_argument("--schema")
    p.add_argument("--class-column", default="c")
    p.add_argument("--bagging", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--encoding", choices=("cp", "flow"), default="cp")
    p.add_argument("--b-max", type=int, default=7)
    p.add_argument("--b-max-cap", type=int, default=12)
    p.add_argument("--symmetry", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--time-limit", type=float)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--known-attrs")
    p.add_argument("--verbose", action="store_true", help="print solver incumbents")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    for name, func, help_text in (
        ("eval", cmd_eval, "score a reconstruction against the original"),
        ("baseline", cmd_baseline, "random-guess baseline error"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("orig")
        if name == "eval":
            p.add_argument("recon")
            p.add_argument("--pairs", help="write matched pairs to this CSV")
        else:
            p.add_argument("--runs", type=int, default=100)
            p.add_argument("--seed", type=int, default=0)
        p.add_argument("--schema", required=True)
        p.add_argument("--class-column", default="c")
        p.add_argument("--forest", help="forest whose split values define numerical intervals")
        p.add_argument("--out")
        p.set_defaults(func=func)

    p = sub.add_parser("reduce", help="encode a 3-SAT DIMACS file as a reconstruction instance")
    p.add_argument("cnf")
    p.add_argument("--encoding", choices=("cp", "flow"), default="cp")
    p.add_argument("--solve", action="store_true", help="also solve and print the decoded assignment")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("bench", help="worst reconstruction consistent with the true assignment")
    p.add_argument("forest")
    p.add_argument("orig")
    p.add_argument("--schema")
    p.add_argument("--class-column", default="c")
    p.add_argument("--time-limit", type=float)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="run an experiment grid from a JSON config")
    p.add_argument("config")
    p.add_argument("--out-dir")
    p.add_argument("--cell-workers", type=int)
    p.add_argument("--fresh", action="store_true", help="drop stored runs of this sweep first")
    p.set_defaults(func=cmd_sweep)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError, KeyError) as e:
        LOG.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
