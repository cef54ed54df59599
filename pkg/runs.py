"""
Sweep run record.

One record per cell of the experiment grid (seed x |T| x depth x known
attributes). Fields map one-to-one to the `runs` table and the results CSV.
"""

from dataclasses import dataclass, field
from typing import Any, Optional

CSV_COLUMNS = (
    "seed",
    "n_trees",
    "max_depth",
    "bagging",
    "status",
    "error",
    "baseline_error",
    "solve_seconds",
    "b_max_used",
    "n_known",
    "train_accuracy",
    "test_accuracy",
)


def depth_label(max_depth: Optional[int]) -> str:
    return "none" if max_depth is None else str(max_depth)


def parse_depth(text: Any) -> Optional[int]:
    """`none`/None means no depth cap; anything else must be an integer >= 1."""
    if text is None or (isinstance(text, str) and text.strip().lower() == "none"):
        return None
    try:
        depth = int(text)
    except (TypeError, ValueError):
        raise ValueError(f"Invalid max_depth {text!r}; use an integer >= 1 or 'none'.") from None
    if isinstance(text, float) and not float(text).is_integer():
        raise ValueError(f"Invalid max_depth {text!r}; use an integer >= 1 or 'none'.")
    if depth < 1:
        raise ValueError("max_depth must be >= 1.")
    return depth


@dataclass
class RunRecord:
    """Outcome of one sweep cell; `error` is only set for completed runs."""

    # "ok" covers feasible and optimal solves; the rest are kept but never averaged.
    allowed_statuses = ("ok", "infeasible", "unknown")

    id: Optional[int]
    sweep_name: str
    seed: int
    n_trees: int
    max_depth: Optional[int]
    bagging: bool
    encoding: str
    n_known: int
    status: str
    error: Optional[float] = None
    baseline_error: Optional[float] = None
    solve_seconds: float = 0.0
    b_max_used: Optional[int] = None
    train_accuracy: Optional[float] = None
    test_accuracy: Optional[float] = None
    report: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.sweep_name, str) or not self.sweep_name.strip():
            raise ValueError("sweep_name must be a non-empty string.")
        if self.status not in self.allowed_statuses:
            raise ValueError(f"Invalid status '{self.status}'. Allowed: {', '.join(self.allowed_statuses)}")
        if not isinstance(self.n_trees, int) or self.n_trees < 1:
            raise ValueError("n_trees must be an integer >= 1.")
        if not isinstance(self.n_known, int) or self.n_known < 0:
            raise ValueError("n_known must be an integer >= 0.")
        if self.status == "ok" and self.error is None:
            raise ValueError("A completed run needs an error value.")
        if self.error is not None and not 0.0 <= self.error <= 1.0:
            raise ValueError(f"error must lie in [0, 1], got {self.error}.")

    @property
    def key(self) -> tuple[int, int, str, bool, str, int]:
        return (self.seed, self.n_trees, depth_label(self.max_depth), self.bagging, self.encoding, self.n_known)

    @property
    def completed(self) -> bool:
        return self.status == "ok"

    def to_csv_row(self) -> list[str]:
        def num(value: Optional[float]) -> str:
            return "" if value is None else repr(float(value))

        return [
            str(self.seed),
            str(self.n_trees),
            depth_label(self.max_depth),
            "1" if self.bagging else "0",
            self.status,
            num(self.error),
            num(self.baseline_error),
            f"{self.solve_seconds:.3f}",
            "" if self.b_max_used is None else str(self.b_max_used),
            str(self.n_known),
            num(self.train_accuracy),
            num(self.test_accuracy),
        ]
