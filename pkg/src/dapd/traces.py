"""Per-epoch trace records, CSV serialization, and the shared run result."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError

TRACE_HEADER = "epoch,primal_value,suboptimality,nnz_fraction,touches,elapsed_seconds"

NNZ_TOLERANCE = 1e-12


@dataclass(frozen=True)
class TraceRecord:
    """One epoch of solver progress.

    ``suboptimality`` is measured against the unperturbed objective and is
    NaN when no reference value was supplied.  ``touches`` is the cumulative
    coordinate-access count, ``elapsed_seconds`` the cumulative wall time
    (0 when a run is executed with wall_clock=False for byte-level
    reproducibility).
    """

    epoch: int
    primal_value: float
    suboptimality: float
    nnz_fraction: float
    touches: int
    elapsed_seconds: float


@dataclass
class RunResult:
    """Solution(s) and trace returned by every solver and baseline."""

    x: np.ndarray
    trace: list
    x_ergodic: np.ndarray | None = None
    y: np.ndarray | None = None
    resolved: dict = field(default_factory=dict)


def nnz_fraction(x: np.ndarray, tol: float = NNZ_TOLERANCE) -> float:
    x = np.asarray(x)
    if x.size == 0:
        return 0.0
    return float(np.count_nonzero(np.abs(x) > tol)) / x.size


def write_trace(records, path) -> None:
    """Write trace records as CSV with 17-significant-digit reals."""
    records = list(records)
    if not records:
        raise StructuralError("refusing to write an empty trace")
    lines = [TRACE_HEADER]
    for r in records:
        lines.append(
            f"{r.epoch},{r.primal_value:.17g},{r.suboptimality:.17g},"
            f"{r.nnz_fraction:.17g},{r.touches},{r.elapsed_seconds:.17g}"
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace(path):
    """Parse a trace CSV back into records (exact round-trip)."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines or lines[0] != TRACE_HEADER:
        raise StructuralError(f"{path} is not a trace file")
    out = []
    for ln in lines[1:]:
        epoch, primal, subopt, nnz, touches, elapsed = ln.split(",")
        out.append(
            TraceRecord(
                epoch=int(epoch),
                primal_value=float(primal),
                suboptimality=float(subopt),
                nnz_fraction=float(nnz),
                touches=int(touches),
                elapsed_seconds=float(elapsed),
            )
        )
    return out
