"""Data ingestion (LIBSVM text format) and synthetic problem generators.

Generators are pure functions of their arguments including the seed, so a
dataset is fully reproducible from its recipe.  Parsed and generated
datasets are immutable and shareable.
"""

from __future__ import annotations

import gzip
import io
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ParseError
from .matrix import SparseRowMatrix, build_matrix, matvec


@dataclass(frozen=True, eq=False)
class Dataset:
    matrix: SparseRowMatrix
    labels: np.ndarray
    meta: dict

    @property
    def n(self) -> int:
        return self.matrix.n_rows

    @property
    def dim(self) -> int:
        return self.matrix.n_cols


def parse_libsvm(source, expected_dim: int | None = None, name: str = "<memory>") -> Dataset:
    """Parse LIBSVM text: ``<label> <index>:<value> ...`` per line.

    Indices are 1-based and must be strictly increasing within a line; the
    dimension is inferred as the maximum index unless ``expected_dim`` is
    given (which also catches truncated files).  Blank lines are skipped.
    """
    if isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = io.TextIOWrapper(source, encoding="ascii") if isinstance(source, io.BufferedIOBase) else source
    labels = []
    triplets = []
    max_index = 0
    row = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        try:
            labels.append(float(tokens[0]))
        except ValueError:
            raise ParseError(f"non-numeric label {tokens[0]!r}", line=lineno) from None
        prev_index = 0
        for tok in tokens[1:]:
            try:
                idx_str, val_str = tok.split(":", 1)
                idx = int(idx_str)
                val = float(val_str)
            except ValueError:
                raise ParseError(f"malformed feature token {tok!r}", line=lineno) from None
            if idx <= 0:
                raise ParseError(f"nonpositive feature index {idx}", line=lineno)
            if idx <= prev_index:
                raise ParseError(
                    f"feature index {idx} not increasing after {prev_index}", line=lineno
                )
            prev_index = idx
            max_index = max(max_index, idx)
            triplets.append((row, idx - 1, val))
        row += 1
    if row == 0:
        raise ParseError("empty dataset: no samples found")
    dim = max_index
    if expected_dim is not None:
        if max_index > expected_dim:
            raise ParseError(
                f"feature index {max_index} exceeds the declared dimension {expected_dim}"
            )
        dim = expected_dim
    matrix = build_matrix(triplets, row, dim)
    meta = {
        "name": name,
        "n": row,
        "d": dim,
        "density": matrix.nnz / (row * dim) if dim else 0.0,
        "source": "libsvm",
    }
    return Dataset(matrix, np.array(labels), meta)


def load_libsvm(path, expected_dim: int | None = None) -> Dataset:
    """Read a LIBSVM file, transparently decompressing ``.gz``."""
    path = str(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rt") as fh:
        return parse_libsvm(fh.read(), expected_dim=expected_dim, name=path)


def serialize_libsvm(dataset: Dataset) -> str:
    """Inverse of parse_libsvm (17-significant-digit values)."""
    out = []
    for i in range(dataset.n):
        cols, vals = dataset.matrix.row(i)
        parts = [f"{dataset.labels[i]:.17g}"]
        parts.extend(f"{c + 1}:{v:.17g}" for c, v in zip(cols, vals))
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def synth_ridge(n: int, d: int, cov="identity", noise_sigma: float = 0.1, seed: int = 0):
    """Linear-model data: rows a_i ~ N(0, Sigma), b_i = <x_true, a_i> + eps_i.

    ``cov`` is "identity" or ("ar1", r) for the AR(1) covariance with unit
    marginal variance and correlation r between adjacent features (stresses
    conditioning).  Returns (dataset, x_true).
    """
    if n < 1 or d < 1:
        raise ConfigurationError("n and d must be at least 1")
    rng = np.random.default_rng(seed)
    x_true = rng.standard_normal(d)
    z = rng.standard_normal((n, d))
    if cov == "identity":
        rows = z
        cov_name = "identity"
    else:
        kind, r = cov
        if kind != "ar1" or not 0 <= r < 1:
            raise ConfigurationError(f"unknown covariance spec {cov!r}")
        rows = np.empty((n, d))
        rows[:, 0] = z[:, 0]
        scale = np.sqrt(1.0 - r * r)
        for j in range(1, d):
            rows[:, j] = r * rows[:, j - 1] + scale * z[:, j]
        cov_name = f"ar1({r})"
    noise = noise_sigma * rng.standard_normal(n)
    triplets = [(i, j, rows[i, j]) for i in range(n) for j in range(d)]
    matrix = build_matrix(triplets, n, d)
    # evaluate the model through the same kernel solvers use, so the
    # zero-noise residual is exactly zero
    b = matvec(matrix, x_true) + noise
    meta = {
        "name": f"synth_ridge(n={n},d={d},cov={cov_name},sigma={noise_sigma},seed={seed})",
        "n": n,
        "d": d,
        "density": 1.0,
        "source": "synthetic",
        "noise_sigma": noise_sigma,
        "cov": cov_name,
        "seed": seed,
    }
    return Dataset(matrix, b, meta), x_true


def synth_sparse_classification(n: int, d: int, density: float, seed: int = 0) -> Dataset:
    """Sparse rows with ~density*d nonzeros and labels from a planted sparse
    hyperplane, separable by construction (rows with tiny margin are
    redrawn)."""
    if not 0 < density <= 1:
        raise ConfigurationError("density must be in (0, 1]")
    if density * d < 1:
        raise ConfigurationError("density*d must be at least 1")
    rng = np.random.default_rng(seed)
    k = max(1, int(round(density * d)))
    plant_nnz = max(1, d // 20)
    plant = np.zeros(d)
    plant_support = rng.choice(d, size=plant_nnz, replace=False)
    plant[plant_support] = rng.standard_normal(plant_nnz)
    triplets = []
    labels = np.empty(n)
    margin_floor = 1e-3
    for i in range(n):
        while True:
            cols = np.sort(rng.choice(d, size=k, replace=False))
            vals = rng.standard_normal(k)
            margin = float(plant[cols] @ vals)
            if abs(margin) >= margin_floor:
                break
        labels[i] = 1.0 if margin > 0 else -1.0
        triplets.extend((i, int(c), float(v)) for c, v in zip(cols, vals))
    matrix = build_matrix(triplets, n, d)
    plant.setflags(write=False)
    meta = {
        "name": f"synth_sparse(n={n},d={d},rho={density},seed={seed})",
        "n": n,
        "d": d,
        "density": matrix.nnz / (n * d),
        "source": "synthetic",
        "seed": seed,
        "plant": plant,
    }
    return Dataset(matrix, labels, meta)
