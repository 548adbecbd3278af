"""Seeded synthetic tensors, factors and traces for experiments and tests."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .kernels import run_kernel
from .tensor import ElementWidths, FactorMatrix, SparseTensorCOO
from .trace import AccessTrace, EventKind


def _unique_coords(sample, nnz: int, dims: Sequence[int]) -> np.ndarray:
    total = math.prod(dims)
    if nnz > total:
        raise ValueError(f"cannot place {nnz} distinct nonzeros in {total} cells")
    seen: dict[tuple, None] = {}
    while len(seen) < nnz:
        for row in sample(nnz - len(seen)):
            seen.setdefault(tuple(int(x) for x in row), None)
            if len(seen) == nnz:
                break
    return np.array(list(seen), dtype=np.int64).reshape(-1, len(dims))


def random_tensor(
    dims: Sequence[int],
    nnz: int,
    seed: int | np.random.Generator = 0,
    low: float = 0.1,
    high: float = 1.0,
) -> SparseTensorCOO:
    """Uniformly placed distinct nonzeros with values in ``[low, high)``."""
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in dims)

    def sample(k):
        return np.stack([rng.integers(0, d, size=k) for d in dims], axis=1)

    coords = _unique_coords(sample, nnz, dims)
    values = rng.uniform(low, high, size=coords.shape[0])
    return SparseTensorCOO(dims, coords, values)


def skewed_tensor(
    dims: Sequence[int],
    nnz: int,
    exponent: float = 1.2,
    seed: int | np.random.Generator = 0,
    skew_modes: Optional[Sequence[int]] = None,
) -> SparseTensorCOO:
    """Nonzeros whose coordinates follow a Zipf-like law in ``skew_modes``.

    A few rows of each skewed mode are hit very often, which gives factor-row
    loads strong temporal reuse.
    """
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in dims)
    skew = set(range(len(dims)) if skew_modes is None else skew_modes)
    probs = {}
    for m in skew:
        w = 1.0 / np.arange(1, dims[m] + 1) ** exponent
        probs[m] = w / w.sum()

    def sample(k):
        cols = []
        for m, d in enumerate(dims):
            if m in skew:
                cols.append(rng.choice(d, size=k, p=probs[m]))
            else:
                cols.append(rng.integers(0, d, size=k))
        return np.stack(cols, axis=1)

    coords = _unique_coords(sample, nnz, dims)
    values = rng.uniform(0.1, 1.0, size=coords.shape[0])
    return SparseTensorCOO(dims, coords, values)


def rank_one_tensor(dims: Sequence[int], seed: int = 0) -> tuple[SparseTensorCOO, list[np.ndarray]]:
    """Fully populated outer product of random positive vectors, in COO form."""
    rng = np.random.default_rng(seed)
    vecs = [rng.uniform(0.5, 1.5, size=d) for d in dims]
    dense = vecs[0]
    for v in vecs[1:]:
        dense = np.multiply.outer(dense, v)
    coords = np.argwhere(np.ones(dims, dtype=bool))
    return SparseTensorCOO(tuple(dims), coords, dense[tuple(coords.T)]), vecs


def random_factors(dims: Sequence[int], rank: int, seed: int | np.random.Generator = 0) -> list[FactorMatrix]:
    rng = np.random.default_rng(seed)
    return [FactorMatrix(m, rng.uniform(0.0, 1.0, size=(d, rank))) for m, d in enumerate(dims)]


def kernel_trace(
    tensor: SparseTensorCOO,
    approach: str = "a1",
    mode: int = 0,
    rank: int = 16,
    seed: int = 0,
    max_pointers: Optional[int] = None,
    widths: ElementWidths = ElementWidths(),
) -> AccessTrace:
    """Trace of one instrumented MTTKRP run with seeded random factors."""
    factors = random_factors(tensor.mode_lengths, rank, seed)
    return run_kernel(tensor, factors, mode, approach, max_pointers=max_pointers,
                      widths=widths).trace


def random_trace(
    length: int,
    seed: int = 0,
    kind: EventKind = EventKind.FactorRowLoadRandom,
    footprint_lines: int = 512,
    line_bytes: int = 64,
    size: int = 8,
) -> AccessTrace:
    """Random single-kind accesses over ``footprint_lines`` lines, half of them hot."""
    rng = np.random.default_rng(seed)
    hot = rng.integers(0, max(footprint_lines // 8, 1), size=length)
    cold = rng.integers(0, footprint_lines, size=length)
    lines = np.where(rng.random(length) < 0.5, hot, cold)
    offsets = rng.integers(0, max(line_bytes - size, 0) + 1, size=length)
    return AccessTrace(
        np.arange(length, dtype=np.int64),
        np.full(length, int(kind), dtype=np.int64),
        lines * line_bytes + offsets,
        np.full(length, size, dtype=np.int64),
    )
