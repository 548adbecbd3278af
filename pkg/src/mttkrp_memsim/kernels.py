"""Sparse MTTKRP variants with external-memory instrumentation, plus CP-ALS.

Every instrumented kernel returns ``(output, trace, counters)``. Accesses are
recorded at the granularity the hardware would issue them: one event per
tensor element, per factor-matrix row and per partial-sum row.
"""

from __future__ import annotations

import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass, fields
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .tensor import (
    ElementWidths,
    FactorMatrix,
    Partition,
    SparseTensorCOO,
    partition_output_mode,
    sort_by_mode,
)
from .trace import AccessTrace, AddressMap, EventKind, TraceRecorder

FactorLike = Union[FactorMatrix, np.ndarray, None]

POINTER_BYTES = 4


@dataclass
class AccessCounters:
    tensor_element_loads: int = 0
    tensor_element_stores: int = 0
    factor_row_loads: int = 0
    factor_row_stores: int = 0
    partial_row_stores: int = 0
    partial_row_loads: int = 0
    pointer_loads: int = 0
    pointer_stores: int = 0
    fma_count: int = 0

    _KIND_FIELD = {
        EventKind.TensorLoadStream: "tensor_element_loads",
        EventKind.TensorStoreElementwise: "tensor_element_stores",
        EventKind.FactorRowLoadRandom: "factor_row_loads",
        EventKind.FactorRowStoreStream: "factor_row_stores",
        EventKind.PartialStoreElementwise: "partial_row_stores",
        EventKind.PartialLoadStream: "partial_row_loads",
        EventKind.PointerLoad: "pointer_loads",
        EventKind.PointerStore: "pointer_stores",
    }

    @classmethod
    def from_trace(cls, trace: AccessTrace, fma_count: int = 0) -> "AccessCounters":
        counts = trace.kind_counts()
        c = cls(fma_count=fma_count)
        for kind, name in cls._KIND_FIELD.items():
            setattr(c, name, counts[kind])
        return c

    def __add__(self, other: "AccessCounters") -> "AccessCounters":
        return AccessCounters(**{f.name: getattr(self, f.name) + getattr(other, f.name)
                                 for f in fields(self)})

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class KernelResult(NamedTuple):
    output: FactorMatrix
    trace: AccessTrace
    counters: AccessCounters


# ---------------------------------------------------------------- helpers


def _factor_map(
    factors: Sequence[FactorLike], tensor: SparseTensorCOO, output_mode: int
) -> tuple[dict[int, np.ndarray], int]:
    """Resolve the input factors by mode and check their shapes.

    Accepts ``FactorMatrix`` objects in any order (matched by ``.mode``), or a
    length-N list of arrays indexed by mode whose output-mode slot is ignored.
    """
    n = tensor.num_modes
    if not 0 <= output_mode < n:
        raise ValueError(f"output mode {output_mode} out of range")
    mats: dict[int, np.ndarray] = {}
    if all(isinstance(f, FactorMatrix) for f in factors):
        for f in factors:
            mats[f.mode] = f.data
    else:
        if len(factors) != n:
            raise ValueError("plain-array factors must be a length-N list indexed by mode")
        for m, f in enumerate(factors):
            if f is not None:
                mats[m] = f.data if isinstance(f, FactorMatrix) else np.asarray(f, dtype=np.float64)
    mats.pop(output_mode, None)
    missing = [m for m in range(n) if m != output_mode and m not in mats]
    if missing:
        raise ValueError(f"missing input factor for modes {missing}")
    ranks = {a.shape[1] for a in mats.values()}
    if len(ranks) != 1:
        raise ValueError(f"input factors disagree on rank: {sorted(ranks)}")
    for m, a in mats.items():
        if a.ndim != 2 or a.shape[0] != tensor.mode_lengths[m]:
            raise ValueError(
                f"factor for mode {m} has shape {a.shape}, expected "
                f"({tensor.mode_lengths[m]}, R)"
            )
    return mats, ranks.pop()


def _check_sorted(tensor: SparseTensorCOO, mode: int) -> None:
    if tensor.sort_mode != mode:
        raise ValueError(
            f"tensor must be sorted by mode {mode} (sort_mode={tensor.sort_mode})"
        )


def khatri_rao(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Column-wise Kronecker product; the first matrix varies slowest."""
    out = mats[0]
    for b in mats[1:]:
        out = np.einsum("ir,jr->ijr", out, b).reshape(-1, out.shape[1])
    return out


# ---------------------------------------------------------------- reference paths


def mttkrp_coo(
    tensor: SparseTensorCOO, factors: Sequence[FactorLike], output_mode: int
) -> FactorMatrix:
    """Sequential COO MTTKRP, accumulating in nonzero-list order."""
    mats, rank = _factor_map(factors, tensor, output_mode)
    others = sorted(mats)
    out = np.zeros((tensor.mode_lengths[output_mode], rank))
    for c, v in zip(tensor.coords, tensor.values):
        row = np.full(rank, v)
        for m in others:
            row = row * mats[m][c[m]]
        out[c[output_mode]] += row
    return FactorMatrix(output_mode, out)


def dense_oracle(
    tensor: SparseTensorCOO,
    factors: Sequence[FactorLike],
    output_mode: int,
    limit: int = 10**6,
) -> FactorMatrix:
    """Densify, matricize along ``output_mode`` and multiply by the Khatri-Rao product."""
    mats, _ = _factor_map(factors, tensor, output_mode)
    dense = tensor.to_dense(limit)
    others = [m for m in range(tensor.num_modes) if m != output_mode]
    unfolded = np.moveaxis(dense, output_mode, 0).reshape(dense.shape[output_mode], -1)
    return FactorMatrix(output_mode, unfolded @ khatri_rao([mats[m] for m in others]))


# ---------------------------------------------------------------- instrumented kernels


def _approach1(
    tensor: SparseTensorCOO,
    mats: dict[int, np.ndarray],
    rank: int,
    output_mode: int,
    amap: AddressMap,
    rec: TraceRecorder,
    copy: int,
) -> np.ndarray:
    inputs = sorted(mats)
    row_bytes = amap.row_bytes
    elem = amap.element_bytes
    rows_out = tensor.mode_lengths[output_mode]
    out = np.zeros((rows_out, rank))
    coords, values = tensor.coords, tensor.values
    z, nnz = 0, tensor.nnz
    for i in range(rows_out):
        acc = np.zeros(rank)
        while z < nnz and coords[z, output_mode] == i:
            c = coords[z]
            rec.emit(EventKind.TensorLoadStream, amap.tensor_element(z, copy), elem)
            row = np.full(rank, values[z])
            for m in inputs:
                rec.emit(EventKind.FactorRowLoadRandom, amap.factor_row(m, c[m]), row_bytes)
                row = row * mats[m][c[m]]
            acc += row
            z += 1
        out[i] = acc
        rec.emit(EventKind.FactorRowStoreStream, amap.factor_row(output_mode, i), row_bytes)
    return out


def mttkrp_approach1(
    tensor: SparseTensorCOO,
    factors: Sequence[FactorLike],
    output_mode: int,
    widths: ElementWidths = ElementWidths(),
) -> KernelResult:
    """Output-mode-ordered traversal: no partial sums leave the chip.

    Requires the tensor sorted by ``output_mode``. Every output row is stored
    once, including rows no nonzero touches.
    """
    _check_sorted(tensor, output_mode)
    mats, rank = _factor_map(factors, tensor, output_mode)
    amap = AddressMap.build(tensor, rank, widths)
    rec = TraceRecorder(amap.regions)
    out = _approach1(tensor, mats, rank, output_mode, amap, rec, copy=0)
    trace = rec.build()
    fma = tensor.num_modes * tensor.nnz * rank
    return KernelResult(FactorMatrix(output_mode, out), trace,
                        AccessCounters.from_trace(trace, fma))


def mttkrp_approach2(
    tensor: SparseTensorCOO,
    factors: Sequence[FactorLike],
    output_mode: int,
    input_mode: int,
    widths: ElementWidths = ElementWidths(),
) -> KernelResult:
    """Input-mode-ordered traversal with partial sums spilled to external memory.

    Phase one walks input rows: each row of the ``input_mode`` factor is loaded
    once, then every incident nonzero produces one partial row that is stored
    element-wise. Phase two reloads the partials grouped by output coordinate
    and stores each accumulated output row.
    """
    if input_mode == output_mode:
        raise ValueError("input_mode must differ from output_mode")
    _check_sorted(tensor, input_mode)
    mats, rank = _factor_map(factors, tensor, output_mode)
    nnz = tensor.nnz
    amap = AddressMap.build(tensor, rank, widths, partial_rows=nnz)
    rec = TraceRecorder(amap.regions)
    row_bytes, elem = amap.row_bytes, amap.element_bytes
    rest = [m for m in sorted(mats) if m != input_mode]
    coords, values = tensor.coords, tensor.values

    partials = np.zeros((nnz, rank))
    z = 0
    for j in range(tensor.mode_lengths[input_mode]):
        rec.emit(EventKind.FactorRowLoadRandom, amap.factor_row(input_mode, j), row_bytes)
        b_row = mats[input_mode][j]
        while z < nnz and coords[z, input_mode] == j:
            c = coords[z]
            rec.emit(EventKind.TensorLoadStream, amap.tensor_element(z), elem)
            row = values[z] * b_row
            for m in rest:
                rec.emit(EventKind.FactorRowLoadRandom, amap.factor_row(m, c[m]), row_bytes)
                row = row * mats[m][c[m]]
            partials[z] = row
            rec.emit(EventKind.PartialStoreElementwise, amap.partial_row(z), row_bytes)
            z += 1

    rows_out = tensor.mode_lengths[output_mode]
    out = np.zeros((rows_out, rank))
    slots = np.argsort(coords[:, output_mode], kind="stable")
    k = 0
    for i in range(rows_out):
        acc = np.zeros(rank)
        while k < nnz and coords[slots[k], output_mode] == i:
            s = int(slots[k])
            rec.emit(EventKind.PartialLoadStream, amap.partial_row(s), row_bytes)
            acc += partials[s]
            k += 1
        out[i] = acc
        rec.emit(EventKind.FactorRowStoreStream, amap.factor_row(output_mode, i), row_bytes)

    trace = rec.build()
    fma = tensor.num_modes * nnz * rank
    return KernelResult(FactorMatrix(output_mode, out), trace,
                        AccessCounters.from_trace(trace, fma))


def _check_partitions(partitions: Sequence[Partition], length: int) -> None:
    expect = 0
    for p in partitions:
        if p.start != expect or p.stop <= p.start:
            raise ValueError(f"partitions must tile [0, {length}) contiguously; bad {p}")
        expect = p.stop
    if expect != length:
        raise ValueError(f"partitions cover [0, {expect}) but the mode has {length} coordinates")


def _remap(
    tensor: SparseTensorCOO,
    target_mode: int,
    capacity: int,
    amap: AddressMap,
    rec: TraceRecorder,
) -> SparseTensorCOO:
    coords = tensor.coords
    order = np.argsort(coords[:, target_mode], kind="stable")
    position = np.empty_like(order)
    position[order] = np.arange(order.shape[0])
    elem = amap.element_bytes
    resident = tensor.mode_lengths[target_mode] <= capacity
    table: OrderedDict[int, None] = OrderedDict()
    for z in range(tensor.nnz):
        rec.emit(EventKind.TensorLoadStream, amap.tensor_element(z, 0), elem)
        c = int(coords[z, target_mode])
        if not resident:
            if c in table:
                table.move_to_end(c)
            else:
                if len(table) >= capacity:
                    victim, _ = table.popitem(last=False)
                    rec.emit(EventKind.PointerStore, amap.pointer(victim, POINTER_BYTES), POINTER_BYTES)
                rec.emit(EventKind.PointerLoad, amap.pointer(c, POINTER_BYTES), POINTER_BYTES)
                table[c] = None
        rec.emit(EventKind.TensorStoreElementwise, amap.tensor_element(int(position[z]), 1), elem)
    return tensor.permuted(order, target_mode)


def remap_tensor(
    tensor: SparseTensorCOO,
    target_mode: int,
    partitions: Sequence[Partition],
    max_pointers: Optional[int] = None,
    widths: ElementWidths = ElementWidths(),
    rank: int = 1,
) -> tuple[SparseTensorCOO, AccessTrace]:
    """Reorder the nonzero stream into ``target_mode`` coordinate order.

    One streaming pass: each nonzero is loaded, its bucket pointer looked up,
    and the element stored at the pointer. The result keeps arrival order
    inside each coordinate bucket. Bucket start offsets are assumed known
    (a per-mode histogram is tensor metadata).

    The pointer table holds ``max_pointers`` entries on chip (default: the
    widest partition). When the mode has more coordinates than that, the
    table is managed LRU and every miss emits a ``PointerLoad``, every
    eviction a ``PointerStore``.
    """
    length = tensor.mode_lengths[target_mode]
    _check_partitions(partitions, length)
    capacity = max_pointers if max_pointers is not None else max(p.span for p in partitions)
    if capacity < 1:
        raise ValueError("max_pointers must be >= 1")
    amap = AddressMap.build(tensor, rank, widths, pointer_entries=length)
    rec = TraceRecorder(amap.regions)
    out = _remap(tensor, target_mode, capacity, amap, rec)
    return out, rec.build()


def mttkrp_with_remap(
    tensor: SparseTensorCOO,
    output_mode: int,
    factors: Sequence[FactorLike],
    max_pointers: int,
    widths: ElementWidths = ElementWidths(),
) -> KernelResult:
    """Remap into output-mode order, then run the approach-1 pass on the copy."""
    mats, rank = _factor_map(factors, tensor, output_mode)
    partitions = partition_output_mode(tensor, output_mode, max_pointers)
    _check_partitions(partitions, tensor.mode_lengths[output_mode])
    amap = AddressMap.build(tensor, rank, widths,
                            pointer_entries=tensor.mode_lengths[output_mode])
    rec = TraceRecorder(amap.regions)
    remapped = _remap(tensor, output_mode, max_pointers, amap, rec)
    out = _approach1(remapped, mats, rank, output_mode, amap, rec, copy=1)
    trace = rec.build()
    fma = tensor.num_modes * tensor.nnz * rank
    return KernelResult(FactorMatrix(output_mode, out), trace,
                        AccessCounters.from_trace(trace, fma))


APPROACHES = ("coo", "a1", "a2", "remap")


def run_kernel(
    tensor: SparseTensorCOO,
    factors: Sequence[FactorLike],
    output_mode: int,
    approach: str,
    input_mode: Optional[int] = None,
    max_pointers: Optional[int] = None,
    widths: ElementWidths = ElementWidths(),
) -> KernelResult:
    """Dispatch by approach name, sorting the tensor as the approach needs.

    ``a2`` defaults to input mode ``(output_mode + 1) % N``. ``remap`` starts
    from the tensor ordered by the previous mode, as when modes are updated in
    sequence, and defaults to a pointer table large enough for the whole mode.
    ``coo`` has no instrumentation and returns an empty trace.
    """
    n = tensor.num_modes
    if approach == "coo":
        out = mttkrp_coo(tensor, factors, output_mode)
        _, rank = _factor_map(factors, tensor, output_mode)
        return KernelResult(out, AccessTrace.empty(),
                            AccessCounters(fma_count=n * tensor.nnz * rank))
    if approach == "a1":
        return mttkrp_approach1(sort_by_mode(tensor, output_mode), factors, output_mode, widths)
    if approach == "a2":
        inp = (output_mode + 1) % n if input_mode is None else input_mode
        return mttkrp_approach2(sort_by_mode(tensor, inp), factors, output_mode, inp, widths)
    if approach == "remap":
        src = sort_by_mode(tensor, (output_mode - 1) % n)
        cap = tensor.mode_lengths[output_mode] if max_pointers is None else max_pointers
        return mttkrp_with_remap(src, output_mode, factors, cap, widths)
    raise ValueError(f"unknown approach {approach!r}; expected one of {APPROACHES}")


# ---------------------------------------------------------------- CP-ALS


@dataclass
class CPResult:
    factors: list[FactorMatrix]
    weights: np.ndarray
    fit_history: list[float]
    iterations: int
    regularized: bool = False


def _normalize(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(a, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    return a / safe, norms


def cp_fit(tensor: SparseTensorCOO, factors: Sequence[np.ndarray], weights: np.ndarray) -> float:
    """``1 - ||X - M|| / ||X||`` without forming the model densely.

    The residual is split into the part on the nonzero support, summed
    directly, and the model mass off the support, ``||M||^2`` minus the
    on-support mass. Summing the first part directly keeps near-perfect fits
    accurate; the naive ``||X||^2 + ||M||^2 - 2<X, M>`` loses about half the
    digits to cancellation.
    """
    norm_x2 = float(np.dot(tensor.values, tensor.values))
    gram = np.ones((len(weights), len(weights)))
    for a in factors:
        gram *= a.T @ a
    norm_m2 = float(weights @ gram @ weights)
    rows = np.ones((tensor.nnz, len(weights)))
    for m, a in enumerate(factors):
        rows *= a[tensor.coords[:, m]]
    model_nz = rows @ weights
    diff = tensor.values - model_nz
    on_support = float(diff @ diff)
    if tensor.nnz == math.prod(tensor.mode_lengths):
        off_support = 0.0
    else:
        off_support = max(norm_m2 - float(model_nz @ model_nz), 0.0)
    return 1.0 - math.sqrt(on_support + off_support) / math.sqrt(norm_x2)


def cp_als(
    tensor: SparseTensorCOO,
    rank: int,
    max_iters: int = 50,
    fit_tolerance: float = 1e-6,
    seed: int = 0,
    callback: Optional[Callable[[int, list[FactorMatrix], np.ndarray], None]] = None,
) -> CPResult:
    """CP decomposition by alternating least squares.

    Each mode update is an MTTKRP followed by a solve against the Hadamard
    product of the other factors' Gram matrices (ridge ``1e-12`` when that
    matrix is singular). Columns are normalized after every update and their
    norms kept as the weights.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if tensor.nnz == 0:
        raise ValueError("cannot decompose an empty tensor")
    n = tensor.num_modes
    rng = np.random.default_rng(seed)
    mats = [rng.random((d, rank)) for d in tensor.mode_lengths]
    weights = np.ones(rank)
    regularized = False
    history: list[float] = []
    it = 0
    for it in range(1, max_iters + 1):
        for m in range(n):
            mk = mttkrp_coo(tensor, mats, m).data
            gram = np.ones((rank, rank))
            for k in range(n):
                if k != m:
                    gram *= mats[k].T @ mats[k]
            try:
                if np.linalg.cond(gram) > 1e14:
                    raise np.linalg.LinAlgError("ill-conditioned Gram matrix")
                new = np.linalg.solve(gram, mk.T).T
            except np.linalg.LinAlgError:
                regularized = True
                new = np.linalg.solve(gram + 1e-12 * np.eye(rank), mk.T).T
            mats[m], weights = _normalize(new)
        fms = [FactorMatrix(m, a, weights) for m, a in enumerate(mats)]
        history.append(cp_fit(tensor, mats, weights))
        if callback is not None:
            callback(it, fms, weights)
        if len(history) > 1 and abs(history[-1] - history[-2]) < fit_tolerance:
            break
    if regularized:
        warnings.warn("singular Gram matrix; used ridge-regularized solve", RuntimeWarning)
    return CPResult(
        factors=[FactorMatrix(m, a, weights) for m, a in enumerate(mats)],
        weights=weights,
        fit_history=history,
        iterations=it,
        regularized=regularized,
    )
