"""Closed-form operation and access counts, and their reconciliation with kernels.

The access unit is one tensor element or one factor-matrix element: a row of
rank R counts as R accesses. Pointer-table spills are outside this accounting
and are reported separately.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Union

from .kernels import AccessCounters
from .tensor import ElementWidths

Approach = Union[int, str]

_TAGS = {1: "a1", "1": "a1", "a1": "a1", 2: "a2", "2": "a2", "a2": "a2",
         "remap": "remap", "1-with-remap": "remap"}


def approach_tag(approach: Approach) -> str:
    try:
        return _TAGS[approach]
    except (KeyError, TypeError):
        raise ValueError(f"invalid approach {approach!r}") from None


def predicted_computations(num_modes: int, nnz: int, rank: int) -> int:
    return num_modes * nnz * rank


def predicted_accesses(approach: Approach, num_modes: int, nnz: int, rank: int,
                       boundary_length: int) -> int:
    """Element-granular external accesses for one mode.

    ``boundary_length`` is the output-mode length for approach 1 and the
    input-mode length for approach 2. For a remapped run add ``2 * nnz``.
    """
    tag = approach_tag(approach)
    if tag == "a1":
        return nnz + (num_modes - 1) * nnz * rank + boundary_length * rank
    if tag == "a2":
        return nnz + num_modes * nnz * rank + boundary_length * rank
    raise ValueError("predicted_accesses takes approach 1 or 2; add 2*nnz for remapping")


def remap_overhead_ratio(num_modes: int, rank: int) -> float:
    """Large-tensor approximation of the remapping share of traffic."""
    if num_modes < 2:
        raise ValueError("need at least two modes")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    return 2.0 / (1 + (num_modes - 1) * rank)


def exact_remap_overhead_ratio(num_modes: int, nnz: int, rank: int, out_length: int) -> float:
    if nnz == 0:
        return 0.0
    return 2.0 * nnz / predicted_accesses(1, num_modes, nnz, rank, out_length)


@dataclass(frozen=True)
class CostPrediction:
    approach: str
    total_computations: int
    total_accesses: int
    partial_sum_elements: int
    remap_overhead_ratio: float
    total_bytes: int

    def to_json(self) -> dict:
        return asdict(self)


def predict(
    approach: Approach,
    num_modes: int,
    nnz: int,
    rank: int,
    out_length: int,
    in_length: Optional[int] = None,
    widths: ElementWidths = ElementWidths(),
) -> CostPrediction:
    tag = approach_tag(approach)
    tensor_bytes = widths.tensor_element(num_modes)
    if tag == "a2":
        if in_length is None:
            raise ValueError("approach 2 needs the input-mode length")
        total = predicted_accesses(2, num_modes, nnz, rank, in_length)
        partial = nnz * rank
        ratio = 0.0
    else:
        total = predicted_accesses(1, num_modes, nnz, rank, out_length)
        partial = 0
        ratio = exact_remap_overhead_ratio(num_modes, nnz, rank, out_length) if tag == "remap" else 0.0
    tensor_accesses = nnz * (3 if tag == "remap" else 1)
    if tag == "remap":
        total += 2 * nnz
    matrix_elements = total - tensor_accesses
    return CostPrediction(
        approach=tag,
        total_computations=predicted_computations(num_modes, nnz, rank),
        total_accesses=total,
        partial_sum_elements=partial,
        remap_overhead_ratio=ratio,
        total_bytes=tensor_accesses * tensor_bytes + matrix_elements * widths.matrix,
    )


def measured_accesses(counters: AccessCounters, approach: Approach, rank: int) -> int:
    """Element-granular total from kernel counters, in the accounting the closed forms use.

    The approach-2 formula has no term for the final output-row stores, so
    they are left out of its total here and reported by
    :func:`unaccounted_accesses`.
    """
    tag = approach_tag(approach)
    c = counters
    tensor = c.tensor_element_loads + c.tensor_element_stores
    if tag == "a2":
        rows = c.factor_row_loads + c.partial_row_stores + c.partial_row_loads
    else:
        rows = c.factor_row_loads + c.factor_row_stores + c.partial_row_stores + c.partial_row_loads
    return tensor + rows * rank


def unaccounted_accesses(counters: AccessCounters, approach: Approach, rank: int) -> dict:
    """Traffic the closed forms leave out: pointer spills, and output stores for approach 2."""
    tag = approach_tag(approach)
    out = {"pointer_elements": counters.pointer_loads + counters.pointer_stores}
    out["output_store_elements"] = counters.factor_row_stores * rank if tag == "a2" else 0
    return out


@dataclass(frozen=True)
class Reconciliation:
    approach: str
    predicted: CostPrediction
    measured_accesses: int
    measured_computations: int
    unaccounted: dict

    @property
    def ok(self) -> bool:
        return (self.measured_accesses == self.predicted.total_accesses
                and self.measured_computations == self.predicted.total_computations)

    def to_json(self) -> dict:
        return {
            "approach": self.approach,
            "predicted": self.predicted.to_json(),
            "measured_accesses": self.measured_accesses,
            "measured_computations": self.measured_computations,
            "unaccounted": self.unaccounted,
            "ok": self.ok,
        }


def reconcile(
    counters: AccessCounters,
    approach: Approach,
    num_modes: int,
    nnz: int,
    rank: int,
    out_length: int,
    in_length: Optional[int] = None,
    widths: ElementWidths = ElementWidths(),
) -> Reconciliation:
    tag = approach_tag(approach)
    pred = predict(tag, num_modes, nnz, rank, out_length, in_length, widths)
    return Reconciliation(
        approach=tag,
        predicted=pred,
        measured_accesses=measured_accesses(counters, tag, rank),
        measured_computations=counters.fma_count,
        unaccounted=unaccounted_accesses(counters, tag, rank),
    )


def overhead_table(modes=(3, 4, 5), ranks=(16, 17, 32, 64), threshold: float = 0.06) -> list[dict]:
    """Remapping overhead approximation over a grid, flagged against ``threshold``."""
    rows = []
    for n in modes:
        for r in ranks:
            ratio = remap_overhead_ratio(n, r)
            rows.append({"modes": n, "rank": r, "ratio": ratio, "below_threshold": ratio < threshold})
    return rows
