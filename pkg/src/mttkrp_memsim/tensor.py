"""Sparse COO tensors, factor matrices and the hypergraph view of nonzeros.

Coordinates are 0-based everywhere inside the package. FROSTT ``.tns`` files
are 1-based and get converted in :func:`parse_frostt` / :func:`write_frostt`.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO, Union

import numpy as np


class FrosttParseError(ValueError):
    """Malformed ``.tns`` input. Carries the offending 1-based line number."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ElementWidths:
    """Byte widths of stored elements.

    Defaults follow 32-bit addressing: every coordinate, every value and every
    factor-matrix element takes 4 bytes.
    """

    coord: int = 4
    value: int = 4
    matrix: int = 4

    def tensor_element(self, num_modes: int) -> int:
        return num_modes * self.coord + self.value

    def header(self, num_modes: int) -> int:
        # mode count followed by one length per mode
        return (1 + num_modes) * self.coord


@dataclass(frozen=True, eq=False)
class SparseTensorCOO:
    """N-mode coordinate-format tensor.

    ``coords`` is an ``(nnz, N)`` integer array and ``values`` an ``(nnz,)``
    float array; row ``z`` of both is nonzero ``z``. ``sort_mode`` records the
    mode the nonzeros are currently ordered by, if any.
    """

    mode_lengths: tuple[int, ...]
    coords: np.ndarray
    values: np.ndarray
    sort_mode: Optional[int] = None

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.mode_lengths)
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"mode lengths must be positive, got {dims}")
        n = len(dims)
        coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, n)
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if coords.shape[0] != values.shape[0]:
            raise ValueError("coords and values disagree on nnz")
        if coords.size and ((coords < 0).any() or (coords >= np.array(dims)).any()):
            raise ValueError("coordinate outside mode length")
        if self.sort_mode is not None:
            if not 0 <= self.sort_mode < n:
                raise ValueError(f"sort_mode {self.sort_mode} out of range")
            if np.any(np.diff(coords[:, self.sort_mode]) < 0):
                raise ValueError(f"nonzeros are not ordered by mode {self.sort_mode}")
        object.__setattr__(self, "mode_lengths", dims)
        object.__setattr__(self, "coords", _frozen(coords))
        object.__setattr__(self, "values", _frozen(values))

    @property
    def num_modes(self) -> int:
        return len(self.mode_lengths)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def __len__(self) -> int:
        return self.nnz

    def __iter__(self):
        for c, v in zip(self.coords, self.values):
            yield tuple(int(x) for x in c), float(v)

    def has_duplicates(self) -> bool:
        if self.nnz < 2:
            return False
        return np.unique(self.coords, axis=0).shape[0] != self.nnz

    def equals(self, other: "SparseTensorCOO") -> bool:
        """Same shape, same nonzeros in the same order, bit-equal values."""
        return (
            self.mode_lengths == other.mode_lengths
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.values.view(np.int64), other.values.view(np.int64))
        )

    def multiset_key(self) -> list[tuple]:
        """Order-independent description of the nonzeros (for permutation checks)."""
        return sorted(
            (tuple(int(x) for x in c), float(v)) for c, v in zip(self.coords, self.values)
        )

    def permuted(self, order: np.ndarray, sort_mode: Optional[int]) -> "SparseTensorCOO":
        return SparseTensorCOO(
            self.mode_lengths, self.coords[order], self.values[order], sort_mode
        )

    def to_dense(self, limit: int = 10**6) -> np.ndarray:
        size = math.prod(self.mode_lengths)
        if size > limit:
            raise ValueError(f"dense size {size} exceeds guard {limit}")
        dense = np.zeros(self.mode_lengths)
        np.add.at(dense, tuple(self.coords.T), self.values)
        return dense

    @classmethod
    def from_entries(
        cls,
        entries: Iterable[tuple[Sequence[int], float]],
        mode_lengths: Sequence[int],
        sort_mode: Optional[int] = None,
    ) -> "SparseTensorCOO":
        entries = list(entries)
        n = len(mode_lengths)
        coords = np.array([c for c, _ in entries], dtype=np.int64).reshape(-1, n)
        values = np.array([v for _, v in entries], dtype=np.float64)
        return cls(tuple(mode_lengths), coords, values, sort_mode)


@dataclass(frozen=True, eq=False)
class FactorMatrix:
    """Dense ``rows x rank`` factor for one mode, optionally with column norms."""

    mode: int
    data: np.ndarray
    norms: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("factor data must be a 2-D matrix")
        object.__setattr__(self, "data", _frozen(data))
        if self.norms is not None:
            norms = np.asarray(self.norms, dtype=np.float64).reshape(-1)
            if norms.shape[0] != data.shape[1]:
                raise ValueError("norms length must equal rank")
            col = np.linalg.norm(data, axis=0)
            # zero columns stay zero; they carry a zero weight
            live = norms != 0
            if np.any(np.abs(col[live] - 1.0) > 1e-9):
                raise ValueError("columns must have unit 2-norm when norms are given")
            object.__setattr__(self, "norms", _frozen(norms))

    @property
    def rows(self) -> int:
        return int(self.data.shape[0])

    @property
    def rank(self) -> int:
        return int(self.data.shape[1])


@dataclass(frozen=True)
class Hypergraph:
    """Vertices are all mode indices, one hyperedge per nonzero.

    ``pins[e, m]`` is the vertex of coordinate ``m`` of hyperedge ``e``,
    offset by the lengths of the preceding modes.
    """

    num_vertices: int
    pins: np.ndarray
    mode_offsets: tuple[int, ...]

    @property
    def num_hyperedges(self) -> int:
        return int(self.pins.shape[0])

    def vertex_degrees(self) -> np.ndarray:
        return np.bincount(self.pins.ravel(), minlength=self.num_vertices)


@dataclass(frozen=True)
class TensorStats:
    num_modes: int
    mode_lengths: tuple[int, ...]
    nnz: int
    density: float
    rank: int
    tensor_bytes: int
    factor_matrix_bytes: tuple[int, ...]
    widths: ElementWidths = field(default_factory=ElementWidths)

    def to_json(self) -> dict:
        return {
            "modes": self.num_modes,
            "dims": list(self.mode_lengths),
            "nnz": self.nnz,
            "density": self.density,
            "rank": self.rank,
            "tensor_bytes": self.tensor_bytes,
            "factor_bytes": list(self.factor_matrix_bytes),
        }


@dataclass(frozen=True)
class Partition:
    """Half-open coordinate range ``[start, stop)`` holding ``nnz`` nonzeros."""

    start: int
    stop: int
    nnz: int

    @property
    def span(self) -> int:
        return self.stop - self.start


# ---------------------------------------------------------------- FROSTT I/O


def parse_frostt(
    source: Union[TextIO, Iterable[str], str],
    num_modes: Optional[int] = None,
    dims: Optional[Sequence[int]] = None,
    merge_duplicates: bool = False,
) -> SparseTensorCOO:
    """Read a FROSTT ``.tns`` stream.

    Each data line is ``i_1 ... i_N value`` with 1-based coordinates. Blank
    lines and ``#`` comments are skipped. ``dims`` overrides the inferred mode
    lengths (max coordinate per mode). Duplicate coordinates raise unless
    ``merge_duplicates`` is set, in which case their values are summed.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    if dims is not None:
        dims = tuple(int(d) for d in dims)
        if num_modes is not None and num_modes != len(dims):
            raise FrosttParseError(f"num_modes={num_modes} disagrees with dims {dims}")
        num_modes = len(dims)

    coords: list[list[int]] = []
    values: list[float] = []
    linenos: list[int] = []
    first_line: Optional[int] = None
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if num_modes is None:
            if len(tokens) < 2:
                raise FrosttParseError("need at least one coordinate and a value", lineno)
            num_modes = len(tokens) - 1
            first_line = lineno
        if len(tokens) != num_modes + 1:
            where = f" (mode count set at line {first_line})" if first_line else ""
            raise FrosttParseError(
                f"expected {num_modes + 1} tokens, got {len(tokens)}{where}", lineno
            )
        try:
            idx = [int(t) for t in tokens[:-1]]
        except ValueError:
            raise FrosttParseError(f"non-integer coordinate in {line!r}", lineno) from None
        try:
            val = float(tokens[-1])
        except ValueError:
            raise FrosttParseError(f"non-numeric value {tokens[-1]!r}", lineno) from None
        if min(idx) < 1:
            raise FrosttParseError("coordinates are 1-based and must be >= 1", lineno)
        if dims is not None and any(i > d for i, d in zip(idx, dims)):
            raise FrosttParseError(f"coordinate exceeds dims {dims}", lineno)
        coords.append([i - 1 for i in idx])
        values.append(val)
        linenos.append(lineno)

    if num_modes is None:
        raise FrosttParseError("cannot infer mode count from an empty file")
    c = np.array(coords, dtype=np.int64).reshape(-1, num_modes)
    v = np.array(values, dtype=np.float64)
    if dims is None:
        dims = tuple(int(x) + 1 for x in c.max(axis=0)) if len(c) else (1,) * num_modes

    if len(c) > 1:
        uniq, first, inverse = np.unique(c, axis=0, return_index=True, return_inverse=True)
        if uniq.shape[0] != c.shape[0]:
            if not merge_duplicates:
                seen: dict[tuple, int] = {}
                for z, row in enumerate(map(tuple, c)):
                    if row in seen:
                        raise FrosttParseError(
                            f"duplicate coordinate {tuple(int(i) + 1 for i in row)} "
                            f"(first seen at line {linenos[seen[row]]})",
                            linenos[z],
                        )
                    seen[row] = z
            inverse = inverse.reshape(-1)
            summed = np.zeros(uniq.shape[0])
            np.add.at(summed, inverse, v)
            # keep first-occurrence order
            keep = np.sort(first)
            c = c[keep]
            v = summed[inverse[keep]]
    return SparseTensorCOO(dims, c, v)


def read_frostt(path, **kwargs) -> SparseTensorCOO:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return parse_frostt(fh, **kwargs)
        except FrosttParseError as exc:
            err = FrosttParseError(f"{path}: {exc}")
            err.line = exc.line
            raise err from None


def format_frostt(tensor: SparseTensorCOO) -> str:
    """Serialize to ``.tns`` text; values use 17 significant digits."""
    out = io.StringIO()
    for c, v in zip(tensor.coords, tensor.values):
        out.write(" ".join(str(int(i) + 1) for i in c))
        out.write(f" {float(v):.17g}\n")
    return out.getvalue()


def write_frostt(tensor: SparseTensorCOO, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_frostt(tensor))


# ---------------------------------------------------------------- operations


def sort_by_mode(tensor: SparseTensorCOO, mode: int) -> SparseTensorCOO:
    """Order nonzeros by ``coords[mode]``; ties by the remaining modes ascending."""
    n = tensor.num_modes
    if not 0 <= mode < n:
        raise ValueError(f"mode {mode} out of range for a {n}-mode tensor")
    rest = [m for m in range(n) if m != mode]
    # np.lexsort treats the last key as primary
    keys = [tensor.coords[:, m] for m in reversed(rest)] + [tensor.coords[:, mode]]
    order = np.lexsort(keys) if tensor.nnz else np.arange(0)
    return tensor.permuted(order, mode)


def build_hypergraph(tensor: SparseTensorCOO) -> Hypergraph:
    offsets = np.concatenate(([0], np.cumsum(tensor.mode_lengths)[:-1])).astype(np.int64)
    pins = tensor.coords + offsets
    return Hypergraph(
        num_vertices=int(sum(tensor.mode_lengths)),
        pins=_frozen(pins),
        mode_offsets=tuple(int(o) for o in offsets),
    )


def tensor_stats(
    tensor: SparseTensorCOO, rank: int, widths: ElementWidths = ElementWidths()
) -> TensorStats:
    if rank < 1:
        raise ValueError("rank must be >= 1")
    n = tensor.num_modes
    return TensorStats(
        num_modes=n,
        mode_lengths=tensor.mode_lengths,
        nnz=tensor.nnz,
        density=tensor.nnz / math.prod(tensor.mode_lengths),
        rank=rank,
        tensor_bytes=widths.header(n) + tensor.nnz * widths.tensor_element(n),
        factor_matrix_bytes=tuple(i * rank * widths.matrix for i in tensor.mode_lengths),
        widths=widths,
    )


def _greedy_cuts(
    counts: np.ndarray, length: int, max_pointers: int, budget: float
) -> list[Partition]:
    """One left-to-right sweep over coordinates.

    A partition closes when the next coordinate would exceed ``max_pointers``
    coordinates, or when it already holds nonzeros and adding the next
    coordinate's nonzeros would exceed ``budget``. Only coordinates that hold
    nonzeros are visited; empty stretches are skipped arithmetically.
    """
    parts: list[Partition] = []
    start, cur = 0, 0
    for c in np.flatnonzero(counts):
        c = int(c)
        k = int(counts[c])
        while c - start >= max_pointers:
            parts.append(Partition(start, start + max_pointers, cur))
            start, cur = start + max_pointers, 0
        if cur > 0 and cur + k > budget:
            parts.append(Partition(start, c, cur))
            start, cur = c, 0
        cur += k
    while length - start > max_pointers:
        parts.append(Partition(start, start + max_pointers, cur))
        start, cur = start + max_pointers, 0
    parts.append(Partition(start, length, cur))
    return parts


def _balanced(parts: list[Partition], heaviest: int) -> bool:
    sizes = [p.nnz for p in parts]
    return max(sizes) - min(sizes) <= heaviest


def partition_output_mode(
    tensor: SparseTensorCOO, mode: int, max_pointers: int
) -> list[Partition]:
    """Split ``[0, I_mode)`` into contiguous ranges for the remapper.

    Every range spans at most ``max_pointers`` coordinates, and the spread
    between the fullest and emptiest range never exceeds the nonzero count of
    the heaviest single coordinate. The sweep starts from the minimum number
    of ranges the pointer limit allows and doubles the target count while the
    balance bound fails; a zero budget (one populated coordinate per range)
    always satisfies it.
    """
    if max_pointers < 1:
        raise ValueError("max_pointers must be >= 1")
    length = tensor.mode_lengths[mode]
    counts = np.bincount(tensor.coords[:, mode], minlength=length)
    heaviest = int(counts.max()) if tensor.nnz else 0
    target = -(-length // max_pointers)
    while True:
        parts = _greedy_cuts(counts, length, max_pointers, tensor.nnz / target)
        if _balanced(parts, heaviest):
            return parts
        if target >= length:
            return _greedy_cuts(counts, length, max_pointers, 0.0)
        target = min(2 * target, length)


def pointer_table_bytes(num_coordinates: int, pointer_bits: int = 32) -> int:
    """External storage needed for one address pointer per output coordinate."""
    return num_coordinates * pointer_bits // 8
