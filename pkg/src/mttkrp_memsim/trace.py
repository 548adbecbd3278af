"""External-memory access events, the flat address map, and trace files."""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .tensor import ElementWidths, SparseTensorCOO

TEXT_MAGIC = "# mttkrp-trace v1"


class EventKind(enum.IntEnum):
    TensorLoadStream = 0
    TensorStoreElementwise = 1
    FactorRowLoadRandom = 2
    FactorRowStoreStream = 3
    PartialStoreElementwise = 4
    PartialLoadStream = 5
    PointerLoad = 6
    PointerStore = 7

    @property
    def elementwise(self) -> bool:
        return self in _ELEMENTWISE


_ELEMENTWISE = frozenset(
    {
        EventKind.TensorStoreElementwise,
        EventKind.PartialStoreElementwise,
        EventKind.PointerLoad,
        EventKind.PointerStore,
    }
)


def parse_kind(token: str) -> EventKind:
    if token.isdigit():
        return EventKind(int(token))
    try:
        return EventKind[token]
    except KeyError:
        raise ValueError(f"unknown event kind {token!r}") from None


@dataclass(frozen=True)
class AccessEvent:
    sequence: int
    kind: EventKind
    address: int
    size: int


@dataclass(frozen=True)
class Region:
    name: str
    base: int
    size: int

    @property
    def end(self) -> int:
        return self.base + self.size

    def __contains__(self, address: int) -> bool:
        return self.base <= address < self.end


def _align(x: int, a: int) -> int:
    return -(-x // a) * a


@dataclass(frozen=True)
class AddressMap:
    """Flat byte layout of everything a kernel run touches.

    Regions follow each other in a fixed order, each base rounded up to
    ``align`` bytes: two tensor copies (the remapper writes the second),
    the factor matrices in mode order, the partial-sum area, then the
    address-pointer table. Empty regions take no space.
    """

    regions: tuple[Region, ...]
    rank: int
    widths: ElementWidths
    num_modes: int

    @classmethod
    def build(
        cls,
        tensor: SparseTensorCOO,
        rank: int,
        widths: ElementWidths = ElementWidths(),
        partial_rows: int = 0,
        pointer_entries: int = 0,
        pointer_bytes: int = 4,
        align: int = 64,
    ) -> "AddressMap":
        n = tensor.num_modes
        tbytes = tensor.nnz * widths.tensor_element(n)
        sizes = [("tensor0", tbytes), ("tensor1", tbytes)]
        sizes += [(f"factor{m}", d * rank * widths.matrix) for m, d in enumerate(tensor.mode_lengths)]
        sizes += [("partial", partial_rows * rank * widths.matrix)]
        sizes += [("pointers", pointer_entries * pointer_bytes)]
        regions, base = [], 0
        for name, size in sizes:
            regions.append(Region(name, base, size))
            base = _align(base + size, align)
        return cls(tuple(regions), rank, widths, n)

    def region(self, name: str) -> Region:
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def row_bytes(self) -> int:
        return self.rank * self.widths.matrix

    @property
    def element_bytes(self) -> int:
        return self.widths.tensor_element(self.num_modes)

    def tensor_element(self, z: int, copy: int = 0) -> int:
        return self.region(f"tensor{copy}").base + z * self.element_bytes

    def factor_row(self, mode: int, row: int) -> int:
        return self.region(f"factor{mode}").base + row * self.row_bytes

    def partial_row(self, slot: int) -> int:
        return self.region("partial").base + slot * self.row_bytes

    def pointer(self, coord: int, pointer_bytes: int = 4) -> int:
        return self.region("pointers").base + coord * pointer_bytes


@dataclass(frozen=True, eq=False)
class AccessTrace:
    """Ordered external-memory events, stored column-wise.

    ``regions`` is optional layout metadata (kept by the text format, dropped
    by the binary one). The simulator uses it to size the remapper's pointer
    table and to split cache sets between factor matrices.
    """

    sequence: np.ndarray
    kind: np.ndarray
    address: np.ndarray
    size: np.ndarray
    regions: tuple[Region, ...] = ()

    def __post_init__(self) -> None:
        cols = [np.asarray(getattr(self, f), dtype=np.int64).reshape(-1)
                for f in ("sequence", "kind", "address", "size")]
        if len({c.shape[0] for c in cols}) != 1:
            raise ValueError("trace columns differ in length")
        seq, kind, addr, size = cols
        if size.size and size.min() <= 0:
            raise ValueError("event sizes must be positive")
        if seq.size > 1 and np.any(np.diff(seq) <= 0):
            raise ValueError("sequence numbers must be strictly increasing")
        if kind.size and (kind.min() < 0 or kind.max() >= len(EventKind)):
            raise ValueError("unknown event kind code")
        for name, col in zip(("sequence", "kind", "address", "size"), cols):
            col.setflags(write=False)
            object.__setattr__(self, name, col)
        object.__setattr__(self, "regions", tuple(self.regions))

    @classmethod
    def empty(cls) -> "AccessTrace":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z)

    def __len__(self) -> int:
        return int(self.sequence.shape[0])

    def __iter__(self) -> Iterator[AccessEvent]:
        for s, k, a, n in zip(self.sequence.tolist(), self.kind.tolist(),
                              self.address.tolist(), self.size.tolist()):
            yield AccessEvent(s, EventKind(k), a, n)

    def kind_counts(self) -> dict[EventKind, int]:
        counts = np.bincount(self.kind, minlength=len(EventKind))
        return {k: int(counts[k]) for k in EventKind}

    def select(self, kinds: Sequence[EventKind]) -> "AccessTrace":
        mask = np.isin(self.kind, [int(k) for k in kinds])
        return AccessTrace(self.sequence[mask], self.kind[mask], self.address[mask],
                           self.size[mask], self.regions)

    def total_bytes(self) -> int:
        return int(self.size.sum())

    def equals(self, other: "AccessTrace") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("sequence", "kind", "address", "size"))

    # -- serialization

    def to_text(self) -> str:
        out = io.StringIO()
        out.write(TEXT_MAGIC + "\n")
        for r in self.regions:
            out.write(f"# region {r.name} {r.base} {r.size}\n")
        names = [k.name for k in EventKind]
        for s, k, a, n in zip(self.sequence.tolist(), self.kind.tolist(),
                              self.address.tolist(), self.size.tolist()):
            out.write(f"{s} {names[k]} {a} {n}\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "AccessTrace":
        seq, kind, addr, size, regions = [], [], [], [], []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 4 and parts[0] == "region":
                    regions.append(Region(parts[1], int(parts[2]), int(parts[3])))
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: expected 'seq kind address size'")
            try:
                seq.append(int(parts[0]))
                kind.append(int(parse_kind(parts[1])))
                addr.append(int(parts[2]))
                size.append(int(parts[3]))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        return cls(np.array(seq, dtype=np.int64), np.array(kind, dtype=np.int64),
                   np.array(addr, dtype=np.int64), np.array(size, dtype=np.int64),
                   tuple(regions))

    def to_bytes(self) -> bytes:
        """Fixed 32-byte records of little-endian int64 ``seq kind address size``."""
        rec = np.stack([self.sequence, self.kind, self.address, self.size], axis=1)
        return rec.astype("<i8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "AccessTrace":
        if len(data) % 32:
            raise ValueError("binary trace length is not a multiple of 32 bytes")
        rec = np.frombuffer(data, dtype="<i8").reshape(-1, 4).astype(np.int64)
        return cls(rec[:, 0], rec[:, 1], rec[:, 2], rec[:, 3])

    def save(self, path, binary: Optional[bool] = None) -> None:
        path = str(path)
        if binary is None:
            binary = path.endswith(".bin")
        if binary:
            with open(path, "wb") as fh:
                fh.write(self.to_bytes())
        else:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "AccessTrace":
        with open(path, "rb") as fh:
            data = fh.read()
        if str(path).endswith(".bin"):
            return cls.from_bytes(data)
        return cls.from_text(data.decode("utf-8"))


@dataclass
class TraceRecorder:
    """Accumulates events in issue order and tallies them per kind."""

    regions: tuple[Region, ...] = ()
    start: int = 0
    _kind: list[int] = field(default_factory=list)
    _addr: list[int] = field(default_factory=list)
    _size: list[int] = field(default_factory=list)

    def emit(self, kind: EventKind, address: int, size: int) -> None:
        self._kind.append(int(kind))
        self._addr.append(int(address))
        self._size.append(int(size))

    def __len__(self) -> int:
        return len(self._kind)

    def build(self) -> AccessTrace:
        n = len(self._kind)
        return AccessTrace(
            np.arange(self.start, self.start + n, dtype=np.int64),
            np.array(self._kind, dtype=np.int64),
            np.array(self._addr, dtype=np.int64),
            np.array(self._size, dtype=np.int64),
            self.regions,
        )


def concat_traces(traces: Sequence[AccessTrace]) -> AccessTrace:
    """Join traces end to end, renumbering sequence numbers from zero."""
    traces = [t for t in traces]
    if not traces:
        return AccessTrace.empty()
    kind = np.concatenate([t.kind for t in traces])
    regions: list[Region] = []
    for t in traces:
        for r in t.regions:
            if r not in regions:
                regions.append(r)
    return AccessTrace(
        np.arange(kind.shape[0], dtype=np.int64),
        kind,
        np.concatenate([t.address for t in traces]),
        np.concatenate([t.size for t in traces]),
        tuple(regions),
    )
