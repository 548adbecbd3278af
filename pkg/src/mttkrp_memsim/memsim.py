"""Trace-driven model of the programmable memory controller.

Three engines (Cache Engine, DMA Engine, Tensor Remapper) serve disjoint
slices of the trace. Each engine is a FIFO server in virtual time; engines
run concurrently and the run finishes when the slowest engine drains.
DRAM is reduced to a row-buffer hit/miss latency plus a streaming
bandwidth for bulk data.
"""

from __future__ import annotations

import bisect
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping, Optional

import numpy as np

from .trace import AccessTrace, EventKind, Region

FORMAT_VERSION = 1
ENGINES = ("cache", "dma", "remapper")

DEFAULT_ROUTING: tuple[tuple[str, str], ...] = (
    ("TensorLoadStream", "dma"),
    ("TensorStoreElementwise", "remapper"),
    ("FactorRowLoadRandom", "cache"),
    ("FactorRowStoreStream", "dma"),
    ("PartialStoreElementwise", "dma"),
    ("PartialLoadStream", "dma"),
    ("PointerLoad", "remapper"),
    ("PointerStore", "remapper"),
)


class ConfigError(ValueError):
    pass


class RoutingError(ValueError):
    pass


class ConsistencyError(RuntimeError):
    pass


def _pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


def _from_mapping(cls, data: Optional[Mapping[str, Any]]):
    data = dict(data or {})
    known = {f for f in cls.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class CacheConfig:
    line_width_bytes: int = 64
    num_lines: int = 256
    associativity: int = 4
    hit_time_ns: float = 1.0
    # cache sets split evenly between this many groups of factor matrices
    factor_partitions: int = 1

    def __post_init__(self) -> None:
        if not _pow2(self.line_width_bytes):
            raise ConfigError("line_width_bytes must be a power of two")
        if self.num_lines < 1 or self.associativity < 1:
            raise ConfigError("num_lines and associativity must be >= 1")
        if self.num_lines % self.associativity:
            raise ConfigError("num_lines must be divisible by associativity")
        if not 1 <= self.factor_partitions <= self.num_sets:
            raise ConfigError("factor_partitions must be between 1 and the number of sets")

    @property
    def num_sets(self) -> int:
        return self.num_lines // self.associativity


@dataclass(frozen=True)
class DmaConfig:
    num_dmas: int = 2
    buffers_per_dma: int = 2
    buffer_size_bytes: int = 4096
    buffer_access_ns: float = 1.0

    def __post_init__(self) -> None:
        if self.num_dmas < 1 or self.buffers_per_dma < 1:
            raise ConfigError("num_dmas and buffers_per_dma must be >= 1")
        if not _pow2(self.buffer_size_bytes):
            raise ConfigError("buffer_size_bytes must be a power of two")


@dataclass(frozen=True)
class RemapperConfig:
    dma_buffer_size_bytes: int = 4096
    tensor_element_width_bytes: int = 16
    max_address_pointers: int = 1 << 16
    buffer_access_ns: float = 1.0

    def __post_init__(self) -> None:
        if not _pow2(self.dma_buffer_size_bytes):
            raise ConfigError("dma_buffer_size_bytes must be a power of two")
        if self.max_address_pointers < 1:
            raise ConfigError("max_address_pointers must be >= 1")
        if self.tensor_element_width_bytes < 1:
            raise ConfigError("tensor_element_width_bytes must be >= 1")


@dataclass(frozen=True)
class MemControllerConfig:
    cache: CacheConfig = field(default_factory=CacheConfig)
    dma: DmaConfig = field(default_factory=DmaConfig)
    remapper: RemapperConfig = field(default_factory=RemapperConfig)
    routing: tuple[tuple[str, str], ...] = DEFAULT_ROUTING

    def __post_init__(self) -> None:
        routing = tuple(sorted((str(k), str(e)) for k, e in dict(self.routing).items()))
        for kind, engine in routing:
            if kind not in EventKind.__members__:
                raise ConfigError(f"routing names unknown event kind {kind!r}")
            if engine not in ENGINES:
                raise ConfigError(f"routing target {engine!r} is not one of {ENGINES}")
        object.__setattr__(self, "routing", routing)

    def route_table(self) -> dict[int, int]:
        return {int(EventKind[k]): ENGINES.index(e) for k, e in self.routing}

    def to_dict(self) -> dict:
        return {
            "cache": asdict(self.cache),
            "dma": asdict(self.dma),
            "remapper": asdict(self.remapper),
            "routing": dict(self.routing),
        }

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> "MemControllerConfig":
        data = dict(data or {})
        routing = dict(DEFAULT_ROUTING)
        if "routing" in data:
            given = data["routing"]
            # a full table replaces the default; kinds left out then have no route
            routing = dict(given) if data.get("routing_replace") else {**routing, **given}
        return cls(
            cache=_from_mapping(CacheConfig, data.get("cache")),
            dma=_from_mapping(DmaConfig, data.get("dma")),
            remapper=_from_mapping(RemapperConfig, data.get("remapper")),
            routing=tuple(routing.items()),
        )

    def sort_key(self) -> tuple:
        c, d, r = self.cache, self.dma, self.remapper
        return (c.line_width_bytes, c.num_lines, c.associativity, d.num_dmas,
                d.buffers_per_dma, d.buffer_size_bytes, r.dma_buffer_size_bytes,
                r.max_address_pointers)


@dataclass(frozen=True)
class DramModel:
    """Row-buffer DRAM timing. Defaults are placeholders, not measurements."""

    row_buffer_size_bytes: int = 8192
    t_row_hit: float = 25.0
    t_row_miss: float = 75.0
    burst_bytes: int = 64
    stream_bandwidth_bytes_per_ns: float = 16.0

    def __post_init__(self) -> None:
        if not 0 < self.t_row_hit <= self.t_row_miss:
            raise ConfigError("need 0 < t_row_hit <= t_row_miss")
        if not 0 < self.burst_bytes <= self.row_buffer_size_bytes:
            raise ConfigError("need 0 < burst_bytes <= row_buffer_size_bytes")
        if self.stream_bandwidth_bytes_per_ns <= 0:
            raise ConfigError("stream bandwidth must be positive")

    def data_time(self, nbytes: int) -> float:
        bursts = -(-nbytes // self.burst_bytes)
        return bursts * self.burst_bytes / self.stream_bandwidth_bytes_per_ns

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> "DramModel":
        return _from_mapping(cls, data)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- building blocks


class RowBuffer:
    """Open-row tracker for element-wise DRAM accesses."""

    def __init__(self, dram: DramModel):
        self.dram = dram
        self.open_row: Optional[int] = None
        self.hits = 0
        self.misses = 0

    def access(self, address: int, size: int) -> float:
        d = self.dram
        latency = 0.0
        first = address // d.row_buffer_size_bytes
        last = (address + size - 1) // d.row_buffer_size_bytes
        for row in range(first, last + 1):
            if row == self.open_row:
                self.hits += 1
                latency += d.t_row_hit
            else:
                self.misses += 1
                latency += d.t_row_miss
                self.open_row = row
        bursts = -(-size // d.burst_bytes)
        return latency + (bursts - 1) * d.burst_bytes / d.stream_bandwidth_bytes_per_ns


@dataclass(frozen=True)
class CacheResult:
    hit: bool
    latency: float
    line_hits: int
    line_misses: int


class SetAssociativeCache:
    """LRU set-associative cache over line addresses.

    ``set = line mod sets`` within the partition the access belongs to; with
    one partition that is the plain ``(address / line_width) mod num_sets``.
    """

    def __init__(self, cfg: CacheConfig, dram: Optional[DramModel] = None):
        self.cfg = cfg
        self.dram = dram or DramModel()
        self.sets_per_partition = cfg.num_sets // cfg.factor_partitions
        self.sets: list[OrderedDict[int, None]] = [OrderedDict() for _ in range(cfg.num_sets)]
        self.miss_latency = self.dram.t_row_miss + self.dram.data_time(cfg.line_width_bytes)

    def lookup_line(self, line: int, partition: int = 0) -> bool:
        spp = self.sets_per_partition
        s = self.sets[(partition % self.cfg.factor_partitions) * spp + line % spp]
        if line in s:
            s.move_to_end(line)
            return True
        if len(s) >= self.cfg.associativity:
            s.popitem(last=False)
        s[line] = None
        return False

    def access(self, address: int, size: int, partition: int = 0) -> CacheResult:
        if size > self.cfg.line_width_bytes * self.cfg.num_lines:
            raise ValueError("access larger than the whole cache")
        w = self.cfg.line_width_bytes
        hits = misses = 0
        for line in range(address // w, (address + size - 1) // w + 1):
            if self.lookup_line(line, partition):
                hits += 1
            else:
                misses += 1
        latency = hits * self.cfg.hit_time_ns + misses * self.miss_latency
        return CacheResult(misses == 0, latency, hits, misses)


class ChunkPipeline:
    """Bulk transfers split into chunks over ``channels`` DMA channels.

    Each channel owns ``buffers`` chunk buffers, so up to ``buffers *
    channels`` chunks are in flight. A chunk costs a row activation plus its
    data time; activations overlap, data phases on one channel serialize.
    """

    def __init__(self, chunk_bytes: int, buffers: int, channels: int, dram: DramModel):
        self.chunk_bytes = chunk_bytes
        self.window = buffers * channels
        self.dram = dram
        self.channel_free = [0.0] * channels
        self.next_channel = 0
        self.chunks = 0

    def fetch(self, issue: float, nbytes: int) -> float:
        ch = self.next_channel
        self.next_channel = (ch + 1) % len(self.channel_free)
        d = self.dram.data_time(nbytes)
        done = max(issue + self.dram.t_row_miss + d, self.channel_free[ch] + d)
        self.channel_free[ch] = done
        self.chunks += 1
        return done

    def transfer(self, start: float, length: int) -> float:
        """Standalone bulk transfer of ``length`` bytes; returns completion time."""
        sizes = [self.chunk_bytes] * (length // self.chunk_bytes)
        if length % self.chunk_bytes:
            sizes.append(length % self.chunk_bytes)
        ready: list[float] = []
        for j, nbytes in enumerate(sizes):
            issue = start if j < self.window else ready[j - self.window]
            ready.append(self.fetch(issue, nbytes))
        return max(ready)


class DmaEngine:
    """Direct use of the DMA Engine model for single transfers."""

    def __init__(self, cfg: DmaConfig, dram: DramModel):
        self.cfg = cfg
        self.dram = dram
        self.pipeline = ChunkPipeline(cfg.buffer_size_bytes, cfg.buffers_per_dma, cfg.num_dmas, dram)
        self.rows = RowBuffer(dram)
        self.clock = 0.0

    def transfer(self, base_address: int, length: int, mode: str = "stream",
                 element_bytes: Optional[int] = None) -> float:
        """Run one transfer after the previous one and return its latency."""
        if length <= 0:
            raise ValueError("zero-length transfer")
        start = self.clock
        if mode == "stream":
            done = self.pipeline.transfer(start, length)
        elif mode == "elementwise":
            step = element_bytes or length
            done = start
            for off in range(0, length, step):
                done += self.rows.access(base_address + off, min(step, length - off))
        else:
            raise ValueError(f"unknown DMA mode {mode!r}")
        self.clock = done
        return done - start


# ---------------------------------------------------------------- stream runs


class _Runs:
    """Groups one engine's stream events into contiguous bulk runs.

    Events of the same kind whose byte ranges follow each other form one run;
    a run is moved in aligned ``chunk_bytes`` chunks. Interleaved kinds keep
    separate runs, like separate DMA streams.
    """

    def __init__(self, idx, kinds, addrs, sizes, chunk_bytes: int):
        self.event_run: dict[int, int] = {}
        self.event_chunks: dict[int, tuple[int, int]] = {}
        self.chunk_bytes: list[list[int]] = []
        self.last_event: list[list[int]] = []
        chunk_ids: list[list[int]] = []
        open_run: dict[int, tuple[int, int]] = {}  # kind -> (run id, next address)
        for e in idx:
            k, a, s = kinds[e], addrs[e], sizes[e]
            cur = open_run.get(k)
            if cur is None or cur[1] != a:
                rid = len(chunk_ids)
                chunk_ids.append([])
                self.chunk_bytes.append([])
                self.last_event.append([])
            else:
                rid = cur[0]
            open_run[k] = (rid, a + s)
            ids, nbytes, last = chunk_ids[rid], self.chunk_bytes[rid], self.last_event[rid]
            first_ord = None
            for c in range(a // chunk_bytes, (a + s - 1) // chunk_bytes + 1):
                piece = min(a + s, (c + 1) * chunk_bytes) - max(a, c * chunk_bytes)
                if ids and ids[-1] == c:
                    nbytes[-1] += piece
                    last[-1] = e
                else:
                    ids.append(c)
                    nbytes.append(piece)
                    last.append(e)
                if first_ord is None:
                    first_ord = len(ids) - 1
            self.event_run[e] = rid
            self.event_chunks[e] = (first_ord, len(ids) - 1)


class _Streams:
    """Timing of bulk runs through a :class:`ChunkPipeline`.

    Loads prefetch: chunk ``k`` is requested as soon as the buffer it reuses
    (chunk ``k - window``) has been consumed. Stores are write-behind: a chunk
    is written once its last byte arrives, and an event waits only for a free
    buffer.
    """

    def __init__(self, runs: _Runs, pipeline: ChunkPipeline):
        self.runs = runs
        self.pipe = pipeline
        n = len(runs.chunk_bytes)
        self.start: list[Optional[float]] = [None] * n
        self.ready: list[list[float]] = [[] for _ in range(n)]
        self.consumed: list[list[float]] = [[] for _ in range(n)]
        self.written: list[dict[int, float]] = [{} for _ in range(n)]
        self.tail = 0.0

    def _run(self, e: int, t: float) -> tuple[int, int, int, float]:
        rid = self.runs.event_run[e]
        first, last = self.runs.event_chunks[e]
        if self.start[rid] is None:
            self.start[rid] = t
        return rid, first, last, self.start[rid]

    def load(self, e: int, t: float, access_ns: float) -> float:
        rid, first, last, start = self._run(e, t)
        ready, consumed = self.ready[rid], self.consumed[rid]
        nbytes = self.runs.chunk_bytes[rid]
        w = self.pipe.window
        while len(ready) <= last:
            k = len(ready)
            if k < w:
                issue = start
            elif k - w < first:
                issue = consumed[k - w]
            else:
                issue = t  # the buffer is held by this same event
            ready.append(self.pipe.fetch(issue, nbytes[k]))
        done = max(t + access_ns, max(ready[first:last + 1]))
        del consumed[first:]
        consumed.extend([done] * (last - first + 1))
        return done

    def store(self, e: int, t: float, access_ns: float) -> float:
        rid, first, last, start = self._run(e, t)
        written = self.written[rid]
        w = self.pipe.window
        avail = start
        for j in range(max(first, w), last + 1):
            avail = max(avail, written[j - w])
        done = max(t + access_ns, avail)
        nbytes, last_event = self.runs.chunk_bytes[rid], self.runs.last_event[rid]
        for j in range(first, last + 1):
            if last_event[j] == e:
                written[j] = self.pipe.fetch(done, nbytes[j])
                self.tail = max(self.tail, written[j])
        return done


_LOADS = frozenset({int(EventKind.TensorLoadStream), int(EventKind.PartialLoadStream),
                    int(EventKind.FactorRowLoadRandom), int(EventKind.PointerLoad)})


# ---------------------------------------------------------------- engines


class CacheEngine:
    name = "cache"

    def __init__(self, cfg: CacheConfig, dram: DramModel, regions: tuple[Region, ...] = ()):
        self.cache = SetAssociativeCache(cfg, dram)
        self.partition_of = (_factor_partition_of(regions)
                             if cfg.factor_partitions > 1 else (lambda a: 0))
        self.hits = self.misses = self.line_hits = self.line_misses = 0
        self.outcomes: list[bool] = []
        self.tail = 0.0

    def prepare(self, queue, kinds, addrs, sizes) -> None:
        pass

    def serve(self, e: int, kind: int, address: int, size: int, t: float) -> float:
        res = self.cache.access(address, size, self.partition_of(address))
        self.line_hits += res.line_hits
        self.line_misses += res.line_misses
        self.outcomes.append(res.hit)
        if res.hit:
            self.hits += 1
        else:
            self.misses += 1
        return t + res.latency


class DmaStreamEngine:
    """DMA Engine inside :func:`simulate`: bulk runs plus element-wise transfers."""

    name = "dma"

    def __init__(self, cfg: DmaConfig, dram: DramModel):
        self.cfg = cfg
        self.pipe = ChunkPipeline(cfg.buffer_size_bytes, cfg.buffers_per_dma, cfg.num_dmas, dram)
        self.rows = RowBuffer(dram)
        self.elementwise = 0
        self.streams: Optional[_Streams] = None

    @property
    def tail(self) -> float:
        return self.streams.tail if self.streams else 0.0

    def prepare(self, queue, kinds, addrs, sizes) -> None:
        idx = [e for e in queue if not EventKind(kinds[e]).elementwise]
        self.streams = _Streams(_Runs(idx, kinds, addrs, sizes, self.pipe.chunk_bytes), self.pipe)

    def serve(self, e: int, kind: int, address: int, size: int, t: float) -> float:
        acc = self.cfg.buffer_access_ns
        if EventKind(kind).elementwise:
            self.elementwise += 1
            return t + acc + self.rows.access(address, size)
        if kind in _LOADS:
            return self.streams.load(e, t, acc)
        return self.streams.store(e, t, acc)


class TensorRemapper:
    """Remapper: its own single-buffer DMA for loads, row-aware element stores,
    and an on-chip address-pointer table of ``max_address_pointers`` entries."""

    name = "remapper"

    def __init__(self, cfg: RemapperConfig, dram: DramModel, regions: tuple[Region, ...] = ()):
        self.cfg = cfg
        self.pipe = ChunkPipeline(cfg.dma_buffer_size_bytes, 1, 1, dram)
        self.rows = RowBuffer(dram)
        self.pointers = _PointerTable(cfg, regions)
        self.element_stores = 0
        self.pointer_spills = 0
        self.streams: Optional[_Streams] = None

    @property
    def tail(self) -> float:
        return self.streams.tail if self.streams else 0.0

    def prepare(self, queue, kinds, addrs, sizes) -> None:
        idx = [e for e in queue if not EventKind(kinds[e]).elementwise]
        self.streams = _Streams(_Runs(idx, kinds, addrs, sizes, self.pipe.chunk_bytes), self.pipe)

    def step(self, kind: EventKind, address: int, size: int, t: float = 0.0) -> float:
        """Serve one element-wise or pointer event at time ``t``; returns its latency."""
        acc = self.cfg.buffer_access_ns
        if kind in (EventKind.PointerLoad, EventKind.PointerStore):
            lat, spills = self.pointers.access(kind, address, size, self.rows)
            self.pointer_spills += spills
            return acc + lat
        if not EventKind(kind).elementwise:
            raise ValueError("stream loads go through serve() with prepared runs")
        if kind == EventKind.TensorStoreElementwise:
            self.element_stores += 1
        return acc + self.rows.access(address, size)

    def serve(self, e: int, kind: int, address: int, size: int, t: float) -> float:
        k = EventKind(kind)
        if k.elementwise:
            return t + self.step(k, address, size, t)
        if kind in _LOADS:
            return self.streams.load(e, t, self.cfg.buffer_access_ns)
        return self.streams.store(e, t, self.cfg.buffer_access_ns)


# ---------------------------------------------------------------- simulation


@dataclass
class SimReport:
    total_time_ns: float = 0.0
    events: int = 0
    engine_events: dict = field(default_factory=lambda: {e: 0 for e in ENGINES})
    engine_busy_ns: dict = field(default_factory=lambda: {e: 0.0 for e in ENGINES})
    engine_completion_ns: dict = field(default_factory=lambda: {e: 0.0 for e in ENGINES})
    bytes_moved: dict = field(default_factory=lambda: {e: 0 for e in ENGINES})
    cache_hits: int = 0
    cache_misses: int = 0
    cache_line_hits: int = 0
    cache_line_misses: int = 0
    dma_transfers: int = 0
    dma_stream_chunks: int = 0
    dma_elementwise_transfers: int = 0
    remapper_element_stores: int = 0
    remapper_stream_chunks: int = 0
    remapper_pointer_spills: int = 0
    dram_row_hits: int = 0
    dram_row_misses: int = 0
    cross_engine_hazards: int = 0
    cross_engine_waits: int = 0
    config: dict = field(default_factory=dict)
    dram: dict = field(default_factory=dict)
    timeline: Optional[dict] = None

    @property
    def cache_hit_rate(self) -> float:
        n = self.cache_hits + self.cache_misses
        return self.cache_hits / n if n else 0.0

    def to_json(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "timeline"}
        out["cache_hit_rate"] = self.cache_hit_rate
        out["format_version"] = FORMAT_VERSION
        return out


def _factor_partition_of(regions: tuple[Region, ...]):
    """Map an address to the ordinal of the factor region holding it (0 if none)."""
    factors = sorted((r for r in regions if r.name.startswith("factor")), key=lambda r: r.base)
    if not factors:
        return lambda addr: 0
    bases = [r.base for r in factors]

    def which(addr: int) -> int:
        return max(bisect.bisect_right(bases, addr) - 1, 0)

    return which


class _PointerTable:
    """LRU residency of pointer-table entries, keyed by entry address.

    When the trace's pointer region fits entirely, every pointer event is
    served on chip.
    """

    def __init__(self, cfg: RemapperConfig, regions: tuple[Region, ...]):
        self.capacity = cfg.max_address_pointers
        ptr = [r for r in regions if r.name == "pointers"]
        entries = ptr[0].size // 4 if ptr else None
        self.resident_all = entries is not None and entries <= self.capacity
        self.table: OrderedDict[int, bool] = OrderedDict()  # address -> dirty

    def access(self, kind: int, address: int, size: int, rows: RowBuffer) -> tuple[float, int]:
        """Return (DRAM latency, DRAM pointer accesses)."""
        if self.resident_all:
            return 0.0, 0
        t = self.table
        if address in t:
            t.move_to_end(address)
            if kind == EventKind.PointerStore:
                t[address] = True
            return 0.0, 0
        if kind == EventKind.PointerStore:
            return rows.access(address, size), 1
        latency, spills = rows.access(address, size), 1
        if len(t) >= self.capacity:
            victim, dirty = t.popitem(last=False)
            if dirty:
                latency += rows.access(victim, size)
                spills += 1
        t[address] = False
        return latency, spills


def simulate(
    trace: AccessTrace,
    cfg: MemControllerConfig = MemControllerConfig(),
    dram: DramModel = DramModel(),
    strict: bool = False,
    record_timeline: bool = False,
    ordering: str = "barrier",
) -> SimReport:
    """Replay ``trace`` through the controller model.

    Events go to engines by ``cfg.routing`` and each engine serves its queue
    in sequence order, starting each event when the previous one completes.
    Engines otherwise run concurrently.

    With ``ordering="barrier"`` an access to a burst that an earlier event on
    a different engine touched waits until that event completes (the phase
    order of a kernel, such as remap stores before the loads that read them).
    Such delays are counted in ``cross_engine_waits``. With ``"none"`` the
    engines are fully independent and overlapping accesses are counted as
    ``cross_engine_hazards`` instead, which ``strict`` turns into an error.
    """
    if ordering not in ("barrier", "none"):
        raise ConfigError(f"ordering must be 'barrier' or 'none', got {ordering!r}")
    report = SimReport(config=cfg.to_dict(), dram=dram.to_dict())
    n = len(trace)
    report.events = n
    if n == 0:
        return report

    route = cfg.route_table()
    kinds = trace.kind.tolist()
    addrs = trace.address.tolist()
    sizes = trace.size.tolist()
    engine_of = []
    for k in kinds:
        if k not in route:
            raise RoutingError(f"no route for event kind {EventKind(k).name}")
        engine_of.append(route[k])
    queues: list[list[int]] = [[], [], []]
    for e, eng in enumerate(engine_of):
        queues[eng].append(e)

    cache = CacheEngine(cfg.cache, dram, trace.regions)
    dma = DmaStreamEngine(cfg.dma, dram)
    remapper = TensorRemapper(cfg.remapper, dram, trace.regions)
    engines = (cache, dma, remapper)
    for engine, queue in zip(engines, queues):
        engine.prepare(queue, kinds, addrs, sizes)

    barrier = ordering == "barrier"
    burst = dram.burst_bytes
    last: dict[int, tuple[int, float]] = {}  # burst -> (engine, completion)
    clock = [0.0, 0.0, 0.0]
    busy = [0.0, 0.0, 0.0]
    moved = [0, 0, 0]
    start_t = np.zeros(n)
    done_t = np.zeros(n)
    for e in range(n):
        eng = engine_of[e]
        a, s = addrs[e], sizes[e]
        t = clock[eng]
        if barrier:
            dep = t
            for b in range(a // burst, (a + s - 1) // burst + 1):
                prev = last.get(b)
                if prev is not None and prev[0] != eng and prev[1] > dep:
                    dep = prev[1]
            if dep > t:
                report.cross_engine_waits += 1
                t = dep
        done = engines[eng].serve(e, kinds[e], a, s, t)
        if barrier:
            for b in range(a // burst, (a + s - 1) // burst + 1):
                prev = last.get(b)
                if prev is None or prev[0] != eng or done > prev[1]:
                    last[b] = (eng, done)
        start_t[e] = t
        done_t[e] = done
        busy[eng] += done - t
        clock[eng] = done
        moved[eng] += s

    for i, engine in enumerate(engines):
        report.engine_events[engine.name] = len(queues[i])
        report.engine_busy_ns[engine.name] = busy[i]
        report.engine_completion_ns[engine.name] = max(clock[i], engine.tail)
        report.bytes_moved[engine.name] = moved[i]
    report.cache_hits, report.cache_misses = cache.hits, cache.misses
    report.cache_line_hits, report.cache_line_misses = cache.line_hits, cache.line_misses
    report.dma_stream_chunks = dma.pipe.chunks
    report.dma_elementwise_transfers = dma.elementwise
    report.dma_transfers = dma.pipe.chunks + dma.elementwise
    report.remapper_element_stores = remapper.element_stores
    report.remapper_stream_chunks = remapper.pipe.chunks
    report.remapper_pointer_spills = remapper.pointer_spills
    report.dram_row_hits = dma.rows.hits + remapper.rows.hits
    report.dram_row_misses = dma.rows.misses + remapper.rows.misses
    report.total_time_ns = max(report.engine_completion_ns.values())
    report.cross_engine_hazards = _count_hazards(engine_of, addrs, sizes, start_t, done_t, burst)
    if strict and report.cross_engine_hazards:
        raise ConsistencyError(
            f"{report.cross_engine_hazards} accesses overlap another engine's access in time"
        )
    if record_timeline:
        report.timeline = {"engine": np.array(engine_of), "start": start_t, "completion": done_t,
                           "cache_hit": np.array(cache.outcomes, dtype=bool)}
    return report


def _count_hazards(engine_of, addrs, sizes, start_t, done_t, burst: int) -> int:
    """Accesses that begin before another engine's earlier access to the same burst ends."""
    last: dict[int, tuple[int, float]] = {}
    hazards = 0
    for e, eng in enumerate(engine_of):
        a, s = addrs[e], sizes[e]
        hit = False
        for b in range(a // burst, (a + s - 1) // burst + 1):
            prev = last.get(b)
            if prev is not None and prev[0] != eng and prev[1] > start_t[e]:
                hit = True
            if prev is None or prev[0] != eng or done_t[e] > prev[1]:
                last[b] = (eng, float(done_t[e]))
        hazards += hit
    return hazards


def with_cache(cfg: MemControllerConfig, **changes) -> MemControllerConfig:
    return replace(cfg, cache=replace(cfg.cache, **changes))
