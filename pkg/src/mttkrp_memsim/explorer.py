"""Design-space search over memory-controller parameters under an on-chip budget."""

from __future__ import annotations

import csv
import io
import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping, Optional, Sequence

from .memsim import (
    CacheConfig,
    ConfigError,
    DmaConfig,
    DramModel,
    MemControllerConfig,
    RemapperConfig,
    simulate,
)
from .trace import AccessTrace

ADDRESS_BITS = 40
POINTER_BITS = 32
THREADS_ENV = "MTTKRP_MEMSIM_THREADS"


class InfeasibleError(RuntimeError):
    """No configuration in the grid fits the FPGA budget."""


@dataclass(frozen=True)
class FpgaResources:
    bram_bits: int
    uram_bits: int
    memory_interface_width_bits: int = 512
    # pooled: BRAM and URAM form one budget; otherwise buffers and cache go to
    # BRAM and the pointer table to URAM
    pooled: bool = True

    def __post_init__(self) -> None:
        if min(self.bram_bits, self.uram_bits, self.memory_interface_width_bits) <= 0:
            raise ConfigError("FPGA resources must be positive")

    @property
    def total_bits(self) -> int:
        return self.bram_bits + self.uram_bits

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FpgaResources":
        return cls(**dict(data))


@dataclass(frozen=True)
class ResourceUsage:
    cache_bits: int
    dma_bits: int
    remapper_buffer_bits: int
    pointer_bits: int

    @property
    def remapper_bits(self) -> int:
        return self.remapper_buffer_bits + self.pointer_bits

    @property
    def total_bits(self) -> int:
        return self.cache_bits + self.dma_bits + self.remapper_bits

    @property
    def pointer_bytes(self) -> int:
        return self.pointer_bits // 8


def resource_usage(cfg: MemControllerConfig) -> ResourceUsage:
    """On-chip bits for the cache (data, tag, valid), DMA buffers and the remapper."""
    c = cfg.cache
    tag_bits = ADDRESS_BITS - int(math.log2(c.num_sets)) - int(math.log2(c.line_width_bytes))
    return ResourceUsage(
        cache_bits=c.num_lines * (c.line_width_bytes * 8 + tag_bits + 1),
        dma_bits=cfg.dma.num_dmas * cfg.dma.buffers_per_dma * cfg.dma.buffer_size_bytes * 8,
        remapper_buffer_bits=cfg.remapper.dma_buffer_size_bytes * 8,
        pointer_bits=cfg.remapper.max_address_pointers * POINTER_BITS,
    )


def fits(cfg: MemControllerConfig, fpga: FpgaResources) -> bool:
    u = resource_usage(cfg)
    if fpga.pooled:
        return u.total_bits <= fpga.total_bits
    return (u.cache_bits + u.dma_bits + u.remapper_buffer_bits <= fpga.bram_bits
            and u.pointer_bits <= fpga.uram_bits)


# grid field -> (engine section, config field)
GRID_FIELDS: tuple[tuple[str, str, str], ...] = (
    ("line_width_bytes", "cache", "line_width_bytes"),
    ("num_lines", "cache", "num_lines"),
    ("associativity", "cache", "associativity"),
    ("num_dmas", "dma", "num_dmas"),
    ("buffers_per_dma", "dma", "buffers_per_dma"),
    ("buffer_size_bytes", "dma", "buffer_size_bytes"),
    ("remapper_buffer_size_bytes", "remapper", "dma_buffer_size_bytes"),
    ("tensor_element_width_bytes", "remapper", "tensor_element_width_bytes"),
    ("max_address_pointers", "remapper", "max_address_pointers"),
)
MODULES = ("cache", "dma", "remapper")


@dataclass(frozen=True)
class ParamGrid:
    line_width_bytes: tuple[int, ...] = (64,)
    num_lines: tuple[int, ...] = (256,)
    associativity: tuple[int, ...] = (4,)
    num_dmas: tuple[int, ...] = (2,)
    buffers_per_dma: tuple[int, ...] = (2,)
    buffer_size_bytes: tuple[int, ...] = (4096,)
    remapper_buffer_size_bytes: tuple[int, ...] = (4096,)
    tensor_element_width_bytes: tuple[int, ...] = (16,)
    max_address_pointers: tuple[int, ...] = (1 << 16,)

    def __post_init__(self) -> None:
        for f in fields(self):
            vals = tuple(int(v) for v in getattr(self, f.name))
            if not vals:
                raise ConfigError(f"grid list {f.name!r} is empty")
            if min(vals) < 1:
                raise ConfigError(f"grid list {f.name!r} holds values below 1")
            object.__setattr__(self, f.name, vals)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ParamGrid":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) for k, v in data.items()})

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}

    @property
    def cardinality(self) -> int:
        return math.prod(len(getattr(self, name)) for name, _, _ in GRID_FIELDS)

    def points(self, base: MemControllerConfig = MemControllerConfig()) -> list[Optional[MemControllerConfig]]:
        """Every grid point in lexicographic order; ``None`` where the values are invalid."""
        lists = [getattr(self, name) for name, _, _ in GRID_FIELDS]
        return [_make_config(base, values) for values in itertools.product(*lists)]

    def module_fields(self, module: str) -> list[int]:
        return [i for i, (_, section, _) in enumerate(GRID_FIELDS) if section == module]


def _make_config(base: MemControllerConfig, values: Sequence[int]) -> Optional[MemControllerConfig]:
    sections: dict[str, dict] = {"cache": asdict(base.cache), "dma": asdict(base.dma),
                                 "remapper": asdict(base.remapper)}
    for (_, section, key), v in zip(GRID_FIELDS, values):
        sections[section][key] = v
    try:
        return MemControllerConfig(
            cache=CacheConfig(**sections["cache"]),
            dma=DmaConfig(**sections["dma"]),
            remapper=RemapperConfig(**sections["remapper"]),
            routing=base.routing,
        )
    except ConfigError:
        return None


@dataclass(frozen=True)
class RankEntry:
    index: int
    config: MemControllerConfig
    t_avg: float
    resource_bits: int
    dataset_times: tuple[float, ...]

    def order(self) -> tuple:
        return (self.t_avg, self.resource_bits, self.index)


@dataclass
class ExploreReport:
    best_config: MemControllerConfig
    t_avg_best: float
    dataset_times: tuple[float, ...]
    feasible_count: int
    infeasible_count: int
    ranking: list[RankEntry]
    method: str = "exhaustive"
    heuristic: bool = False
    evaluations: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "method": self.method,
            "heuristic": self.heuristic,
            "best_config": self.best_config.to_dict(),
            "t_avg_best_ns": self.t_avg_best,
            "dataset_times_ns": list(self.dataset_times),
            "feasible_count": self.feasible_count,
            "infeasible_count": self.infeasible_count,
            "evaluations": self.evaluations,
            "ranking": [
                {"index": r.index, "t_avg_ns": r.t_avg, "resource_bits": r.resource_bits,
                 "dataset_times_ns": list(r.dataset_times), "config": r.config.to_dict()}
                for r in self.ranking
            ],
            **self.extra,
        }

    def ranking_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        names = [name for name, _, _ in GRID_FIELDS]
        writer.writerow(["rank", "index", *names, "t_avg_ns", "resource_bits"])
        for pos, r in enumerate(self.ranking, start=1):
            vals = [getattr(getattr(r.config, s), k) for _, s, k in GRID_FIELDS]
            writer.writerow([pos, r.index, *vals, repr(r.t_avg), r.resource_bits])
        return out.getvalue()


def _evaluate(args) -> tuple[float, ...]:
    cfg, datasets, dram = args
    return tuple(simulate(t, cfg, dram).total_time_ns for t in datasets)


def _workers(workers: Optional[int]) -> int:
    if workers is not None:
        return workers
    raw = os.environ.get(THREADS_ENV, "0")
    try:
        return max(int(raw), 0)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def _evaluate_all(jobs: list, workers: int) -> list[tuple[float, ...]]:
    if workers <= 1 or len(jobs) <= 1:
        return [_evaluate(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_evaluate, jobs))


def _rank(points: list[tuple[int, MemControllerConfig]], datasets, dram, workers) -> list[RankEntry]:
    times = _evaluate_all([(cfg, datasets, dram) for _, cfg in points], workers)
    entries = [
        RankEntry(i, cfg, sum(ts) / len(ts), resource_usage(cfg).total_bits, ts)
        for (i, cfg), ts in zip(points, times)
    ]
    return sorted(entries, key=RankEntry.order)


def explore(
    datasets: Sequence[AccessTrace],
    grid: ParamGrid,
    fpga: FpgaResources,
    dram: DramModel = DramModel(),
    base: MemControllerConfig = MemControllerConfig(),
    workers: Optional[int] = None,
) -> ExploreReport:
    """Exhaustive search: simulate every feasible grid point on every dataset.

    ``t_avg`` is the plain mean of simulated total time over the datasets.
    Ties go to the smaller on-chip footprint, then to grid order.
    """
    if not datasets:
        raise ValueError("need at least one dataset trace")
    points = grid.points(base)
    feasible = [(i, c) for i, c in enumerate(points) if c is not None and fits(c, fpga)]
    if not feasible:
        raise InfeasibleError(f"none of the {len(points)} grid configurations fits the FPGA budget")
    ranking = _rank(feasible, list(datasets), dram, _workers(workers))
    best = ranking[0]
    return ExploreReport(
        best_config=best.config,
        t_avg_best=best.t_avg,
        dataset_times=best.dataset_times,
        feasible_count=len(feasible),
        infeasible_count=len(points) - len(feasible),
        ranking=ranking,
        evaluations=len(feasible),
    )


def explore_modular(
    datasets: Sequence[AccessTrace],
    grid: ParamGrid,
    fpga: FpgaResources,
    dram: DramModel = DramModel(),
    base: MemControllerConfig = MemControllerConfig(),
    passes: int = 1,
    workers: Optional[int] = None,
) -> ExploreReport:
    """Module-by-module search: cache, then DMA, then remapper.

    Starts from the first value of every grid list and sweeps one module's
    sub-grid at a time with the others held fixed, keeping the best feasible
    point. ``passes`` repeats the whole sweep. The result is a heuristic:
    its ``t_avg`` is never below the exhaustive optimum.
    """
    if not datasets:
        raise ValueError("need at least one dataset trace")
    if passes < 1:
        raise ValueError("passes must be >= 1")
    datasets = list(datasets)
    nworkers = _workers(workers)
    names = [name for name, _, _ in GRID_FIELDS]
    lists = [getattr(grid, name) for name in names]
    radices = [len(v) for v in lists]

    def flat_index(choice: Sequence[int]) -> int:
        idx = 0
        for c, r in zip(choice, radices):
            idx = idx * r + c
        return idx

    current = [0] * len(names)
    best: Optional[RankEntry] = None
    best_choice: list[int] = current
    seen: dict[int, RankEntry] = {}
    infeasible: set[int] = set()
    for _ in range(passes):
        for module in MODULES:
            free = grid.module_fields(module)
            candidates = []
            for sub in itertools.product(*[range(radices[i]) for i in free]):
                choice = list(current)
                for i, c in zip(free, sub):
                    choice[i] = c
                idx = flat_index(choice)
                cfg = _make_config(base, [lists[i][c] for i, c in enumerate(choice)])
                if cfg is None or not fits(cfg, fpga):
                    infeasible.add(idx)
                    continue
                candidates.append((idx, cfg, choice))
            todo = [(i, c) for i, c, _ in candidates if i not in seen]
            for entry in _rank(todo, datasets, dram, nworkers):
                seen[entry.index] = entry
            if not candidates:
                continue
            ranked = sorted((seen[i] for i, _, _ in candidates), key=RankEntry.order)
            if best is None or ranked[0].order() < best.order():
                best = ranked[0]
                best_choice = {i: ch for i, _, ch in candidates}[best.index]
            current = list(best_choice)
    if best is None:
        raise InfeasibleError("module-by-module search found no configuration that fits")
    ranking = sorted(seen.values(), key=RankEntry.order)
    feasible = sum(1 for c in grid.points(base) if c is not None and fits(c, fpga))
    return ExploreReport(
        best_config=best.config,
        t_avg_best=best.t_avg,
        dataset_times=best.dataset_times,
        feasible_count=feasible,
        infeasible_count=grid.cardinality - feasible,
        ranking=ranking,
        method="modular",
        heuristic=True,
        evaluations=len(seen),
        extra={"passes": passes, "visited_infeasible": len(infeasible)},
    )
