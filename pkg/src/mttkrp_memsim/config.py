"""JSON experiment configuration shared by every CLI subcommand.

A document may contain any of::

    {
      "tensors": ["a.tns"], "traces": ["run.trace"], "factors": ["A.txt", ...],
      "rank": 16, "modes": [0, 1, 2], "approach": "a1", "seed": 0,
      "max_pointers": 65536, "out": "results",
      "widths": {"coord": 4, "value": 4, "matrix": 4},
      "cache": {...}, "dma": {...}, "remapper": {...}, "routing": {...},
      "dram": {...}, "grid": {...}, "fpga": {...},
      "explore": {"method": "exhaustive", "passes": 1}
    }
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from .explorer import FpgaResources, ParamGrid
from .memsim import ConfigError, DramModel, MemControllerConfig
from .tensor import ElementWidths

DEFAULT_FPGA = {"bram_bits": 2016 * 36 * 1024, "uram_bits": 960 * 288 * 1024}


@dataclass
class ExperimentConfig:
    tensors: list[str] = field(default_factory=list)
    traces: list[str] = field(default_factory=list)
    # optional factor-matrix text files, one per mode, replacing the seeded random ones
    factors: list[str] = field(default_factory=list)
    rank: int = 16
    modes: Optional[list[int]] = None
    approach: str = "a1"
    input_mode: Optional[int] = None
    max_pointers: Optional[int] = None
    seed: int = 0
    out: Optional[str] = None
    widths: ElementWidths = field(default_factory=ElementWidths)
    controller: MemControllerConfig = field(default_factory=MemControllerConfig)
    dram: DramModel = field(default_factory=DramModel)
    grid: ParamGrid = field(default_factory=ParamGrid)
    fpga: FpgaResources = field(default_factory=lambda: FpgaResources(**DEFAULT_FPGA))
    explore: dict = field(default_factory=lambda: {"method": "exhaustive", "passes": 1})

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: str = ".") -> "ExperimentConfig":
        def resolve(paths):
            return [p if os.path.isabs(p) else os.path.join(base_dir, p) for p in paths]

        cfg = cls(
            tensors=resolve(data.get("tensors", [])),
            traces=resolve(data.get("traces", [])),
            factors=resolve(data.get("factors", [])),
            rank=int(data.get("rank", 16)),
            modes=data.get("modes"),
            approach=data.get("approach", "a1"),
            input_mode=data.get("input_mode"),
            max_pointers=data.get("max_pointers"),
            seed=int(data.get("seed", 0)),
            out=data.get("out"),
            widths=ElementWidths(**data.get("widths", {})),
            controller=MemControllerConfig.from_dict(data),
            dram=DramModel.from_dict(data.get("dram")),
            grid=ParamGrid.from_dict(data.get("grid", {})),
            fpga=FpgaResources.from_dict(data.get("fpga", DEFAULT_FPGA)),
            explore={"method": "exhaustive", "passes": 1, **data.get("explore", {})},
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data, os.path.dirname(os.path.abspath(path)))

    def validate(self) -> None:
        if self.rank < 1:
            raise ConfigError("rank must be >= 1")
        for p in self.tensors + self.traces + self.factors:
            if not os.path.exists(p):
                raise ConfigError(f"referenced file does not exist: {p}")
        if self.explore.get("method") not in ("exhaustive", "modular"):
            raise ConfigError("explore.method must be 'exhaustive' or 'modular'")

    def to_json(self) -> dict:
        return {
            "tensors": self.tensors,
            "traces": self.traces,
            "factors": self.factors,
            "rank": self.rank,
            "modes": self.modes,
            "approach": self.approach,
            "input_mode": self.input_mode,
            "max_pointers": self.max_pointers,
            "seed": self.seed,
            "widths": {"coord": self.widths.coord, "value": self.widths.value,
                       "matrix": self.widths.matrix},
            **self.controller.to_dict(),
            "dram": self.dram.to_dict(),
            "grid": self.grid.to_dict(),
            "fpga": {"bram_bits": self.fpga.bram_bits, "uram_bits": self.fpga.uram_bits,
                     "memory_interface_width_bits": self.fpga.memory_interface_width_bits,
                     "pooled": self.fpga.pooled},
            "explore": self.explore,
        }
