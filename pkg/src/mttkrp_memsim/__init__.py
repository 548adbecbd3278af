"""Sparse MTTKRP kernels, access-cost model and a memory-controller simulator."""

from .cost_model import overhead_table, predict, reconcile, remap_overhead_ratio
from .explorer import FpgaResources, ParamGrid, explore, explore_modular, fits, resource_usage
from .kernels import (
    AccessCounters,
    cp_als,
    dense_oracle,
    mttkrp_approach1,
    mttkrp_approach2,
    mttkrp_coo,
    mttkrp_with_remap,
    remap_tensor,
    run_kernel,
)
from .memsim import (
    CacheConfig,
    DmaConfig,
    DmaEngine,
    DramModel,
    MemControllerConfig,
    RemapperConfig,
    SetAssociativeCache,
    SimReport,
    simulate,
)
from .tensor import (
    ElementWidths,
    FactorMatrix,
    FrosttParseError,
    SparseTensorCOO,
    parse_frostt,
    partition_output_mode,
    read_frostt,
    sort_by_mode,
    tensor_stats,
    write_frostt,
)
from .trace import AccessTrace, AddressMap, EventKind

__version__ = "0.1.0"
