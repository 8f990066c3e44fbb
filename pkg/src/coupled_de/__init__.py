"""Density-evolution thresholds of spatially coupled LDPC ensembles on the BIAWGN channel."""
from .engines import (
    ENGINE_IDS,
    DeLimits,
    DeOutcome,
    DeState,
    StructureError,
    ga_avg_step,
    ga_met_step,
    ga_proto_avg_step,
    make_engine,
    rca_avg_step,
    rca_met_step,
    run_de,
)
from .ensemble import (
    CoupledLayout,
    DegenerateRateWarning,
    EnsembleError,
    EnsembleSpec,
    MetGraph,
    MetUnsupportedError,
    ProtographSpec,
    build_met_graph,
    couple_protograph,
    design_rate,
    ensemble_rate,
)
from .functions import PERFECT, DomainError, cf, cf_inv, j_fun, j_inv, phi, phi_inv, reciprocal_snr
from .quantized import QuantizedDensity, QuantParams, channel_density, cn_update, oracle_threshold, vn_update
from .threshold import SearchRange, ThresholdRangeError, ThresholdResult, find_threshold, sweep

__all__ = [name for name in dir() if not name.startswith("_")]
