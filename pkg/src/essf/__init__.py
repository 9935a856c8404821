"""Simulation and diagnostics for extended self-similar fragmentations on marked partitions."""

from .diagnostics import (
    CumulantReport,
    GrowthFragmentationCell,
    additive_statistic,
    bbm_preset,
    classical_preset,
    cumulant,
    cumulant_level,
    gf_embedding,
    martingale_estimate,
)
from .dislocation import (
    Characteristics,
    DislocationMeasure,
    ZElement,
    effective_drift,
    erosion_atom,
    integrability_value,
    jump_measure_level,
    rate_J,
    sample_dislocation,
    sample_paintbox,
)
from .levy_mark import evolve_mark, lamperti_integral, lamperti_inverse, moment_exponent
from .marked_partition import MarkedPartition, apply_permutation, empirical_frequencies, frag, restrict
from .simulate import (
    GenealogyTree,
    absorption_time,
    simulate_homogeneous,
    snapshot,
    time_change,
    total_length,
)

__all__ = [name for name in dir() if not name.startswith("_")]
