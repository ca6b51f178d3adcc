from .ou import (OuParams, OuTargets, ou_continuous_cost, ou_exact_moments, ou_initial_ensemble,
                 ou_model, ou_normal_ensemble, ou_perfect_controls, perfect_control_grid,
                 sine_targets)
from .spt import (SptParams, cold_start, pack_params, spt_equilibrate, spt_model,
                  stationary_tracer_variance, unpack_params)

__all__ = [
    "OuParams", "OuTargets", "ou_model", "ou_exact_moments", "ou_perfect_controls",
    "ou_initial_ensemble", "ou_normal_ensemble", "ou_continuous_cost", "sine_targets",
    "perfect_control_grid",
    "SptParams", "spt_model", "spt_equilibrate", "pack_params", "unpack_params",
    "cold_start", "stationary_tracer_variance",
]
