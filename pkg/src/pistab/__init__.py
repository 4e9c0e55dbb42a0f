"""Stability analysis of a saturated PI regulator on a single storage with capacity limit."""

from .dynamics import (
    ExpPowerOutflow,
    Gains,
    LinearOutflow,
    LoopState,
    OutflowModel,
    ReducedState,
    Scenario,
    check_conditions,
    closed_loop_step,
    pi_control,
    plant_step,
    reduced_step,
    saturate,
)
from .global_iss import H2Params, h2_verify, iss_certificate, necessary_conditions
from .local_stability import gain_matched_certificate, linearized_certificate, local_verdict
from .scenarios import example, load_scenario_file

__all__ = [
    "ExpPowerOutflow", "Gains", "LinearOutflow", "LoopState", "OutflowModel", "ReducedState", "Scenario",
    "check_conditions", "closed_loop_step", "pi_control", "plant_step", "reduced_step", "saturate",
    "H2Params", "h2_verify", "iss_certificate", "necessary_conditions",
    "gain_matched_certificate", "linearized_certificate", "local_verdict",
    "example", "load_scenario_file",
]
