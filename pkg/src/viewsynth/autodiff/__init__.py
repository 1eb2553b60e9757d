from .tensor import Tensor, parameter, backward, set_debug_checks
from .optim import Adam, LrSchedule, adam_step
from . import ops
from .gradcheck import grad_check, run_all, REGISTRY, tolerance_for

__all__ = [
    "Tensor", "parameter", "backward", "set_debug_checks",
    "Adam", "LrSchedule", "adam_step", "ops",
    "grad_check", "run_all", "REGISTRY", "tolerance_for",
]
