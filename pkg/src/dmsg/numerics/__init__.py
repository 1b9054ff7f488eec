from . import ops
from .optim import OptimizerState, adam_step, sgd_step
from .sparse import CSRMatrix, spmm
from .tape import NonFiniteError, Node, Tape, grad, gradient_check

__all__ = [
    "CSRMatrix",
    "NonFiniteError",
    "Node",
    "OptimizerState",
    "Tape",
    "adam_step",
    "grad",
    "gradient_check",
    "ops",
    "sgd_step",
    "spmm",
]
