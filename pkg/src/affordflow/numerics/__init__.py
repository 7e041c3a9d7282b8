from .autograd import (
    DTYPE,
    Graph,
    GraphError,
    ShapeError,
    Tensor,
    backward,
    current_graph,
    no_grad,
)
from .optim import NonFiniteGradient, OptimizerState, adam_step, clip_grad_norm, zero_grad
from .rng import seeded_rng

__all__ = [
    "DTYPE",
    "Graph",
    "GraphError",
    "NonFiniteGradient",
    "OptimizerState",
    "ShapeError",
    "Tensor",
    "adam_step",
    "backward",
    "clip_grad_norm",
    "current_graph",
    "no_grad",
    "seeded_rng",
    "zero_grad",
]
