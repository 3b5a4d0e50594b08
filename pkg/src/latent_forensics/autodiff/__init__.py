from latent_forensics.autodiff.container import decode_tensors, encode_tensors, load_tensors, save_tensors
from latent_forensics.autodiff.engine import (
    GradientCheckReport,
    check_gradients,
    evaluate,
    forward_backward,
    gradient,
    value_and_gradient,
)
from latent_forensics.autodiff.graph import ComputationGraph, GraphBuilder, Node
from latent_forensics.autodiff.optim import Adam, MomentumSGD
from latent_forensics.autodiff.tensor import Tensor, as_tensor

__all__ = [
    "Adam",
    "ComputationGraph",
    "GradientCheckReport",
    "GraphBuilder",
    "MomentumSGD",
    "Node",
    "Tensor",
    "as_tensor",
    "check_gradients",
    "decode_tensors",
    "encode_tensors",
    "evaluate",
    "forward_backward",
    "gradient",
    "load_tensors",
    "save_tensors",
    "value_and_gradient",
]
