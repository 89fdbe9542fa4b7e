"""Fisher-information geometry of differentiable dynamics and learned models."""

__version__ = "0.1.0"

from . import datagen, dynamics, estimator, fidelity, fisher, nets, numerics, training

__all__ = ["datagen", "dynamics", "estimator", "fidelity", "fisher", "nets",
           "numerics", "training", "__version__"]
