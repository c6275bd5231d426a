"""Intention-conditioned 3D affordance grounding at desk scale.

A self-contained pipeline: a numpy-backed autodiff tensor engine, a
point-cloud encoder/decoder backbone, cross-modal feature fusion driven
by stub language-model hidden states, multi-scale geometry lifting of the
intention embedding, per-point affordance decoding, training losses,
segmentation metrics, and a point-cloud corruption benchmark.
"""

from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "no_grad", "__version__"]
