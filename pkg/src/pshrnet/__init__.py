"""Cross-resolution person re-identification at desk scale.

Pipeline pieces: a float64 autodiff tensor core, a channel-attention
super-resolution net, a four-stream multi-resolution re-ID backbone with a
pooled-sequence representation head, the joint training objective, a
two-phase pseudo-siamese trainer, and ranking / image-quality evaluation.
"""

from pshrnet.tensor import Tensor, ShapeError, ContractError

__all__ = ["Tensor", "ShapeError", "ContractError"]
__version__ = "0.1.0"
