"""Multi-aspect sentiment analysis with latent sentence-level aspect attribution.

Documents tagged only with document-level ratings (one overall, one per
aspect) train a model that also infers, per sentence, which aspect it
talks about and how positive it is. Built on a small float64 reverse-mode
autodiff engine with finite-difference verification throughout.
"""

__version__ = "0.1.0"

from .autodiff import Graph, Tensor, backward, grad_check  # noqa: F401
from .encoders import EncoderConfig  # noqa: F401
from .heads import HeadConfig  # noqa: F401
from .model import SaamModel  # noqa: F401
from .training import TrainConfig, load_checkpoint, save_checkpoint, train  # noqa: F401
