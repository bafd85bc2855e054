"""Deep metric learning with synthesized intra-class variants and a smooth ranking loss."""

from .errors import (
    DimensionMismatch,
    EmptyAnchors,
    EmptyGallery,
    InsufficientClasses,
    MissingProxy,
    NormUnderflow,
    ParseError,
    StaleCache,
    UnknownParam,
    ValidationError,
)
from .hyperparams import HyperParams
from .losses import (
    AnchorSimilarityTable,
    LossValueWithGrad,
    ProxyBank,
    anchor_loss,
    combined_loss,
    hand_in_hand_loss,
    left_base_loss,
    proxy_anchor_loss,
    ranking_loss,
    right_base_loss,
    sort_loss,
)
from .numerics import cosine_similarity, l2_normalize, smooth_max_hinge

__version__ = "0.1.0"
