"""djscc: a desk-scale lab for learned joint source-channel image transmission."""

__version__ = "0.1.0"

from .channel import ChannelState, ChannelSymbolBlock  # noqa: F401
from .codec import CodecConfig, JsccModel, LatentLayers  # noqa: F401
from .data import DatasetSplit, ImageTensor  # noqa: F401
from .metrics import ms_ssim, psnr  # noqa: F401
