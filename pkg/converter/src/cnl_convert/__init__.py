"""Dataset converters emitting the neutral graph-bundle directory format."""

from cnl_convert.manifest import ConversionManifest, verify_bundle
from cnl_convert.planetoid import convert_planetoid
from cnl_convert.twitch import convert_twitch

__version__ = "0.1.0"

__all__ = [
    "ConversionManifest",
    "convert_planetoid",
    "convert_twitch",
    "verify_bundle",
    "__version__",
]
