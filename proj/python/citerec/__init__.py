"""Two-stage local citation recommendation: HAtten prefetching + cross-encoder reranking."""

from ._core import *  # noqa: F401,F403
from ._core import SyntheticConfig, make_synthetic_corpus

__version__ = "0.1.0"


def make_synthetic(**overrides):
    """Generate a synthetic corpus; keyword arguments override SyntheticConfig fields."""
    cfg = SyntheticConfig()
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise TypeError(f"unknown synthetic option: {key}")
        setattr(cfg, key, value)
    return make_synthetic_corpus(cfg)
