"""Adversarial dual-game contrastive pretraining over skeleton graphs.

Thin python surface over the C++ core: synthetic data generation, SKL1
file I/O, min-max pretraining, the four evaluation protocols, feature
embedding, and two-stream score fusion.
"""

from ._dmmg import (
    DmmgError,
    __version__,
    embed,
    evaluate,
    fuse,
    generate_dataset,
    load_skl,
    pretrain,
    rotate,
    save_skl,
)

__all__ = [
    "DmmgError",
    "__version__",
    "embed",
    "evaluate",
    "fuse",
    "generate_dataset",
    "load_skl",
    "pretrain",
    "rotate",
    "save_skl",
]
