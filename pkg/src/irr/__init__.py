"""Two-stage generative recommender with hierarchical semantic IDs.

Stage 1 quantizes item content embeddings into L-level codes via residual
k-means (final level disambiguates collisions). Stage 2 trains a shared
recursive codebook assigner plus a compact causal backbone: one token per
history item, one backbone pass per decode, level-wise beam search inside
the assigner. A flattened-token baseline is included for efficiency
comparisons.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as kernel_backend  # noqa: F401
