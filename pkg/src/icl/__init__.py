"""Dual-feature contrastive recognition for ship-radiated noise.

Mel and CQT spectrograms feed two residual convolutional encoders whose
embeddings are tied together by a cosine-similarity contrastive term and
summed for a shared linear classifier; class activation maps explain
what each encoder attends to.
"""

__version__ = "0.1.0"
