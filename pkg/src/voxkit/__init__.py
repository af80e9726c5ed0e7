"""voxkit: desk-scale voice enhancement sandbox.

Pieces: a seeded audio degradation simulator, a toy residual-vector-quantizer
codec, a masked generative sampler with prompt guidance and self-critic
scoring, and a small trainable transformer that exercises every loss.
"""

__version__ = "0.1.0"
