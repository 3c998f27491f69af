"""csilab: a continual-learning laboratory for deep CSI feedback compression.

Trains an autoencoder-style CSI compressor across a sequence of channel
distributions and uses compact stored generative models as replay memory, so
earlier distributions stay decodable without retaining their raw samples.
"""

__version__ = "0.1.0"
