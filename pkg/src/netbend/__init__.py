"""netbend: insert deterministic transform layers into a convolutional
generator and cluster its features by activation-map similarity."""

__version__ = "0.1.0"
