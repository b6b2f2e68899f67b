"""caprank: caption-preference collection, reward-head training, and
top-k% compression of image-text corpora."""

__version__ = "0.1.0"
