"""Training-free open-vocabulary 3D scene segmentation and querying."""

__version__ = "0.1.0"
