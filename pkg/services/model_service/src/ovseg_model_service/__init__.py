"""HTTP model service speaking the feature-provider wire protocol."""

__version__ = "0.1.0"
