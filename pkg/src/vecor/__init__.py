"""Flow matching with velocity-contrastive regularization, at desk scale."""

__version__ = "0.1.0"
