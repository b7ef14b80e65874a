"""GAN training regularized by a differentiable fuzzy-logic knowledge base."""

__version__ = "0.1.0"
