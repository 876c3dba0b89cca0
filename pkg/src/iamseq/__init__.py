"""Integrated-attention BiLSTM toolkit for multivariate fault classification."""

__version__ = "0.1.0"
