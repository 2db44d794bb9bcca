"""Compact-CNN toolkit: cost analysis, architecture transformation and
knowledge distillation on a small numpy-backed autodiff engine."""

__version__ = "0.1.0"
