"""Desk-scale simulator of federated LoRA fine-tuning under model manipulation."""

__version__ = "0.1.0"
