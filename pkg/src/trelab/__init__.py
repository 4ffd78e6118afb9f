"""Generative pre-training and fine-tuning for relation extraction.

A decoder-only transformer language model is first pre-trained on plain
text, then fine-tuned on labeled relation examples with a structured input
encoding, optional entity masking, and an auxiliary language-modeling
objective.
"""

from .kernels import available_backends, backend_name

__version__ = "0.1.0"

__all__ = ["__version__", "backend_name", "available_backends"]
