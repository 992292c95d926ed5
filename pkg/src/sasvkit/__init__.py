"""Spoofing-countermeasure back-ends, spoof-aware speaker verification via
selective self-distillation, and the EER evaluation pipeline."""

__version__ = "0.1.0"
