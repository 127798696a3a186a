"""Desk-scale sound event detection lab.

A self-contained pipeline: mel-spectrogram frontend over synthetic scenes,
a patch Transformer encoder, a relative-position Transformer context network
pre-trained by masked reconstruction, mean-teacher fine-tuning with
global-local feature fusion, and PSDS-style evaluation. Everything runs on
a small hand-rolled float32 autodiff engine.
"""

__version__ = "0.1.0"
