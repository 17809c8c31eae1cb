"""Robust variational autoencoder: beta-cross-entropy losses, standard VAE
baseline, contamination experiment harnesses, and a reproducible CLI."""

__version__ = "0.1.0"
