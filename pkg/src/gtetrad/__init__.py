"""Classical and generalized tetrad tests for latent conditional independence."""

__version__ = "0.1.0"
