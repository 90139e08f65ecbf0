"""Contact-guided diffusion for generating an interacting body next to a partner."""

__version__ = "0.1.0"
