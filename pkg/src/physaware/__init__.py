"""Physics-aware machine learning toolkit: hybrid GPs, kernel regressions with
physical constraints, emulation, latent force models and equation discovery."""

__version__ = "0.1.0"
