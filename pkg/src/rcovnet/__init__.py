"""Forecasting realized covariance matrices with a ConvLSTM.

Subpackages and modules:

``linalg``      SPD helpers, Wishart and matrix-F sampling, seeded RNG
``transforms``  matrix transforms, series containers, lag windows and splits
``simulator``   CAW/BEKK factor simulation and the factor embedding
``baselines``   MA, EMA, MFA-VAR and MFA-DCAW forecasters
``nn``          ConvLSTM engine, losses, Adam, training and checkpoints
``evaluation``  rolling evaluation, diagnostics and CSV output
``cli``         the ``rcovnet`` command
"""
from rcovnet._backend import NAME as BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
