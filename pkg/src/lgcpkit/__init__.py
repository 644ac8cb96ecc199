"""Log-Gaussian Cox process toolkit: lattice fitting with constructed covariates."""
__version__ = "0.1.0"
