"""Latent Gaussian model assembly and nested Laplace inference."""
from .inla import GaussianApprox, HyperPoint, InlaEngine, fit_model, parallel_map
from .model import (AssembledModel, Block, Component, ModelData, ModelSpec, Scaling, Term,
                    assemble)
from .results import ComponentSummary, FitResult, HyperSummary, dic

__all__ = [
    "AssembledModel", "Block", "Component", "ComponentSummary", "FitResult", "GaussianApprox",
    "HyperPoint", "HyperSummary", "InlaEngine", "ModelData", "ModelSpec", "Scaling", "Term",
    "assemble", "dic", "fit_model", "parallel_map",
]
