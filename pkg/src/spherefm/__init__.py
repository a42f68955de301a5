"""Sphere face model: a linear shape model with a hypersphere latent space."""

from .corpus import LabeledCorpus, load_corpus, save_corpus
from .mesh import Mesh, NeighborGraph, SymmetryMap, load_obj, save_obj
from .model import (
    ShapeCode,
    SphereFaceModel,
    fit_pca,
    identity,
    interpolate_codes,
    load_model,
    orthonormalize,
    project,
    reconstruct,
    save_model,
    slerp_identity,
)

__version__ = "0.1.0"
