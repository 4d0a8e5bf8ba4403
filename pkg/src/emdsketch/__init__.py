"""Sparse recovery of nonnegative 2-D images under the Earth-Mover Distance.

Linear sketches built from dyadic embeddings (pyramid cell sums or a
reweighted non-standard Haar basis), three recovery schemes (dense
general-sparse, deterministic tree-CoSaMP, randomized support finding
plus set query), exact EMD oracles, and a CLI experiment harness.
"""

from .core import CellId, GridImage, PyramidCoeffs, TreeSupport, read_image, write_image
from .emd import FlowPlan, emd_equal_mass, emd_norm
from .haar import HaarCoeffs, haar_inverse, haar_transform
from .pipeline import SCHEMES, SchemeConfig, recover, run_trial, sketch, strict_sparsify
from .pyramid import (
    alignment_certificate,
    invert_nonneg_surpluses,
    make_nonneg_surpluses,
    pyramid_invert,
    pyramid_transform,
)
from .sparsemodel import ModelSpec, embed_sparse_in_tree, model_contains, tree_project

__all__ = [
    "CellId",
    "GridImage",
    "PyramidCoeffs",
    "TreeSupport",
    "FlowPlan",
    "HaarCoeffs",
    "ModelSpec",
    "SCHEMES",
    "SchemeConfig",
    "alignment_certificate",
    "emd_equal_mass",
    "emd_norm",
    "embed_sparse_in_tree",
    "haar_inverse",
    "haar_transform",
    "invert_nonneg_surpluses",
    "make_nonneg_surpluses",
    "model_contains",
    "pyramid_invert",
    "pyramid_transform",
    "read_image",
    "recover",
    "run_trial",
    "sketch",
    "strict_sparsify",
    "tree_project",
    "write_image",
]

__version__ = "0.1.0"
