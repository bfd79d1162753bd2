"""Entangled residual mappings: skip connections ``x -> x @ G`` with structured ``G``."""
from .entangle import (EntanglementSpec, SpecError, make_channel_kernel, make_dense_gamma,
                       make_orthogonal_channel_kernel, make_orthogonal_gamma, make_spatial_kernel,
                       spectrum_report)
from .refine import lemma1_bounds, refinement_report, trace_refinement

__version__ = "0.1.0"

__all__ = [
    "EntanglementSpec",
    "SpecError",
    "make_channel_kernel",
    "make_dense_gamma",
    "make_orthogonal_channel_kernel",
    "make_orthogonal_gamma",
    "make_spatial_kernel",
    "spectrum_report",
    "lemma1_bounds",
    "refinement_report",
    "trace_refinement",
]
