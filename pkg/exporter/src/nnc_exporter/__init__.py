"""Keras HDF5 -> nnc JSON model document converter."""

from .export import ExportManifest, UnsupportedLayer, export_model, export_file

__all__ = ["ExportManifest", "UnsupportedLayer", "export_model", "export_file"]

__version__ = "0.1.0"
