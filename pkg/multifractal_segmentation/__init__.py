"""Multifractal water body segmentation for optical and SAR rasters."""
import importlib.metadata

__version__ = importlib.metadata.version("multifractal-segmentation")
