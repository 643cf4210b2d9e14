"""zcurate: desk-scale training-data curation engine."""

__version__ = "0.1.0"
