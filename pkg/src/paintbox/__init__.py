"""Interactive volumetric semantic labelling with an online random forest."""

__version__ = "0.1.0"
