"""CT-to-printable-mesh pipeline for bone models."""

__version__ = "0.1.0"
