"""Speech-driven 3D facial motion synthesis with a stylizable motion memory."""

__version__ = "0.1.0"
