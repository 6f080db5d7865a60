"""Quaternion-based recurrent human motion prediction and locomotion generation."""

__version__ = "0.1.0"
