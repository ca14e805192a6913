"""Serendipity virtual element solver for 3D magnetostatics on polyhedral meshes."""

__version__ = "0.1.0"
