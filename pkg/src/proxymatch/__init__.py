"""Proxy-mediated point cloud matching and geometric shape assembly."""

__version__ = "0.1.0"
