"""Unique continuation from subdomain data with reduced bases and operator networks."""

__version__ = "0.1.0"
