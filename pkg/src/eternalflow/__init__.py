"""Formal expansions of eternal forced mean curvature flows of small spheres
along negative gradient lines of scalar curvature."""

__version__ = "0.1.0"
