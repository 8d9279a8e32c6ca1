"""Local models of the triangle network in the fully symmetric subspace."""

__version__ = "0.1.0"
