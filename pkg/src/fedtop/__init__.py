"""Three-operator consensus ADMM and federated-learning simulation."""

__version__ = "0.1.0"
