"""hubforge: package, register, serve, and benchmark inference models."""

__version__ = "0.1.0"
