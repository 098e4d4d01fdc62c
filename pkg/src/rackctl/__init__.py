"""Closed-loop simulator of an air-cooled GPU rack serving LLM inference."""

__version__ = "0.1.0"
