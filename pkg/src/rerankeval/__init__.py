"""Offline evaluation harness for LLM re-ranking of recommender slates."""

__version__ = "0.1.0"
