"""Configuration module for the KVW unlearning engine."""
from .settings import Settings, settings

__all__ = ["Settings", "settings"]
