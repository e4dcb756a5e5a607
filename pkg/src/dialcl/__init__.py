"""Two-level supervised contrastive learning for multi-turn response selection."""

__version__ = "0.1.0"
