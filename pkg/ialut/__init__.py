"""ialut: intensity-aware 4D lookup tables for low-light video enhancement."""

__version__ = "1.0.0"
