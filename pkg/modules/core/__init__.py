"""Core numeric modules for lemon billiards."""
