"""Lemon billiards modules package."""
