"""Placeholder, filled in shortly."""
