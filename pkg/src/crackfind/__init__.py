"""Crack detection from boundary current-voltage measurements in 2D."""
