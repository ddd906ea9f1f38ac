"""Permeable-wall annular flow: vorticity-velocity solver and inviscid-limit diagnostics."""
