"""Simulation, null control and inequality checks for degenerate age-structured populations."""
