"""Landau levels on a magnetic torus: bases, projectors, phase-space symbols and mean-field studies."""
