"""MILP modelling, solver backends and the exhaustive oracle."""
