"""High-level move/localize planners."""
