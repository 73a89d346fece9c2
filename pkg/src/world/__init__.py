"""Grid world, particle-filter belief and low-level navigation."""
