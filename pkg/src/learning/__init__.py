"""Network substrate, recurrent SAC and the primal-dual training loop."""
