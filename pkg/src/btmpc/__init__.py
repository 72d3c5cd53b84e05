"""Battery thermal and energy management with single- and two-layer MPC."""
