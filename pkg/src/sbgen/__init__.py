"""Sequential Boltzmann generators."""
