"""GMsFEM for 2D linear elasticity in high-contrast media."""
