"""Single-hydrophone waveguide-invariant ranging and particle-filter AUV navigation."""

__version__ = "0.1.0"
