"""Vehicle/track co-simulation: embedded explicit track solver vs. implicit co-simulation."""

__version__ = "0.1.0"
