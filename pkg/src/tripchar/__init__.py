"""Multiple-trip-point device characterization with NN-seeded GA worst-case search."""

__version__ = "0.1.0"
