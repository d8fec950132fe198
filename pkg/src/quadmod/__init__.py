"""Four-dimensional dual-polarization modulation: constellations, SER, PAPR and timing sync."""

__version__ = "0.1.0"
