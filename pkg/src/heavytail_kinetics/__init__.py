"""Heavy-tailed linear kinetic equations: simulation and hypocoercivity diagnostics."""
__version__ = "0.1.0"
