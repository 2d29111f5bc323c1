# Numerical laboratory for the network formation system
__version__ = "0.1.0"
