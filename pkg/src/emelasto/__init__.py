"""Energy-momentum consistent isogeometric elastodynamics for incompressible Ogden solids."""

__version__ = "0.1.0"
