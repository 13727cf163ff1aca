"""Distributed H-infinity minimum-energy filters for sensor networks.

The package designs a network of coupled filters by semidefinite
programming, integrates their Riccati equations and checks the resulting
global and local attenuation guarantees by simulation.
"""

__version__ = "0.1.0"
