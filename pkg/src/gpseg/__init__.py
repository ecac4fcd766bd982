"""Matched-asymptotics construction of segregated radial solutions to a
two-component Gross-Pitaevskii system."""

__version__ = "0.1.0"
