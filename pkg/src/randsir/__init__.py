"""SIR models with vital dynamics, reinfection and random forcing."""

__version__ = "0.1.0"
