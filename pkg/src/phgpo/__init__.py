"""Pheromone-guided policy optimisation for multi-step tool planning at desk scale."""

__version__ = "0.1.0"
