"""Knowledge-enhanced language modelling with topic-entity fusion, in numpy."""

__version__ = "0.1.0"
