"""Virtual battery identification for thermostatically controlled load ensembles."""

__version__ = "0.1.0"
