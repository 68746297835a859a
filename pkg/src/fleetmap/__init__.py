"""fleetmap: multi-robot object-map fusion, relocalization, and
language-grounded task planning workbench."""

__version__ = "0.1.0"
