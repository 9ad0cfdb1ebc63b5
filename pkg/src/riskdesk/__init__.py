"""riskdesk: desk-scale autonomous risk investigation engine."""

__version__ = "0.1.0"
