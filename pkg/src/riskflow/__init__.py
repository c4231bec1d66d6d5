"""Agent-based and continuum models of economic variables in a risk-grade domain."""

from riskflow.errors import RiskflowError

__version__ = "0.1.0"

__all__ = ["RiskflowError", "__version__"]
