#!/usr/bin/env python3
"""
errors.py - Exception hierarchy shared by the pricing modules

Library code raises these; only cli.py maps them to exit codes.
"""


class PricingError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PricingError, ValueError):
    """Input outside the documented domain of an operation."""


class ConfigurationError(PricingError, ValueError):
    """Malformed or incomplete run configuration."""


class ModelEvaluationError(PricingError):
    """A model function failed or returned a non-finite value."""


class NumericalError(PricingError):
    """A root finder, quadrature or optimizer could not deliver a result."""


class ArbitrageBoundsError(NumericalError):
    """Price outside the no-arbitrage bounds, so no implied vol exists."""
