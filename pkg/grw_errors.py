#!/usr/bin/env python3
"""
Exception hierarchy for the GRW geodesic toolkit.

Numerical non-results (divergent integrals, escapes, inapplicable
definitions) are returned as values; only misuse of an operation raises.
"""


class GRWError(Exception):
    """Base class for every error raised by the toolkit"""


class DomainError(GRWError):
    """A point, parameter or dimension lies outside the model it refers to"""


class PreconditionError(GRWError):
    """An operation was invoked outside the hypotheses it needs"""


class ConfigError(GRWError):
    """A run configuration could not be parsed or validated"""
