"""Typed errors shared across the package.

Estimators and matrix builders raise these instead of returning sentinel
values, so callers know a quantity is undefined rather than zero.
"""

from __future__ import annotations


class MmruError(Exception):
    """Base class for all package errors."""


class NoDrawsForColor(MmruError):
    """Estimator undefined: color k has never been drawn (N_{A_k,n} = 0)."""

    def __init__(self, color: int):
        self.color = color
        super().__init__(f"no draws recorded for color {color}; estimator undefined")


class NoJointObservations(MmruError):
    """Cross-moment undefined: both candidate denominators are zero."""

    def __init__(self, k: int, s: int):
        self.pair = (k, s)
        super().__init__(f"no joint observations for colors {k} and {s}")


class NotPositiveDefinite(MmruError):
    """Cholesky pivot collapsed: the matrix is not positive definite."""


class DegenerateCovariance(MmruError):
    """The plug-in covariance matrix is singular or numerically near-singular."""


class InsufficientDraws(MmruError):
    """A tested arm has fewer draws than the minimum the test requires."""

    def __init__(self, color: int, have: int, need: int):
        self.color = color
        self.have = have
        self.need = need
        super().__init__(
            f"color {color} has {have} draws, below the required minimum {need}"
        )


class ScenarioError(MmruError):
    """A scenario file or config violates a model constraint (names the field)."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
