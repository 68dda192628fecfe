"""Radial functions carried together with their derivative."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline


@dataclass(frozen=True)
class RadialFunction:
    f: Callable
    df: Callable
    label: str = ""

    def __call__(self, r):
        return self.f(np.asarray(r, dtype=float))

    def derivative(self, r):
        return self.df(np.asarray(r, dtype=float))

    @classmethod
    def constant(cls, c, label=""):
        return cls(lambda r: np.full(np.shape(r), float(c)),
                   lambda r: np.zeros(np.shape(r)), label or f"const({c:g})")

    @classmethod
    def from_samples(cls, r, values, label="samples"):
        spline = CubicSpline(np.asarray(r, float), np.asarray(values, float))
        return cls(spline, spline.derivative(), label)


def as_radial(w, dw=None) -> RadialFunction:
    """Coerce ``w`` into a :class:`RadialFunction`.

    Accepts a RadialFunction (or anything with ``derivative``), a callable
    plus an explicit derivative ``dw``, or a pair ``(r_samples, values)``.
    """
    if isinstance(w, RadialFunction):
        return w
    if hasattr(w, "derivative") and callable(w):
        return RadialFunction(w, w.derivative)
    if isinstance(w, tuple) and len(w) == 2 and not callable(w[0]):
        return RadialFunction.from_samples(*w)
    if callable(w) and dw is not None:
        return RadialFunction(w, dw)
    raise TypeError("need a RadialFunction, (r, values) samples, or w with dw")
