#!/usr/bin/env python3
"""
Model core: parameter space, sample container and the transfer function.

The two-component model at a design point x0 is

    Y = a(x0) + e   with probability pi(x0)
    Y = b(x0) + e   otherwise,

with e symmetric around zero. Its conditional characteristic function factors
as M(theta, u) * f*(u), where

    M(t, u) = pi * exp(i u a) + (1 - pi) * exp(i u b)

is the transfer function of the two locations. Everything downstream works
with the real and imaginary parts of M directly.
"""

import math
from dataclasses import dataclass

import numpy as np

from errors import DegenerateTransferError, ValidationError

# |M(t,u)| below this is treated as a division by zero.
TRANSFER_FLOOR = 1e-12


@dataclass(frozen=True)
class ThetaPoint:
    """Parameter (pi, a, b) at one design point."""

    pi: float
    a: float
    b: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.pi, self.a, self.b)):
            raise ValidationError(f"ThetaPoint has non-finite entries: {self}")
        if not 0.0 < self.pi < 1.0:
            raise ValidationError(f"pi must lie in (0, 1), got {self.pi}")

    @classmethod
    def from_array(cls, values):
        pi, a, b = (float(v) for v in values)
        return cls(pi, a, b)

    def as_array(self):
        return np.array([self.pi, self.a, self.b], dtype=float)

    def swapped(self):
        """The label-switched representation (1 - pi, b, a) of the same mixture."""
        return ThetaPoint(1.0 - self.pi, self.b, self.a)

    def to_dict(self):
        return {'pi': self.pi, 'a': self.a, 'b': self.b}


@dataclass(frozen=True)
class ParamSpace:
    """Box [pi_lo, pi_hi] x [loc_lo, loc_hi]^2 searched by the estimator."""

    loc_lo: float
    loc_hi: float
    pi_lo: float = 0.05
    pi_hi: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.pi_lo <= self.pi_hi < 1.0:
            raise ValidationError(
                f"need 0 < pi_lo <= pi_hi < 1, got [{self.pi_lo}, {self.pi_hi}]")
        if not (math.isfinite(self.loc_lo) and math.isfinite(self.loc_hi)):
            raise ValidationError("location bounds must be finite")
        if not self.loc_lo < self.loc_hi:
            raise ValidationError(
                f"need loc_lo < loc_hi, got [{self.loc_lo}, {self.loc_hi}]")

    @classmethod
    def from_responses(cls, y, strict=False, pad=0.1):
        """Box covering the observed response range, padded by `pad` * range.

        strict=True narrows the proportion interval to [0.05, 0.45], inside the
        region where the model is identifiable.
        """
        y = np.asarray(y, dtype=float)
        lo, hi = float(np.min(y)), float(np.max(y))
        span = hi - lo if hi > lo else 1.0
        pi_hi = 0.45 if strict else 0.95
        return cls(loc_lo=lo - pad * span, loc_hi=hi + pad * span, pi_lo=0.05, pi_hi=pi_hi)

    @property
    def lower(self):
        return np.array([self.pi_lo, self.loc_lo, self.loc_lo])

    @property
    def upper(self):
        return np.array([self.pi_hi, self.loc_hi, self.loc_hi])

    @property
    def loc_width(self):
        return self.loc_hi - self.loc_lo

    def contains(self, t):
        v = t.as_array()
        return bool(np.all(v >= self.lower) and np.all(v <= self.upper))

    def reflect(self, values):
        """Fold an unconstrained vector back into the box by mirror reflection."""
        v = np.asarray(values, dtype=float)
        lo, hi = self.lower, self.upper
        width = hi - lo
        # a zero-width coordinate is pinned at its bound
        span = np.where(width > 0.0, 2.0 * width, 1.0)
        r = np.mod(v - lo, span)
        r = np.where(r > width, 2.0 * width - r, r)
        inside = (v >= lo) & (v <= hi)
        return np.where(width > 0.0, np.where(inside, v, lo + r), lo)

    def distance_to_boundary(self, t):
        v = t.as_array()
        return float(np.min(np.minimum(v - self.lower, self.upper - v)))

    def to_dict(self):
        return {'pi_lo': self.pi_lo, 'pi_hi': self.pi_hi,
                'loc_lo': self.loc_lo, 'loc_hi': self.loc_hi}


@dataclass(frozen=True)
class Observation:
    x: tuple
    y: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.x) or not math.isfinite(self.y):
            raise ValidationError(f"observation has non-finite coordinates: {self}")


class Dataset:
    """Sample (X_i, Y_i), X_i in R^d, stored as an (n, d) array and an (n,) array."""

    def __init__(self, x, y):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(y, dtype=float).ravel()
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ValidationError(
                f"design has shape {x.shape} but there are {y.shape[0]} responses")
        if x.shape[0] == 0:
            raise ValidationError("dataset is empty")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValidationError("dataset contains non-finite values")
        self.x = x
        self.y = y
        self.x.setflags(write=False)
        self.y.setflags(write=False)

    @classmethod
    def from_observations(cls, observations):
        observations = list(observations)
        if not observations:
            raise ValidationError("dataset is empty")
        dims = {len(o.x) for o in observations}
        if len(dims) != 1:
            raise ValidationError(f"observations have mixed dimensions {sorted(dims)}")
        x = np.array([o.x for o in observations], dtype=float)
        y = np.array([o.y for o in observations], dtype=float)
        return cls(x, y)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    @property
    def observations(self):
        return [Observation(tuple(float(v) for v in xi), float(yi))
                for xi, yi in zip(self.x, self.y)]

    def subset(self, mask):
        return Dataset(self.x[mask], self.y[mask])

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"Dataset(n={self.n}, d={self.d})"


def transfer_parts(t, u):
    """Real and imaginary parts of M(t, u); u may be a scalar or an array."""
    u = np.asarray(u, dtype=float)
    re = t.pi * np.cos(u * t.a) + (1.0 - t.pi) * np.cos(u * t.b)
    im = t.pi * np.sin(u * t.a) + (1.0 - t.pi) * np.sin(u * t.b)
    return re, im


def transfer(t, u):
    """M(t, u) = pi e^{iua} + (1 - pi) e^{iub} as a complex value (or array)."""
    re, im = transfer_parts(t, u)
    return re + 1j * im


def check_transfer(modulus_sq):
    """Raise if |M| fell below the floor anywhere."""
    if np.any(modulus_sq < TRANSFER_FLOOR ** 2):
        raise DegenerateTransferError(
            f"|M(t,u)| < {TRANSFER_FLOOR:g}; parameter lies outside the identifiable space")


def imag_ratio(t, g_star, u):
    """Im(g_star / M(t, u)).

    Vanishes for every u exactly when g_star is M(theta0, u) times a real
    function and t equals theta0 up to label swap.
    """
    re, im = transfer_parts(t, u)
    modulus_sq = re * re + im * im
    check_transfer(modulus_sq)
    g = np.asarray(g_star, dtype=complex)
    # Im(g * conj(M)) / |M|^2
    value = (g.imag * re - g.real * im) / modulus_sq
    return float(value) if np.ndim(value) == 0 else value
