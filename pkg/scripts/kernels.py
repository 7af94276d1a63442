#!/usr/bin/env python3
"""
Smoothing kernels and the frequency weight density w.

Kernels are second-order, bounded and integrate to one; for d > 1 the
product of the univariate kernel across coordinates is used. The weight
density w drives the frequency integral of the contrast; the default is the
mixture 0.1 * N(0, 1) + 0.9 * U[-2, 2].
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid, trapezoid

from errors import ValidationError

KERNEL_FAMILIES = ('gaussian', 'epanechnikov', 'uniform')

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def _gaussian(v):
    return np.exp(-0.5 * v * v) / _SQRT_2PI


def _epanechnikov(v):
    return np.where(np.abs(v) <= 1.0, 0.75 * (1.0 - v * v), 0.0)


def _uniform(v):
    return np.where(np.abs(v) <= 1.0, 0.5, 0.0)


_UNIVARIATE = {
    'gaussian': _gaussian,
    'epanechnikov': _epanechnikov,
    'uniform': _uniform,
}


@dataclass(frozen=True)
class KernelFn:
    """Product kernel of one family in dimension d."""

    family: str = 'gaussian'
    d: int = 1

    def __post_init__(self):
        if self.family not in _UNIVARIATE:
            raise ValidationError(
                f"unknown kernel '{self.family}', expected one of {', '.join(KERNEL_FAMILIES)}")
        if self.d < 1:
            raise ValidationError(f"kernel dimension must be >= 1, got {self.d}")

    @property
    def compact(self):
        return self.family != 'gaussian'

    def __call__(self, v):
        """K(v) for v of shape (..., d); a 1-d kernel evaluates scalars and 1-d arrays elementwise."""
        v = np.asarray(v, dtype=float)
        if self.d == 1 and v.ndim <= 1:
            return _UNIVARIATE[self.family](v)
        if v.ndim == 0 or v.shape[-1] != self.d:
            raise ValidationError(
                f"kernel has dimension {self.d} but argument has shape {v.shape}")
        return np.prod(_UNIVARIATE[self.family](v), axis=-1)


def bandwidth(h):
    """Validate a bandwidth and return it as a float."""
    h = float(h)
    if not (np.isfinite(h) and h > 0.0):
        raise ValidationError(f"bandwidth must be a positive finite number, got {h}")
    return h


def scaled_kernel(kernel, h, v):
    """K_h(v) = h^{-d} K(v / h)."""
    h = bandwidth(h)
    return kernel(np.asarray(v, dtype=float) / h) / h ** kernel.d


def kernel_weights(kernel, h, x, x0):
    """K_h(X_k - x0) for every row of the (n, d) design x."""
    x = np.asarray(x, dtype=float)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape[0] != x.shape[1]:
        raise ValidationError(
            f"target point has dimension {x0.shape[0]} but the design has {x.shape[1]}")
    if kernel.d != x.shape[1]:
        raise ValidationError(
            f"kernel has dimension {kernel.d} but the design has {x.shape[1]}")
    diff = x - x0[None, :]
    if kernel.d == 1:
        return scaled_kernel(kernel, h, diff[:, 0])
    return scaled_kernel(kernel, h, diff)


@dataclass(frozen=True)
class WeightDensity:
    """Frequency weight density: the default mixture or a tabulated grid."""

    kind: str = 'normal_uniform'
    grid_u: tuple = field(default=(), repr=False)
    grid_pdf: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.kind not in ('normal_uniform', 'grid'):
            raise ValidationError(f"unknown weight density '{self.kind}'")
        if self.kind == 'grid':
            u = np.asarray(self.grid_u, dtype=float)
            p = np.asarray(self.grid_pdf, dtype=float)
            if u.ndim != 1 or u.shape != p.shape or u.size < 2:
                raise ValidationError("grid weight density needs matching 1-d u and pdf tables")
            if np.any(np.diff(u) <= 0):
                raise ValidationError("grid weight density needs strictly increasing u")
            if np.any(p < 0) or trapezoid(p, u) <= 0:
                raise ValidationError("grid weight density must be nonnegative with positive mass")

    @classmethod
    def from_grid(cls, u, pdf):
        """Tabulated density, renormalized to unit trapezoid mass."""
        u = np.asarray(u, dtype=float)
        p = np.asarray(pdf, dtype=float)
        p = p / trapezoid(p, u)
        return cls('grid', tuple(u.tolist()), tuple(p.tolist()))

    def pdf(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == 'normal_uniform':
            inside = (np.abs(u) <= 2.0).astype(float)
            return 0.1 * stats.norm.pdf(u) + 0.9 * 0.25 * inside
        return np.interp(u, self.grid_u, self.grid_pdf, left=0.0, right=0.0)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == 'normal_uniform':
            return 0.1 * stats.norm.cdf(u) + 0.9 * np.clip((u + 2.0) / 4.0, 0.0, 1.0)
        gu, gc = self._grid_cdf()
        return np.interp(u, gu, gc, left=0.0, right=1.0)

    def _grid_cdf(self):
        gu = np.asarray(self.grid_u)
        gc = cumulative_trapezoid(self.grid_pdf, gu, initial=0.0)
        return gu, gc / gc[-1]

    def sample(self, n_draws, seed):
        """n_draws i.i.d. frequencies from one seeded stream.

        Mixture: component pick (N(0,1) with probability 0.1) then inversion
        within the component, both from the same uniform pair.
        """
        if n_draws < 1:
            raise ValidationError(f"n_draws must be >= 1, got {n_draws}")
        rng = np.random.default_rng(seed)
        draws = rng.random((n_draws, 2))
        q = np.clip(draws[:, 1], 1e-300, 1.0 - 1e-16)
        if self.kind == 'normal_uniform':
            normal = stats.norm.ppf(q)
            flat = -2.0 + 4.0 * q
            return np.where(draws[:, 0] < 0.1, normal, flat)
        gu, gc = self._grid_cdf()
        return np.interp(q, gc, gu)

    def to_dict(self):
        if self.kind == 'normal_uniform':
            return {'kind': 'normal_uniform'}
        return {'kind': 'grid', 'u': list(self.grid_u), 'pdf': list(self.grid_pdf)}

    @classmethod
    def from_dict(cls, data):
        if data.get('kind', 'normal_uniform') == 'normal_uniform':
            return cls()
        return cls.from_grid(data['u'], data['pdf'])


DEFAULT_WEIGHT = WeightDensity()


def weight_pdf(w, u):
    """Density of the frequency weight at u."""
    value = w.pdf(u)
    return float(value) if np.ndim(value) == 0 else value


def weight_sample(w, n_draws, seed):
    """Deterministic i.i.d. draws from w."""
    return w.sample(n_draws, seed)


def trapezoid_quadrature(w, lo=-6.0, hi=6.0, n_nodes=2000):
    """Trapezoid nodes on [lo, hi] with weights folding in w(u) du."""
    nodes = np.linspace(lo, hi, n_nodes)
    step = (hi - lo) / (n_nodes - 1)
    weights = np.full(n_nodes, step)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    return nodes, weights * w.pdf(nodes)
