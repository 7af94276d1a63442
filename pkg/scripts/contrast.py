#!/usr/bin/env python3
"""
Empirical contrast and its Monte-Carlo approximation.

For observation k at frequency u,

    Z_k(t, u, h) = (e^{iuY_k} / M(t,u) - e^{-iuY_k} / M(t,-u)) K_h(X_k - x0)

is purely imaginary, Z_k = i z_k with z_k = 2 Im(e^{iuY_k} / M(t,u)) kappa_k.
The U-statistic contrast

    S_n(t) = -1/(4 n (n-1)) sum_{j != k} int Z_k Z_j w(u) du

is therefore +1/(4 n (n-1)) int [(sum_k z_k)^2 - sum_k z_k^2] w(u) du, which
costs O(n) per frequency instead of O(n^2). The Monte-Carlo version replaces
the integral by an average over N frequencies drawn once from w.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from console import log
from errors import InsufficientDataError, ValidationError
from kernels import DEFAULT_WEIGHT, KernelFn, WeightDensity, bandwidth, kernel_weights, weight_sample
from model_core import ThetaPoint, check_transfer, transfer_parts


@dataclass(frozen=True)
class ContrastConfig:
    """Evaluation context of the contrast at one target point."""

    x0: tuple
    h: float
    kernel: KernelFn = field(default_factory=KernelFn)
    weight: WeightDensity = DEFAULT_WEIGHT
    n_mc: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'x0', tuple(float(v) for v in np.atleast_1d(self.x0)))
        object.__setattr__(self, 'h', bandwidth(self.h))
        if int(self.n_mc) < 1:
            raise ValidationError(f"n_mc must be >= 1, got {self.n_mc}")
        object.__setattr__(self, 'n_mc', int(self.n_mc))
        object.__setattr__(self, 'seed', int(self.seed))

    def at(self, x0=None, h=None, seed=None, n_mc=None):
        """Copy with some fields replaced."""
        changes = {}
        if x0 is not None:
            changes['x0'] = x0
        if h is not None:
            changes['h'] = h
        if seed is not None:
            changes['seed'] = seed
        if n_mc is not None:
            changes['n_mc'] = n_mc
        return replace(self, **changes)


def z_term(t, u, y, kappa):
    """Real coefficient z of Z_k = i z for a single (u, Y_k, kappa_k)."""
    re, im = transfer_parts(t, u)
    modulus_sq = re * re + im * im
    check_transfer(modulus_sq)
    return float(2.0 * kappa * (np.sin(u * y) * re - np.cos(u * y) * im) / modulus_sq)


def z_matrix(t, nodes, y, kappa):
    """z coefficients for all (node r, observation k): shape (len(nodes), len(y))."""
    nodes = np.asarray(nodes, dtype=float)
    y = np.asarray(y, dtype=float)
    angle = np.outer(nodes, y)
    return _z_from_trig(t, nodes, np.cos(angle), np.sin(angle), np.asarray(kappa, dtype=float))


def _z_from_trig(t, nodes, cos_uy, sin_uy, kappa):
    re, im = transfer_parts(t, nodes)
    modulus_sq = re * re + im * im
    check_transfer(modulus_sq)
    scale = 2.0 / modulus_sq
    return (sin_uy * (re * scale)[:, None] - cos_uy * (im * scale)[:, None]) * kappa[None, :]


def pair_sums(z):
    """Per-node sum over ordered pairs j != k of z_j z_k, i.e. (sum z)^2 - sum z^2."""
    total = np.sum(z, axis=1)
    return total * total - np.sum(z * z, axis=1)


class ContrastEvaluator:
    """Contrast at one target point for one dataset.

    Kernel weights, Monte-Carlo frequency nodes and the trigonometric tables
    cos(U_r Y_k), sin(U_r Y_k) are computed once; every later evaluation only
    recombines them with M(t, U_r). Observations with zero kernel weight are
    dropped from the tables since their z terms vanish identically.
    """

    def __init__(self, config, dataset):
        if dataset.n < 2:
            raise InsufficientDataError(
                f"the contrast needs at least 2 observations, got {dataset.n}")
        self.config = config
        self.dataset = dataset
        self.n = dataset.n
        self.kappa = kernel_weights(config.kernel, config.h, dataset.x, config.x0)
        self.kappa.setflags(write=False)

        active = np.flatnonzero(self.kappa != 0.0)
        self._active_kappa = self.kappa[active]
        self._active_y = dataset.y[active]
        self.n_active = active.size
        if self.n_active == 0:
            log(f"no local kernel mass at x0={config.x0} (h={config.h:.4g}); contrast is 0",
                level='warning')
        elif self.n_active < 2:
            log(f"only one observation carries kernel mass at x0={config.x0}; contrast is 0",
                level='warning')

        self.nodes = weight_sample(config.weight, config.n_mc, config.seed)
        self.nodes.setflags(write=False)
        angle = np.outer(self.nodes, self._active_y)
        self._cos = np.cos(angle)
        self._sin = np.sin(angle)
        self._norm = 4.0 * self.n * (self.n - 1)

    @property
    def local_mass(self):
        """Design density estimate (1/n) sum_k kappa_k at x0."""
        return float(np.sum(self.kappa) / self.n)

    @property
    def effective_size(self):
        """sum_k kappa_k / max_k kappa_k, the number of observations the kernel really uses."""
        top = float(np.max(self.kappa)) if self.n else 0.0
        return float(np.sum(self.kappa) / top) if top > 0 else 0.0

    def min_transfer_modulus(self, t):
        """min_r |M(t, U_r)| over the cached nodes; z terms scale like its inverse."""
        re, im = transfer_parts(t, self.nodes)
        return float(np.sqrt(np.min(re * re + im * im)))

    def node_contributions(self, t):
        """Per-node terms whose mean is the Monte-Carlo contrast."""
        if self.n_active < 2:
            return np.zeros(self.nodes.shape[0])
        z = _z_from_trig(t, self.nodes, self._cos, self._sin, self._active_kappa)
        return pair_sums(z) / self._norm

    def mc(self, t):
        return mc_contrast(self, t)


def empirical_contrast(ev, t, quadrature):
    """S_n(t) with the frequency integral replaced by the given (nodes, weights) rule.

    The weights must already include w(u) du (see kernels.trapezoid_quadrature).
    """
    nodes, weights = quadrature
    nodes = np.asarray(nodes, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if nodes.shape != weights.shape:
        raise ValidationError("quadrature nodes and weights differ in length")
    if ev.n_active < 2:
        return 0.0
    z = z_matrix(t, nodes, ev._active_y, ev._active_kappa)
    return float(np.sum(weights * pair_sums(z)) / ev._norm)


def mc_contrast(ev, t):
    """S^MC_n(t): average over the evaluator's cached frequency nodes."""
    return float(np.mean(ev.node_contributions(t)))


def contrast_gradient_fd(ev, t, step=1e-4):
    """Central finite-difference gradient of mc_contrast in (pi, a, b)."""
    steps = np.broadcast_to(np.asarray(step, dtype=float), (3,))
    if np.any(steps <= 0):
        raise ValidationError(f"finite-difference step must be positive, got {step}")
    base = t.as_array()
    if not (0.0 < base[0] - steps[0] and base[0] + steps[0] < 1.0):
        raise ValidationError(
            f"pi={base[0]} +/- {steps[0]} leaves (0, 1); reduce the step")
    grad = np.empty(3)
    for i in range(3):
        offset = np.zeros(3)
        offset[i] = steps[i]
        upper = mc_contrast(ev, ThetaPoint.from_array(base + offset))
        lower = mc_contrast(ev, ThetaPoint.from_array(base - offset))
        grad[i] = (upper - lower) / (2.0 * steps[i])
    return grad
