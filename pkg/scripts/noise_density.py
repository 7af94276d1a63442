#!/usr/bin/env python3
"""
Local error density at a design point by Fourier inversion.

Given an estimate theta_hat(x0), the conditional characteristic function of Y
divided by the transfer function M(theta_hat, u) estimates the characteristic
function of the symmetric error. Smoothed by a gaussian Q (so Q*(v) = e^{-v^2/2}),
localized by K_{h2}, and inverted numerically on a uniform frequency grid:

    phi*(u)  = (1/n) sum_k Q*(h1 u) e^{iuY_k} / M(theta_hat, u) K_{h2}(X_k - x0)
    f_n(y)   = (1/2pi) int e^{-iuy} phi*(u) du / l_n(x0)
    f_hat(y) = f_n(y) 1{f_n >= 0} / int f_n 1{f_n >= 0}

The bandwidth defaults are heuristics; no consistency rate is claimed for them.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from errors import (InversionWindowError, NumericalError, ValidationError,
                    VanishingDesignDensityError)
from kernels import KernelFn, bandwidth, kernel_weights
from model_core import check_transfer, transfer_parts

Q_KERNELS = ('gaussian',)

DESIGN_DENSITY_FLOOR = 1e-8
EDGE_RATIO = 1e-4
Q_TRUNCATION = 1e-9
U_NODES = 4096
Y_NODES = 512
U_CHUNK = 512


@dataclass(frozen=True)
class DensityConfig:
    x0: tuple
    h1: float
    h2: float
    y_grid: np.ndarray = field(repr=False)
    u_grid: np.ndarray = field(repr=False)
    kernel: KernelFn = field(default_factory=KernelFn)
    q_kernel: str = 'gaussian'

    def __post_init__(self):
        object.__setattr__(self, 'x0', tuple(float(v) for v in np.atleast_1d(self.x0)))
        object.__setattr__(self, 'h1', bandwidth(self.h1))
        object.__setattr__(self, 'h2', bandwidth(self.h2))
        if self.q_kernel not in Q_KERNELS:
            raise ValidationError(f"q_kernel must be one of {', '.join(Q_KERNELS)}")
        u = np.asarray(self.u_grid, dtype=float)
        y = np.asarray(self.y_grid, dtype=float)
        if u.ndim != 1 or u.size < 3 or np.any(np.diff(u) <= 0):
            raise ValidationError("u_grid must be an increasing 1-d grid")
        if not np.allclose(u, -u[::-1], rtol=0.0, atol=1e-12 * max(1.0, abs(u[-1]))):
            raise ValidationError("u_grid must be symmetric about 0")
        if y.ndim != 1 or y.size < 2 or np.any(np.diff(y) <= 0):
            raise ValidationError("y_grid must be an increasing 1-d grid")
        object.__setattr__(self, 'u_grid', u)
        object.__setattr__(self, 'y_grid', y)


@dataclass
class LocalDensity:
    y_grid: np.ndarray
    density: np.ndarray
    normalization: float
    trim_mass: float
    imag_residual: float
    x0: tuple = ()
    h1: float = float('nan')
    h2: float = float('nan')

    def integral(self):
        return float(trapezoid(self.density, self.y_grid))

    def summary(self):
        return {
            'x0': list(self.x0),
            'h1': self.h1,
            'h2': self.h2,
            'normalization': self.normalization,
            'trim_mass': self.trim_mass,
            'imag_residual': self.imag_residual,
            'symmetry_defect': symmetry_defect(self),
            'peak': float(np.max(self.density)),
        }


def q_star(v):
    """Fourier transform of the gaussian smoothing kernel Q."""
    v = np.asarray(v, dtype=float)
    return np.exp(-0.5 * v * v)


def default_config(data, theta_hat, x0, h_local, kernel=None, h1=None):
    """Heuristic bandwidths and grids for the local density at x0.

    h2 is the estimator's local bandwidth; unless given, h1 = 1.06 s m^{-1/5} with s the
    response standard deviation and m = sum kappa / max kappa the effective local sample size.
    """
    kernel = kernel or KernelFn(d=data.d)
    h2 = bandwidth(h_local)
    kappa = kernel_weights(kernel, h2, data.x, x0)
    top = float(np.max(kappa))
    if top <= 0.0:
        raise VanishingDesignDensityError(f"no kernel mass at x0={np.atleast_1d(x0).tolist()}")
    m = float(np.sum(kappa)) / top
    s = float(np.std(data.y, ddof=1)) if data.n > 1 else 1.0
    s = s if s > 0 else 1.0
    h1 = bandwidth(h1) if h1 is not None else 1.06 * s * max(m, 1.0) ** (-0.2)

    u_max = min(40.0 / h1, math.sqrt(-2.0 * math.log(Q_TRUNCATION)) / h1)
    u_grid = np.linspace(-u_max, u_max, U_NODES)
    half = max(abs(float(np.min(data.y))), abs(float(np.max(data.y)))) + 3.0 * s
    y_grid = np.linspace(-half, half, Y_NODES)
    return DensityConfig(x0=x0, h1=h1, h2=h2, y_grid=y_grid, u_grid=u_grid, kernel=kernel)


def design_density(data, cfg):
    """l_n(x0) = (1/n) sum_k K_{h2}(X_k - x0)."""
    return float(np.mean(kernel_weights(cfg.kernel, cfg.h2, data.x, cfg.x0)))


def fourier_numerator(data, theta_hat, cfg, u):
    """phi*_{x0,n}(u) at a scalar or array of frequencies."""
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(np.asarray(u, dtype=float))
    re, im = transfer_parts(theta_hat, u)
    modulus_sq = re * re + im * im
    check_transfer(modulus_sq)

    kappa = kernel_weights(cfg.kernel, cfg.h2, data.x, cfg.x0)
    active = kappa != 0.0
    kappa, y = kappa[active], data.y[active]

    # sum_k kappa_k e^{iuY_k}, chunked over u
    ecf = np.empty(u.shape[0], dtype=complex)
    for start in range(0, u.shape[0], U_CHUNK):
        block = np.outer(u[start:start + U_CHUNK], y)
        ecf[start:start + U_CHUNK] = np.cos(block) @ kappa + 1j * (np.sin(block) @ kappa)

    value = q_star(cfg.h1 * u) * ecf * (re - 1j * im) / modulus_sq / data.n
    return complex(value[0]) if scalar else value


def invert_and_normalize(data, theta_hat, cfg):
    """Invert phi* on the u grid, drop the negative part and renormalize."""
    ell = design_density(data, cfg)
    if ell <= DESIGN_DENSITY_FLOOR:
        raise VanishingDesignDensityError(
            f"design density at x0={list(cfg.x0)} is {ell:.3g}; move x0 or widen h2")

    phi = fourier_numerator(data, theta_hat, cfg, cfg.u_grid)
    phi0 = abs(fourier_numerator(data, theta_hat, cfg, 0.0))
    edge = max(abs(phi[0]), abs(phi[-1]))
    if edge >= EDGE_RATIO * phi0:
        raise InversionWindowError(
            f"|phi*| at the u-grid edge is {edge:.3g} (>= {EDGE_RATIO:g} x {phi0:.3g}); widen u_grid")

    u = cfg.u_grid
    du = np.diff(u)
    weights = np.zeros_like(u)
    weights[:-1] += 0.5 * du
    weights[1:] += 0.5 * du
    weighted = weights * phi

    values = np.empty(cfg.y_grid.shape[0], dtype=complex)
    for start in range(0, cfg.y_grid.shape[0], U_CHUNK):
        ys = cfg.y_grid[start:start + U_CHUNK]
        values[start:start + U_CHUNK] = np.exp(-1j * np.outer(ys, u)) @ weighted
    values /= 2.0 * np.pi * ell

    raw = values.real
    imag_residual = float(np.max(np.abs(values.imag)))
    positive = np.where(raw >= 0.0, raw, 0.0)
    trim_mass = float(trapezoid(np.where(raw < 0.0, -raw, 0.0), cfg.y_grid))
    normalization = float(trapezoid(positive, cfg.y_grid))
    if not normalization > 0.0:
        raise NumericalError(f"inverted density has no positive mass at x0={list(cfg.x0)}")

    return LocalDensity(y_grid=cfg.y_grid.copy(), density=positive / normalization,
                        normalization=normalization, trim_mass=trim_mass,
                        imag_residual=imag_residual, x0=cfg.x0, h1=cfg.h1, h2=cfg.h2)


def symmetry_defect(local):
    """max_y |f(y) - f(-y)| on the density's grid."""
    y = local.y_grid
    mirrored = np.interp(-y, y, local.density, left=0.0, right=0.0)
    return float(np.max(np.abs(local.density - mirrored)))
