#!/usr/bin/env python3
"""
Pointwise estimator of (pi(x), a(x), b(x)) on a grid of testing points.

Initialization:
    1. pilot kernel regression m(x_i) at every design point, nearest-neighbour bandwidths
    2. group 1 if y_i > m(x_i), group 2 otherwise
    3. group-wise kernel regressions give a_bar(x_k), b_bar(x_k) with bandwidths h1, h2
    4. h_local(x_k) = min(h1, h2)
    5. one constant starting proportion pi_bar

Estimation: at each x_k, minimize the Monte-Carlo contrast from
(pi_bar, a_bar(x_k), b_bar(x_k)) by Nelder-Mead, the box constraint being
handled by reflecting every trial point back into the box.

An alternative initializer ('poly-em') fits a two-component mixture of
polynomial regressions by EM and takes its curves and labels instead of
steps 1-3.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from console import log
from contrast import ContrastConfig, ContrastEvaluator, mc_contrast
from errors import (DegenerateDesignError, DegenerateTransferError, EmptyGroupError,
                    InsufficientDataError, MixRegError, NonFiniteContrastError, ValidationError)
from kernels import DEFAULT_WEIGHT, KernelFn, WeightDensity, bandwidth, kernel_weights
from model_core import ParamSpace, ThetaPoint
from parallel import ordered_map

BANDWIDTH_MODES = ('local', 'global', 'rate')
INIT_METHODS = ('kernel', 'poly-em')

BOUNDARY_TOL = 1e-3
MERGE_PI = 0.07
MERGE_LOC_FRACTION = 0.1
# Trial points with min_r |M(t, U_r)| below this are rejected. 0.1 = 1 - 2 * 0.45, the bound
# |M| >= 1 - 2 pi_hi holds on the strict box.
TRANSFER_FLOOR = 0.1
TRANSFER_FLAG_MARGIN = 1.1
# evaluation rows per block in the nearest-neighbour and kernel-regression passes
ROW_CHUNK = 256


@dataclass(frozen=True)
class FitOptions:
    """Everything fit_curve needs besides the data, grid and box."""

    kernel: KernelFn = field(default_factory=KernelFn)
    weight: WeightDensity = DEFAULT_WEIGHT
    n_mc: int = None  # None: N = n
    seed: int = 0
    frac: float = 0.2
    pi_bar: float = 0.4
    bandwidth_mode: str = 'local'
    h: float = None
    rate_c: float = 1.0
    rate_alpha: float = 1.0
    init_method: str = 'kernel'
    poly_degree: int = 3
    strict_theta: bool = False
    max_iter: int = 500
    xatol: float = 1e-5
    transfer_floor: float = TRANSFER_FLOOR
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.frac <= 1.0:
            raise ValidationError(f"frac must lie in (0, 1], got {self.frac}")
        if not 0.0 < self.pi_bar < 1.0:
            raise ValidationError(f"pi_bar must lie in (0, 1), got {self.pi_bar}")
        if self.bandwidth_mode not in BANDWIDTH_MODES:
            raise ValidationError(
                f"bandwidth_mode must be one of {', '.join(BANDWIDTH_MODES)}")
        if self.bandwidth_mode == 'global':
            if self.h is None:
                raise ValidationError("bandwidth_mode 'global' needs h")
            bandwidth(self.h)
        if self.bandwidth_mode == 'rate' and (self.rate_c <= 0 or self.rate_alpha <= 0):
            raise ValidationError("rate bandwidth needs positive rate_c and rate_alpha")
        if self.init_method not in INIT_METHODS:
            raise ValidationError(f"init_method must be one of {', '.join(INIT_METHODS)}")
        if self.n_mc is not None and self.n_mc < 1:
            raise ValidationError(f"n_mc must be >= 1, got {self.n_mc}")
        if self.poly_degree < 0:
            raise ValidationError("poly_degree must be >= 0")
        if self.max_iter < 1 or self.xatol <= 0:
            raise ValidationError("max_iter must be >= 1 and xatol > 0")
        if not 0.0 <= self.transfer_floor < 1.0:
            raise ValidationError(f"transfer_floor must lie in [0, 1), got {self.transfer_floor}")

    def contrast_bandwidth(self, h_local, n, d):
        if self.bandwidth_mode == 'global':
            return float(self.h)
        if self.bandwidth_mode == 'rate':
            return self.rate_c * n ** (-1.0 / (2.0 * self.rate_alpha + d))
        return float(h_local)


@dataclass
class InitState:
    pilot_curve: np.ndarray
    labels: np.ndarray
    grid: np.ndarray
    a_bar: np.ndarray
    b_bar: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h_local: np.ndarray
    pi_bar: float = 0.4
    method: str = 'kernel'


@dataclass
class PointDiagnostics:
    contrast_value: float
    init_contrast: float
    iterations: int
    h: float
    n_mc: int
    seed: int
    flags: list = field(default_factory=list)


@dataclass
class FitResult:
    """Per-grid-point estimates; failed points carry theta None and the 'failed' flag."""

    grid: np.ndarray
    theta_hat: list
    contrast_value: np.ndarray
    iterations: np.ndarray
    flags: list
    init: InitState
    h: np.ndarray
    seeds: list
    errors: list

    @property
    def failed(self):
        return [i for i, t in enumerate(self.theta_hat) if t is None]

    def component(self, name):
        return np.array([getattr(t, name) if t is not None else np.nan for t in self.theta_hat])

    def to_dict(self):
        points = []
        for k in range(self.grid.shape[0]):
            t = self.theta_hat[k]
            points.append({
                'x': self.grid[k].tolist(),
                'pi_hat': t.pi if t is not None else None,
                'a_hat': t.a if t is not None else None,
                'b_hat': t.b if t is not None else None,
                'contrast_value': _json_float(self.contrast_value[k]),
                'iterations': int(self.iterations[k]),
                'flags': list(self.flags[k]),
                'h': _json_float(self.h[k]),
                'seed': int(self.seeds[k]),
                'pi_bar': self.init.pi_bar,
                'a_bar': float(self.init.a_bar[k]),
                'b_bar': float(self.init.b_bar[k]),
                'h_local': float(self.init.h_local[k]),
                'error': self.errors[k],
            })
        return {'init_method': self.init.method, 'points': points}


def _json_float(value):
    value = float(value)
    return value if math.isfinite(value) else None


def _check_frac(frac):
    if not 0.0 < frac <= 1.0:
        raise ValidationError(f"neighbour fraction must lie in (0, 1], got {frac}")


def _distances(a, b):
    """Euclidean distances between the rows of a (m, d) and b (n, d)."""
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _kth_distance(dist, k):
    """Per row, the k-th smallest distance (0-based k); zero falls back to the smallest positive one."""
    k = min(k, dist.shape[1] - 1)
    h = np.partition(dist, k, axis=1)[:, k]
    zero = h <= 0.0
    if np.any(zero):
        positive = np.where(dist > 0.0, dist, np.inf)
        h = np.where(zero, np.min(positive, axis=1), h)
        if not np.all(np.isfinite(h)):
            raise DegenerateDesignError("design points coincide; no positive bandwidth exists")
    return h


def _neighbour_bandwidths(x_eval, x_train, k):
    """_kth_distance from every x_eval row to x_train, chunked over x_eval rows."""
    h = np.empty(x_eval.shape[0])
    for start in range(0, x_eval.shape[0], ROW_CHUNK):
        stop = start + ROW_CHUNK
        h[start:stop] = _kth_distance(_distances(x_eval[start:stop], x_train), k)
    return h


def _nadaraya_watson(x_train, y_train, x_eval, h_eval, kernel):
    """Kernel-weighted means of y_train at each x_eval row with its own bandwidth."""
    fitted = np.empty(x_eval.shape[0])
    for start in range(0, x_eval.shape[0], ROW_CHUNK):
        stop = start + ROW_CHUNK
        diff = (x_eval[start:stop, None, :] - x_train[None, :, :]) / h_eval[start:stop, None, None]
        weights = kernel(diff)
        total = np.sum(weights, axis=1)
        empty = total <= 0.0
        if np.any(empty):
            # compact kernel with no point strictly inside: use the nearest observation
            nearest = np.argmin(np.sum(diff * diff, axis=-1), axis=1)
            weights[empty] = 0.0
            weights[empty, nearest[empty]] = 1.0
            total = np.sum(weights, axis=1)
        fitted[start:stop] = weights @ y_train / total
    return fitted


def _as_grid(grid, d):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 0:
        grid = grid[None]
    if grid.ndim == 1:
        grid = grid[:, None] if d == 1 else grid[None, :]
    if grid.shape[0] == 0:
        raise ValidationError("grid is empty")
    if grid.shape[1] != d:
        raise ValidationError(f"grid has dimension {grid.shape[1]} but the data has {d}")
    return grid


def pilot_regression(data, frac=0.2, kernel=None):
    """Nadaraya-Watson fit at every design point, bandwidth = distance to the
    ceil(frac * n)-th nearest other design point."""
    _check_frac(frac)
    if data.n < 10:
        raise InsufficientDataError(f"pilot regression needs n >= 10, got {data.n}")
    kernel = kernel or KernelFn(d=data.d)
    if np.all(data.x == data.x[0]):
        raise DegenerateDesignError("all design points coincide")
    h = _neighbour_bandwidths(data.x, data.x, math.ceil(frac * data.n))
    return _nadaraya_watson(data.x, data.y, data.x, h, kernel)


def classify(data, pilot):
    """Label 1 if y_i lies strictly above the pilot curve, else 2."""
    pilot = np.asarray(pilot, dtype=float)
    if pilot.shape != data.y.shape:
        raise ValidationError("pilot curve must be defined at every design point")
    labels = np.where(data.y > pilot, 1, 2)
    if np.all(labels == 1) or np.all(labels == 2):
        raise EmptyGroupError("all observations fall on the same side of the pilot curve")
    return labels


def _group_bandwidths(data, labels, grid, frac):
    _check_frac(frac)
    result = []
    for group in (1, 2):
        mask = labels == group
        if not np.any(mask):
            raise EmptyGroupError(f"group {group} is empty")
        xg = data.x[mask]
        k = math.ceil(frac * xg.shape[0]) - 1
        if xg.shape[0] == 1:
            h = _distances(grid, xg)[:, 0]
            if np.any(h <= 0):
                raise DegenerateDesignError(f"group {group} has a single point at a grid point")
        else:
            h = _neighbour_bandwidths(grid, xg, max(k, 0))
        result.append((mask, h))
    return result


def group_smooth(data, labels, grid, frac=0.2, kernel=None):
    """Per testing point: group-wise kernel regressions and nearest-neighbour bandwidths.

    Returns (a_bar, b_bar, h1, h2); the contrast bandwidth is min(h1, h2).
    """
    grid = _as_grid(grid, data.d)
    kernel = kernel or KernelFn(d=data.d)
    (mask1, h1), (mask2, h2) = _group_bandwidths(data, np.asarray(labels), grid, frac)
    a_bar = _nadaraya_watson(data.x[mask1], data.y[mask1], grid, h1, kernel)
    b_bar = _nadaraya_watson(data.x[mask2], data.y[mask2], grid, h2, kernel)
    return a_bar, b_bar, h1, h2


def _poly_design(x, degree):
    return np.vander(x, degree + 1, increasing=True)


def polynomial_mixture_em(data, degree=3, max_iter=500, tol=1e-8):
    """Two-component mixture of polynomial regressions, constant proportion, common variance.

    Returns (coef1, coef2, proportion, sigma, responsibilities of component 1).
    Component 1 is the one with the larger mean fitted value.
    """
    if data.d != 1:
        raise ValidationError("the polynomial EM initializer supports d = 1 only")
    if data.n < 2 * (degree + 1) + 1:
        raise InsufficientDataError(
            f"polynomial EM with degree {degree} needs n > {2 * (degree + 1)}")
    x = data.x[:, 0]
    y = data.y
    design = _poly_design(x, degree)

    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid_sd = float(np.std(y - design @ coef)) or 1.0
    coefs = [coef.copy(), coef.copy()]
    coefs[0][0] += resid_sd
    coefs[1][0] -= resid_sd
    prop = 0.5
    sigma = resid_sd

    previous = -np.inf
    for _ in range(max_iter):
        # E-step
        log_dens = np.empty((data.n, 2))
        for j in range(2):
            r = y - design @ coefs[j]
            log_dens[:, j] = -0.5 * (r / sigma) ** 2 - np.log(sigma)
        log_dens[:, 0] += np.log(prop)
        log_dens[:, 1] += np.log(1.0 - prop)
        norm = logsumexp(log_dens, axis=1)
        resp = np.exp(log_dens - norm[:, None])
        loglik = float(np.sum(norm))

        # M-step
        nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
        prop = float(np.clip(nk[0] / data.n, 1e-3, 1.0 - 1e-3))
        sq = 0.0
        for j in range(2):
            w = np.sqrt(resp[:, j])
            coefs[j], *_ = np.linalg.lstsq(design * w[:, None], y * w, rcond=None)
            sq += float(np.sum(resp[:, j] * (y - design @ coefs[j]) ** 2))
        sigma = max(math.sqrt(sq / data.n), 1e-6 * resid_sd)

        if loglik - previous < tol * abs(loglik):
            break
        previous = loglik

    if np.mean(design @ coefs[0]) < np.mean(design @ coefs[1]):
        coefs = [coefs[1], coefs[0]]
        prop = 1.0 - prop
        resp = resp[:, ::-1]
    return coefs[0], coefs[1], prop, sigma, resp[:, 0]


def initialize(data, grid, options=None):
    """Run the initialization once for the whole grid."""
    options = options or FitOptions(kernel=KernelFn(d=data.d))
    grid = _as_grid(grid, data.d)
    kernel = options.kernel

    if options.init_method == 'poly-em':
        coef1, coef2, prop, _, resp1 = polynomial_mixture_em(data, options.poly_degree)
        labels = np.where(resp1 > 0.5, 1, 2)
        if np.all(labels == 1) or np.all(labels == 2):
            raise EmptyGroupError("polynomial EM assigned every observation to one component")
        x = data.x[:, 0]
        pilot = prop * (_poly_design(x, options.poly_degree) @ coef1) \
            + (1.0 - prop) * (_poly_design(x, options.poly_degree) @ coef2)
        (_, h1), (_, h2) = _group_bandwidths(data, labels, grid, options.frac)
        g = _poly_design(grid[:, 0], options.poly_degree)
        a_bar, b_bar = g @ coef1, g @ coef2
    else:
        pilot = pilot_regression(data, options.frac, kernel)
        labels = classify(data, pilot)
        a_bar, b_bar, h1, h2 = group_smooth(data, labels, grid, options.frac, kernel)

    h_local = np.minimum(h1, h2)
    return InitState(pilot_curve=pilot, labels=labels, grid=grid, a_bar=a_bar, b_bar=b_bar,
                     h1=h1, h2=h2, h_local=h_local, pi_bar=options.pi_bar,
                     method=options.init_method)


def minimize_in_box(objective, start, space, steps, max_iter=500, xatol=1e-5, admissible=None):
    """Nelder-Mead on objective(reflect(v)) from `start`.

    The initial simplex is start plus one step per coordinate. The pi step points
    away from 1/2 and the location steps toward the centre of the box, so
    label-swapped starts (pi, a, b) and (1 - pi, b, a) get mirrored simplices.
    Points for which admissible(v) is False score +inf and are never kept as the
    best vertex. Stops when every vertex is within xatol of the best one (simplex
    size only) or after max_iter iterations.
    Returns (best point inside the box, value there, iterations).
    """
    start = np.asarray(start, dtype=float)
    steps = np.asarray(steps, dtype=float)
    if admissible is not None and not admissible(start):
        raise DegenerateTransferError(f"starting point {start.tolist()} is not admissible")

    def reflected(v):
        point = space.reflect(v)
        if admissible is not None and not admissible(point):
            return np.inf
        value = objective(point)
        if not math.isfinite(value):
            raise NonFiniteContrastError(f"contrast is {value} at {point.tolist()}")
        return value

    centre = 0.5 * (space.lower + space.upper)
    centre[0] = 0.5
    simplex = [start]
    for i in range(start.size):
        vertex = start.copy()
        up = start[i] <= centre[i]
        if i == 0:
            up = not up
        vertex[i] += steps[i] if up else -steps[i]
        simplex.append(vertex)

    res = minimize(reflected, start, method='Nelder-Mead',
                   options={'initial_simplex': np.array(simplex), 'xatol': xatol,
                            'fatol': np.inf, 'maxiter': max_iter})
    best = space.reflect(res.x)
    return best, float(res.fun), int(res.nit)


def _local_spread(data, x0, h_local, kernel):
    weights = kernel_weights(kernel, h_local, data.x, x0)
    total = float(np.sum(weights))
    if total <= 0.0:
        return float(np.std(data.y))
    mean = float(weights @ data.y) / total
    return math.sqrt(float(weights @ (data.y - mean) ** 2) / total)


def point_flags(theta, init, space, min_transfer=None, transfer_floor=0.0):
    flags = []
    if space.distance_to_boundary(theta) < BOUNDARY_TOL:
        flags.append('boundary_hit')
    if (theta.pi < MERGE_PI or theta.pi > 1.0 - MERGE_PI
            or abs(theta.a - theta.b) < MERGE_LOC_FRACTION * space.loc_width):
        flags.append('merge_suspect')
    if theta.a < theta.b and init.a > init.b:
        flags.append('label_switch_suspect')
    if (min_transfer is not None and transfer_floor > 0.0
            and min_transfer < TRANSFER_FLAG_MARGIN * transfer_floor):
        flags.append('degenerate_transfer')
    return flags


def fit_point(data, x0, init, h_local, space, cfg, max_iter=500, xatol=1e-5,
              transfer_floor=TRANSFER_FLOOR):
    """Minimize the Monte-Carlo contrast at x0 starting from `init`.

    cfg supplies the contrast bandwidth, kernel, weight density, node count and
    seed; h_local scales the initial simplex. Trial points where |M(t, U_r)| drops
    below transfer_floor at some node are rejected: the contrast is unbounded
    below there. Returns (theta_hat, diagnostics).
    """
    if not space.contains(init):
        raise ValidationError(f"initial value {init} lies outside the parameter box")
    h_local = bandwidth(h_local)
    ev = ContrastEvaluator(cfg.at(x0=x0), data)
    start = init.as_array()

    loc_step = 0.5 * _local_spread(data, ev.config.x0, h_local, cfg.kernel)
    if not loc_step > 0.0:
        loc_step = 0.05 * space.loc_width
    steps = np.array([0.1, loc_step, loc_step])

    def objective(v):
        return mc_contrast(ev, ThetaPoint.from_array(v))

    def admissible(v):
        return ev.min_transfer_modulus(ThetaPoint.from_array(v)) >= transfer_floor

    if not admissible(start):
        raise DegenerateTransferError(
            f"|M| < {transfer_floor:g} at the initial value {init}; move pi_bar away from 1/2")
    init_value = objective(start)
    if not math.isfinite(init_value):
        raise NonFiniteContrastError(f"contrast is {init_value} at the initial value {init}")
    best, value, iterations = minimize_in_box(objective, start, space, steps, max_iter, xatol,
                                              admissible=admissible)
    theta = ThetaPoint.from_array(best)
    diagnostics = PointDiagnostics(
        contrast_value=value, init_contrast=init_value, iterations=iterations,
        h=ev.config.h, n_mc=ev.config.n_mc, seed=ev.config.seed,
        flags=point_flags(theta, init, space, ev.min_transfer_modulus(theta), transfer_floor))
    return theta, diagnostics


def _grid_ranks(grid):
    """Rank of each grid point in lexicographic order; used to derive per-point seeds."""
    order = np.lexsort(grid.T[::-1])
    ranks = np.empty(grid.shape[0], dtype=int)
    ranks[order] = np.arange(grid.shape[0])
    return ranks


def fit_curve(data, grid, space=None, options=None):
    """Initialize once, then fit every testing point independently.

    A point that fails is reported with theta None, a NaN contrast and the
    'failed' flag; the curve itself is never aborted.
    """
    options = options or FitOptions(kernel=KernelFn(d=data.d))
    if options.kernel.d != data.d:
        raise ValidationError(f"kernel dimension {options.kernel.d} != data dimension {data.d}")
    space = space or ParamSpace.from_responses(data.y, strict=options.strict_theta)
    init = initialize(data, grid, options)
    grid = init.grid
    n_mc = options.n_mc or data.n
    ranks = _grid_ranks(grid)

    def fit_one(k):
        h = options.contrast_bandwidth(init.h_local[k], data.n, data.d)
        seed = options.seed ^ int(ranks[k])
        a0 = float(np.clip(init.a_bar[k], space.loc_lo, space.loc_hi))
        b0 = float(np.clip(init.b_bar[k], space.loc_lo, space.loc_hi))
        start = ThetaPoint(float(np.clip(init.pi_bar, space.pi_lo, space.pi_hi)), a0, b0)
        try:
            cfg = ContrastConfig(x0=grid[k], h=h, kernel=options.kernel,
                                 weight=options.weight, n_mc=n_mc, seed=seed)
            theta, diag = fit_point(data, grid[k], start, init.h_local[k], space, cfg,
                                    options.max_iter, options.xatol, options.transfer_floor)
            return theta, diag, None
        except MixRegError as e:
            log(f"fit failed at x={grid[k].tolist()}: {e}", level='warning')
            diag = PointDiagnostics(contrast_value=np.nan, init_contrast=np.nan, iterations=0,
                                    h=h, n_mc=n_mc, seed=seed, flags=['failed'])
            return None, diag, str(e)

    outcomes = ordered_map(fit_one, range(grid.shape[0]), workers=options.workers)
    return FitResult(
        grid=grid,
        theta_hat=[o[0] for o in outcomes],
        contrast_value=np.array([o[1].contrast_value for o in outcomes], dtype=float),
        iterations=np.array([o[1].iterations for o in outcomes], dtype=int),
        flags=[o[1].flags for o in outcomes],
        init=init,
        h=np.array([o[1].h for o in outcomes], dtype=float),
        seeds=[o[1].seed for o in outcomes],
        errors=[o[2] for o in outcomes],
    )
