#!/usr/bin/env python3
"""
Simulation scenarios and the replication study.

Scenarios G, T and L share the mixing proportion
    pi(x) = (sin(3 pi x) - 1) / 15 + 0.4
and differ in their locations and error family:
    G: a = 4 - 2 sin(2 pi x),  b = 1.5 cos(3 pi x) - 3,  N(0, sigma(x)^2), sigma = 0.9 exp(x)
    T: a = 3 - 2 sin(2 pi x),  b = 1.5 cos(3 pi x) - 2,  Student t with df(x) = 8 - 5x
    L: a = 5 - 3 sin(2 pi x),  b = 2 cos(3 pi x) - 4,    Laplace with scale nu(x) = x + 1
The design is Uniform[0, 1].

A study draws M datasets per (scenario, n), fits the curve on x_k = k/K and
reports RASE and the averaged variance of squared deviations for pi, a, b.
"""

import pickle
import time
from dataclasses import dataclass, field, replace

import numpy as np

from console import format_time, log
from errors import MixRegError, ValidationError
from estimator import FitOptions, fit_curve
from model_core import Dataset, ThetaPoint
from parallel import ordered_map

NOISE_FAMILIES = ('gaussian_scale', 'student_df', 'laplace_scale')
COMPONENTS = ('pi', 'a', 'b')


def shared_pi(x):
    return (np.sin(3.0 * np.pi * x) - 1.0) / 15.0 + 0.4


def g_a(x):
    return 4.0 - 2.0 * np.sin(2.0 * np.pi * x)


def g_b(x):
    return 1.5 * np.cos(3.0 * np.pi * x) - 3.0


def g_sigma(x):
    return 0.9 * np.exp(x)


def t_a(x):
    return 3.0 - 2.0 * np.sin(2.0 * np.pi * x)


def t_b(x):
    return 1.5 * np.cos(3.0 * np.pi * x) - 2.0


def t_df(x):
    return -5.0 * x + 8.0


def l_a(x):
    return 5.0 - 3.0 * np.sin(2.0 * np.pi * x)


def l_b(x):
    return 2.0 * np.cos(3.0 * np.pi * x) - 4.0


def l_nu(x):
    return x + 1.0


@dataclass(frozen=True)
class Scenario:
    """A data-generating process on the design interval [0, 1]."""

    name: str
    pi_fn: object
    a_fn: object
    b_fn: object
    noise: str
    noise_fn: object
    title: str = ''
    design: str = 'uniform'

    def __post_init__(self):
        if self.noise not in NOISE_FAMILIES:
            raise ValidationError(
                f"noise must be one of {', '.join(NOISE_FAMILIES)}, got '{self.noise}'")
        if self.design != 'uniform':
            raise ValidationError("only the uniform design on [0, 1] is supported")
        x_check = np.linspace(0.0, 1.0, 101)
        pi = np.broadcast_to(self.pi_fn(x_check), x_check.shape)
        if np.any(pi < 0.0) or np.any(pi > 1.0):
            raise ValidationError(f"scenario {self.name}: pi(x) leaves [0, 1]")
        param = np.broadcast_to(self.noise_fn(x_check), x_check.shape)
        if self.noise == 'student_df' and np.any(param <= 0.0):
            raise ValidationError(f"scenario {self.name}: degrees of freedom must be positive")
        if np.any(param < 0.0):
            raise ValidationError(f"scenario {self.name}: noise scale must be nonnegative")

    def noise_draws(self, x, rng):
        """One symmetric error per design point in x."""
        x = np.asarray(x, dtype=float)
        param = np.broadcast_to(self.noise_fn(x), x.shape).astype(float)
        if self.noise == 'gaussian_scale':
            return param * rng.standard_normal(x.shape)
        if self.noise == 'student_df':
            # t = Z / sqrt(G), G ~ Gamma(df/2, scale 2/df), i.e. chi2(df)/df
            z = rng.standard_normal(x.shape)
            g = rng.gamma(param / 2.0, 2.0 / param)
            return z / np.sqrt(g)
        return rng.laplace(0.0, 1.0, x.shape) * param


SCENARIOS = {
    'G': Scenario('G', shared_pi, g_a, g_b, 'gaussian_scale', g_sigma, 'Gaussian errors'),
    'T': Scenario('T', shared_pi, t_a, t_b, 'student_df', t_df, 'Student errors'),
    'L': Scenario('L', shared_pi, l_a, l_b, 'laplace_scale', l_nu, 'Laplace errors'),
}


def get_scenario(name):
    try:
        return SCENARIOS[name.upper()]
    except KeyError:
        raise ValidationError(
            f"unknown scenario '{name}', expected one of {', '.join(SCENARIOS)}") from None


def sample_with_labels(sc, n, seed):
    """Draw n observations and their latent labels W (True for the a-component).

    X ~ U[0,1], W ~ Bernoulli(pi(X)), Y = a(X) or b(X) plus noise, all from one stream.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n)
    first = rng.random(n) < np.broadcast_to(sc.pi_fn(x), x.shape)
    location = np.where(first, np.broadcast_to(sc.a_fn(x), x.shape),
                        np.broadcast_to(sc.b_fn(x), x.shape))
    y = location + sc.noise_draws(x, rng)
    return Dataset(x, y), first


def sample_dataset(sc, n, seed):
    """Draw n observations: X ~ U[0,1], W ~ Bernoulli(pi(X)), Y = a(X) or b(X) plus noise."""
    return sample_with_labels(sc, n, seed)[0]


def true_theta(sc, x):
    """(pi(x), a(x), b(x)) by direct evaluation."""
    x = float(np.atleast_1d(x)[0])
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"x must lie in [0, 1], got {x}")
    return ThetaPoint(float(sc.pi_fn(x)), float(sc.a_fn(x)), float(sc.b_fn(x)))


def rase(estimates, truth):
    """Root average squared error over the grid, averaged over replications.

    estimates has shape (K,) for one replication or (M, K); truth is (K,) or (M, K).
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    tru = np.asarray(truth, dtype=float)
    if tru.shape[-1] != est.shape[-1] or (tru.ndim == 2 and tru.shape != est.shape):
        raise ValidationError(
            f"estimates {est.shape} and truth {tru.shape} have mismatched grids")
    if est.shape[-1] < 1:
        raise ValidationError("RASE needs at least one grid point")
    per_replication = np.sqrt(np.mean((est - tru) ** 2, axis=1))
    return float(np.mean(per_replication))


def squared_dev_variance(deviations):
    """Average over grid points of the across-replication sample variance of R = (est - truth)^2.

    deviations is the (M, K) array of squared deviations.
    """
    r = np.atleast_2d(np.asarray(deviations, dtype=float))
    if r.shape[0] < 2:
        raise ValidationError(f"need at least 2 replications, got {r.shape[0]}")
    return float(np.mean(np.var(r, axis=0, ddof=1)))


def replication_seed(master_seed, replication):
    return int(np.random.SeedSequence([master_seed, replication]).generate_state(1)[0])


@dataclass
class StudyBlock:
    scenario: str
    n: int
    M: int
    K: int
    rase: dict
    sigma2: dict
    failures: int
    seeds: list
    raw: list = field(repr=False, default_factory=list)

    def to_dict(self):
        return {'scenario': self.scenario, 'n': self.n, 'M': self.M, 'K': self.K,
                'succeeded': self.M - self.failures, 'failures': self.failures,
                'rase': self.rase, 'sigma2': self.sigma2, 'seeds': self.seeds}


@dataclass
class StudyReport:
    blocks: list
    M: int
    K: int
    master_seed: int
    wall_time: float = 0.0

    def block(self, scenario, n):
        for b in self.blocks:
            if b.scenario == scenario and b.n == n:
                return b
        raise KeyError((scenario, n))

    def to_dict(self):
        """Deterministic content; wall time is reported separately."""
        return {'M': self.M, 'K': self.K, 'master_seed': self.master_seed,
                'blocks': [b.to_dict() for b in self.blocks]}


def study_grid(K):
    return np.arange(1, K + 1, dtype=float) / K


def _run_replication(task):
    sc, n, grid, seed, options, replication = task
    data = sample_dataset(sc, n, seed)
    truth = [true_theta(sc, x) for x in grid]
    try:
        fit = fit_curve(data, grid, options=replace(options, seed=seed, workers=1))
        failed = bool(fit.failed)
        error = '; '.join(e for e in fit.errors if e) or None
        estimates = fit.theta_hat
        flags = fit.flags
    except MixRegError as e:
        failed, error = True, str(e)
        estimates = [None] * len(grid)
        flags = [['failed']] * len(grid)

    rows = []
    for k, x in enumerate(grid):
        est, tru = estimates[k], truth[k]
        rows.append({
            'replication': replication, 'grid_index': k + 1, 'x': float(x),
            'pi_hat': est.pi if est else None, 'a_hat': est.a if est else None,
            'b_hat': est.b if est else None,
            'pi_true': tru.pi, 'a_true': tru.a, 'b_true': tru.b,
            'flags': '|'.join(flags[k]),
        })
    return {'replication': replication, 'seed': seed, 'failed': failed,
            'error': error, 'rows': rows}


def summarize(rows_by_replication, K):
    """RASE and sigma^2 per component from successful replications' raw rows."""
    ok = [rows for rows in rows_by_replication
          if all(r[f'{s}_hat'] is not None for r in rows for s in COMPONENTS)]
    rase_out, sigma_out = {}, {}
    for s in COMPONENTS:
        if not ok:
            rase_out[s] = None
            sigma_out[s] = None
            continue
        est = np.array([[r[f'{s}_hat'] for r in rows] for rows in ok])
        tru = np.array([[r[f'{s}_true'] for r in rows] for rows in ok])
        rase_out[s] = rase(est, tru)
        sigma_out[s] = squared_dev_variance((est - tru) ** 2) if len(ok) >= 2 else None
    return rase_out, sigma_out


def _picklable(obj):
    try:
        pickle.dumps(obj)
        return True
    except Exception:
        return False


def run_study(scenarios, n_list, M, K=20, master_seed=0, options=None, workers=1):
    """Replicate sample -> fit_curve -> metrics for every (scenario, n).

    Failed replications are kept in the raw dump, excluded from the metrics and counted.
    """
    if M < 1:
        raise ValidationError(f"M must be >= 1, got {M}")
    if K < 1:
        raise ValidationError(f"K must be >= 1, got {K}")
    options = options or FitOptions()
    grid = study_grid(K)
    started = time.perf_counter()
    blocks = []

    for sc in scenarios:
        use_processes = workers > 1 and _picklable((sc, options))
        if workers > 1 and not use_processes:
            log(f"scenario {sc.name} is not picklable; replications run in threads", level='warning')
        for n in n_list:
            log(f"Scenario {sc.name}, n={n}: {M} replications")
            seeds = [replication_seed(master_seed, z) for z in range(M)]
            tasks = [(sc, n, grid, seeds[z], options, z + 1) for z in range(M)]
            outcomes = ordered_map(_run_replication, tasks, workers=workers,
                                   processes=use_processes, label='Progress')
            failures = sum(1 for o in outcomes if o['failed'])
            for o in outcomes:
                if o['failed']:
                    log(f"replication {o['replication']} failed: {o['error']}", level='warning')
            rase_out, sigma_out = summarize([o['rows'] for o in outcomes if not o['failed']], K)
            blocks.append(StudyBlock(
                scenario=sc.name, n=n, M=M, K=K, rase=rase_out, sigma2=sigma_out,
                failures=failures, seeds=seeds,
                raw=[row for o in outcomes for row in o['rows']]))

    elapsed = time.perf_counter() - started
    log(f"Study finished in {format_time(elapsed)}")
    return StudyReport(blocks=blocks, M=M, K=K, master_seed=master_seed, wall_time=elapsed)


def format_table(report):
    """Plain-text table of RASE_s (sigma2_s), one section per scenario."""
    lines = []
    for name in dict.fromkeys(b.scenario for b in report.blocks):
        sc = SCENARIOS.get(name)
        title = f" ({sc.title})" if sc else ''
        lines.append(f"mixreg-se, scenario {name}{title}: M={report.M}, K={report.K}")
        lines.append(f"{'n':>6} | {'RASE_pi (s2)':>24} | {'RASE_a (s2)':>24} | "
                     f"{'RASE_b (s2)':>24} | failed")
        for b in report.blocks:
            if b.scenario != name:
                continue
            cells = [_cell(b.rase[s], b.sigma2[s]) for s in COMPONENTS]
            lines.append(f"{b.n:>6} | {cells[0]:>24} | {cells[1]:>24} | {cells[2]:>24} | "
                         f"{b.failures}")
        lines.append('')
    return '\n'.join(lines)


def _cell(value, sigma2):
    if value is None:
        return 'n/a'
    s2 = 'n/a' if sigma2 is None else f"{sigma2:.6f}"
    return f"{value:.6f} ({s2})"


def rate_diagnostic(sc, n_small=400, n_large=1600, M=40, x0=0.5, master_seed=0,
                    options=None, workers=1):
    """Across-replication sd of a_hat(x0) at two sample sizes with h = c n^{-1/(2 alpha + d)}."""
    options = replace(options or FitOptions(), bandwidth_mode='rate')
    result = {}
    for label, n in (('small', n_small), ('large', n_large)):
        seeds = [replication_seed(master_seed, z) for z in range(M)]
        tasks = [(sc, n, np.array([x0]), seeds[z], options, z + 1) for z in range(M)]
        outcomes = ordered_map(_run_replication, tasks, workers=workers,
                               processes=workers > 1 and _picklable((sc, options)))
        a_hat = np.array([o['rows'][0]['a_hat'] for o in outcomes if not o['failed']])
        result[f'sd_{label}'] = float(np.std(a_hat, ddof=1)) if a_hat.size > 1 else float('nan')
        result[f'n_{label}'] = n
    result['ratio'] = result['sd_small'] / result['sd_large']
    return result
