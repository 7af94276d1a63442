#!/usr/bin/env python3
"""
Command implementations, run configuration and file formats.

Every command takes a RunConfig built from defaults, an optional JSON config
file and explicit flags (in that order of precedence), echoes the effective
configuration next to its outputs, and writes its files once its unit of work
is complete. Rerunning a command with `--config <echo>` reproduces its outputs
byte for byte.

File formats (comma separated, '.' decimal, mandatory header, UTF-8):
    dataset      x[,x2,...],y
    fit CSV      x[,x2,...],pi_hat,a_hat,b_hat,a_bar,b_bar,h_local,h,flags
    density CSV  y,f_hat
    raw dump     replication,grid_index,x,pi_hat,a_hat,b_hat,pi_true,a_true,b_true,flags
"""

import json
import math
import os
import re
from dataclasses import dataclass

import numpy as np
import pandas as pd

from console import banner, format_time, log
from errors import MalformedCSVError, MissingFitError, NumericalError, ValidationError
from estimator import BANDWIDTH_MODES, INIT_METHODS, FitOptions, fit_curve
from kernels import KERNEL_FAMILIES, KernelFn
from model_core import Dataset, ParamSpace, ThetaPoint
from noise_density import default_config, invert_and_normalize, symmetry_defect
from settings import default_output_dir
from simulation import (SCENARIOS, StudyReport, format_table, get_scenario,
                        replication_seed, run_study, sample_dataset)

FLOAT_FORMAT = '%.10g'

_FIT_PARAMS = {
    'grid': None,
    'grid_file': None,
    'K': 20,
    'seed': 0,
    'n_mc': None,
    'frac': 0.2,
    'pi_bar': 0.4,
    'kernel': 'gaussian',
    'bandwidth_mode': 'local',
    'h': None,
    'rate_c': 1.0,
    'rate_alpha': 1.0,
    'init_method': 'kernel',
    'poly_degree': 3,
    'strict_theta': False,
    'pi_lo': None,
    'pi_hi': None,
    'loc_lo': None,
    'loc_hi': None,
    'max_iter': 500,
    'xatol': 1e-5,
    'transfer_floor': 0.1,
}

DEFAULTS = {
    'simulate': {'scenario': 'G', 'n': 400, 'seed': 0, 'M': 1, 'out': None},
    'fit': {'input': None, 'out': None, 'workers': 1, **_FIT_PARAMS},
    'density': {'input': None, 'fit': None, 'x0': None, 'h1': None, 'h2': None, 'out': None},
    'study': {'scenario': 'T', 'n': [400, 800, 1200], 'M': 20, 'out': None, 'workers': 1,
              **{k: v for k, v in _FIT_PARAMS.items() if k not in ('grid', 'grid_file')}},
}


@dataclass
class RunConfig:
    """Validated parameters of one command."""

    command: str
    params: dict

    @classmethod
    def build(cls, command, config_path=None, flags=None):
        if command not in DEFAULTS:
            raise ValidationError(f"unknown command '{command}'")
        params = dict(DEFAULTS[command])
        if config_path:
            params.update(_load_config_file(command, config_path))
        for key, value in (flags or {}).items():
            if value is None:
                continue
            if key not in params:
                raise ValidationError(f"'{key}' is not a {command} option")
            params[key] = value
        if not params.get('out'):
            params['out'] = default_output_dir()
        config = cls(command, params)
        config.validate()
        return config

    def __getitem__(self, key):
        return self.params[key]

    def validate(self):
        p = self.params
        if self.command == 'simulate':
            _scenario_list(p['scenario'])
            _positive_int(p, 'n')
            _positive_int(p, 'M')
            _int(p, 'seed')
        elif self.command == 'fit':
            _required(p, 'input')
            _validate_fit_params(p)
            _positive_int(p, 'workers')
        elif self.command == 'density':
            _required(p, 'input')
            _required(p, 'fit')
            x0 = p['x0']
            if isinstance(x0, str):
                x0 = [v for v in x0.split(',') if v.strip()]
            if not x0:
                raise ValidationError("density needs at least one x0")
            try:
                p['x0'] = [float(v) for v in x0]
            except (TypeError, ValueError):
                raise ValidationError(f"x0 must be a list of numbers, got {x0}") from None
            for key in ('h1', 'h2'):
                if p[key] is not None and not float(p[key]) > 0:
                    raise ValidationError(f"{key} must be positive")
        elif self.command == 'study':
            _scenario_list(p['scenario'])
            n_list = p['n']
            if isinstance(n_list, str):
                n_list = [v for v in n_list.split(',') if v.strip()]
            if isinstance(n_list, int):
                n_list = [n_list]
            try:
                p['n'] = [int(v) for v in n_list]
            except (TypeError, ValueError):
                raise ValidationError(f"n must be a list of integers, got {n_list}") from None
            if not p['n'] or any(v < 10 for v in p['n']):
                raise ValidationError("every study sample size must be >= 10")
            _positive_int(p, 'M')
            _positive_int(p, 'K')
            _positive_int(p, 'workers')
            _validate_fit_params(p)

    def echo(self, derived=None):
        payload = {'command': self.command, 'params': self.params}
        if derived:
            payload['derived'] = derived
        return payload


def _load_config_file(command, path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}, line {e.lineno}: invalid JSON ({e.msg})") from None
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    if 'params' in data:
        if data.get('command', command) != command:
            raise ValidationError(
                f"{path} is a '{data.get('command')}' config, not '{command}'")
        extra = set(data) - {'command', 'params', 'derived'}
        if extra:
            raise ValidationError(f"{path}: unknown keys {sorted(extra)}")
        data = data['params']
    unknown = set(data) - set(DEFAULTS[command])
    if unknown:
        raise ValidationError(f"{path}: unknown {command} keys {sorted(unknown)}")
    return data


def _required(p, key):
    if p.get(key) in (None, ''):
        raise ValidationError(f"'{key}' is required")


def _int(p, key):
    try:
        p[key] = int(p[key])
    except (TypeError, ValueError):
        raise ValidationError(f"{key} must be an integer, got {p[key]!r}") from None


def _positive_int(p, key):
    _int(p, key)
    if p[key] < 1:
        raise ValidationError(f"{key} must be >= 1, got {p[key]}")


def _scenario_list(value):
    if isinstance(value, str) and value.lower() == 'all':
        return list(SCENARIOS.values())
    names = value if isinstance(value, list) else str(value).split(',')
    return [get_scenario(name.strip()) for name in names if name.strip()]


def _validate_fit_params(p):
    _int(p, 'seed')
    _positive_int(p, 'max_iter')
    if p.get('n_mc') is not None:
        _positive_int(p, 'n_mc')
    if p['kernel'] not in KERNEL_FAMILIES:
        raise ValidationError(f"kernel must be one of {', '.join(KERNEL_FAMILIES)}")
    if p['bandwidth_mode'] not in BANDWIDTH_MODES:
        raise ValidationError(f"bandwidth_mode must be one of {', '.join(BANDWIDTH_MODES)}")
    if p['init_method'] not in INIT_METHODS:
        raise ValidationError(f"init_method must be one of {', '.join(INIT_METHODS)}")
    if p.get('grid') is not None:
        parse_grid(p['grid'])
    fit_options(p)


def fit_options(p, d=1):
    """FitOptions from command parameters."""
    return FitOptions(
        kernel=KernelFn(p['kernel'], d), n_mc=p['n_mc'], seed=int(p['seed']),
        frac=float(p['frac']), pi_bar=float(p['pi_bar']), bandwidth_mode=p['bandwidth_mode'],
        h=p['h'], rate_c=float(p['rate_c']), rate_alpha=float(p['rate_alpha']),
        init_method=p['init_method'], poly_degree=int(p['poly_degree']),
        strict_theta=bool(p['strict_theta']), max_iter=int(p['max_iter']),
        xatol=float(p['xatol']), transfer_floor=float(p['transfer_floor']),
        workers=int(p.get('workers', 1)))


def param_space(p, y):
    """Box from explicit bounds where given, the response range otherwise."""
    base = ParamSpace.from_responses(y, strict=bool(p['strict_theta']))
    return ParamSpace(
        loc_lo=base.loc_lo if p['loc_lo'] is None else float(p['loc_lo']),
        loc_hi=base.loc_hi if p['loc_hi'] is None else float(p['loc_hi']),
        pi_lo=base.pi_lo if p['pi_lo'] is None else float(p['pi_lo']),
        pi_hi=base.pi_hi if p['pi_hi'] is None else float(p['pi_hi']))


def parse_grid(text):
    """'lo:hi:K' -> K equispaced points from lo to hi inclusive."""
    parts = str(text).split(':')
    try:
        if len(parts) != 3:
            raise ValueError
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ValidationError(f"grid must look like lo:hi:K, got '{text}'") from None
    if count < 1 or not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValidationError(f"grid needs finite bounds and K >= 1, got '{text}'")
    return np.linspace(lo, hi, count)


# ---------------------------------------------------------------- file formats

def _read_frame(path, what):
    """Raw string frame of a headed CSV; parse failures carry the file line number."""
    if not os.path.exists(path):
        raise ValidationError(f"{what} not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True,
                            encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise MalformedCSVError(path, 1, "file is empty") from None
    except pd.errors.ParserError as e:
        match = re.search(r'line (\d+)', str(e))
        raise MalformedCSVError(path, int(match.group(1)) if match else 1, str(e)) from None
    except UnicodeDecodeError as e:
        raise MalformedCSVError(path, 1, f"not UTF-8 ({e.reason})") from None
    if all(_is_number(c) for c in frame.columns):
        raise MalformedCSVError(path, 1, "header row is missing")
    if frame.shape[0] == 0:
        raise MalformedCSVError(path, 2, "no data rows")
    return frame


def _numeric_values(frame, path):
    numeric = frame.apply(pd.to_numeric, errors='coerce')
    bad = numeric.isna().any(axis=1) | ~np.isfinite(numeric.to_numpy(dtype=float)).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise MalformedCSVError(path, row + 2, f"non-numeric or non-finite value in {list(frame.iloc[row])}")
    return numeric.to_numpy(dtype=float)


def read_dataset(path):
    """Load a dataset CSV (header row, design columns, response last)."""
    frame = _read_frame(path, 'input file')
    if frame.shape[1] < 2:
        raise MalformedCSVError(path, 1, "need at least 2 columns (x..., y)")
    values = _numeric_values(frame, path)
    return Dataset(values[:, :-1], values[:, -1])


def _is_number(text):
    try:
        float(text)
        return True
    except ValueError:
        return False


def dataset_frame(data):
    names = ['x'] if data.d == 1 else [f'x{j + 1}' for j in range(data.d)]
    frame = pd.DataFrame(data.x, columns=names)
    frame['y'] = data.y
    return frame


def write_csv(frame, path):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n',
                 encoding='utf-8')
    return path


def write_json(payload, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, ensure_ascii=False, indent=2)
        f.write('\n')
    return path


def ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise ValidationError(f"cannot create output directory {path}: {e}") from None
    if not os.access(path, os.W_OK):
        raise ValidationError(f"output directory is not writable: {path}")
    return path


def fit_frame(fit):
    grid = fit.grid
    names = ['x'] if grid.shape[1] == 1 else [f'x{j + 1}' for j in range(grid.shape[1])]
    frame = pd.DataFrame(grid, columns=names)
    frame['pi_hat'] = fit.component('pi')
    frame['a_hat'] = fit.component('a')
    frame['b_hat'] = fit.component('b')
    frame['a_bar'] = fit.init.a_bar
    frame['b_bar'] = fit.init.b_bar
    frame['h_local'] = fit.init.h_local
    frame['h'] = fit.h
    frame['flags'] = ['|'.join(f) for f in fit.flags]
    return frame


def raw_frame(block):
    columns = ['replication', 'grid_index', 'x', 'pi_hat', 'a_hat', 'b_hat',
               'pi_true', 'a_true', 'b_true', 'flags']
    return pd.DataFrame(block.raw, columns=columns)


# ---------------------------------------------------------------- commands

def cmd_simulate(config):
    """Write sampled scenario datasets as CSV."""
    p = config.params
    out = ensure_dir(p['out'])
    banner("Simulate")
    written = []
    for sc in _scenario_list(p['scenario']):
        for z in range(p['M']):
            seed = p['seed'] if p['M'] == 1 else replication_seed(p['seed'], z)
            data = sample_dataset(sc, p['n'], seed)
            suffix = '' if p['M'] == 1 else f"_rep{z + 1:03d}"
            path = os.path.join(out, f"{sc.name}_n{p['n']}_seed{p['seed']}{suffix}.csv")
            written.append(write_csv(dataset_frame(data), path))
            log(f"✓ {path} ({data.n} rows)")
    written.append(write_json(config.echo(), os.path.join(out, 'simulate_config.json')))
    return written


def cmd_fit(config):
    """Fit the curve on a CSV dataset; write JSON + plot-ready CSV + config echo."""
    p = config.params
    data = read_dataset(p['input'])
    out = ensure_dir(p['out'])
    banner("Fit")
    log(f"Input: {p['input']} (n={data.n}, d={data.d})")

    if p['grid_file']:
        grid = read_grid_file(p['grid_file'], data.d)
    elif p['grid'] is not None:
        grid = parse_grid(p['grid'])
    else:
        grid = np.arange(1, p['K'] + 1, dtype=float) / p['K']
    if data.d > 1 and grid.ndim == 1:
        raise ValidationError("multivariate designs need --grid-file with one column per coordinate")

    options = fit_options(p, data.d)
    space = param_space(p, data.y)
    fit = fit_curve(data, grid, space, options)
    failed = len(fit.failed)
    log(f"✓ Fitted {fit.grid.shape[0]} points ({failed} failed)")

    payload = fit.to_dict()
    payload['space'] = space.to_dict()
    payload['n'] = data.n
    payload['d'] = data.d
    payload['kernel'] = options.kernel.family
    written = [
        write_json(payload, os.path.join(out, 'fit.json')),
        write_csv(fit_frame(fit), os.path.join(out, 'fit.csv')),
        write_json(config.echo(derived={
            'space': space.to_dict(),
            'n_mc': options.n_mc or data.n,
            'h_local': fit.init.h_local.tolist(),
            'h': fit.h.tolist(),
        }), os.path.join(out, 'fit_config.json')),
    ]
    if failed == fit.grid.shape[0]:
        raise NumericalError(f"every grid point failed; see {written[0]}")
    return written


def read_grid_file(path, d):
    """Testing points from a headed CSV, one column per design coordinate."""
    frame = _read_frame(path, 'grid file')
    if frame.shape[1] != d:
        raise MalformedCSVError(path, 1, f"grid file must hold {d} column(s), found {frame.shape[1]}")
    return _numeric_values(frame, path)


def _load_fit(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError:
        raise ValidationError(f"fit file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}, line {e.lineno}: invalid JSON ({e.msg})") from None


def _fit_point_at(fit, x0):
    for point in fit.get('points', []):
        if len(point['x']) == 1 and abs(point['x'][0] - x0) <= 1e-9:
            if point['pi_hat'] is None:
                raise MissingFitError(f"the fit at x0={x0} failed; no estimate to use")
            return point
    raise MissingFitError(f"no fitted grid point at x0={x0}")


def cmd_density(config):
    """Local error density at each requested x0 from a prior fit."""
    p = config.params
    data = read_dataset(p['input'])
    fit = _load_fit(p['fit'])
    out = ensure_dir(p['out'])
    banner("Local error density")
    kernel = KernelFn(fit.get('kernel', 'gaussian'), data.d)

    written = []
    for i, x0 in enumerate(p['x0']):
        point = _fit_point_at(fit, x0)
        theta = ThetaPoint(point['pi_hat'], point['a_hat'], point['b_hat'])
        h2 = p['h2'] if p['h2'] is not None else point['h_local']
        cfg = default_config(data, theta, [x0], h2, kernel, h1=p['h1'])
        local = invert_and_normalize(data, theta, cfg)
        stem = os.path.join(out, f"density_{i + 1:02d}_x{x0:.4f}")
        frame = pd.DataFrame({'y': local.y_grid, 'f_hat': local.density})
        written.append(write_csv(frame, stem + '.csv'))
        summary = local.summary()
        summary['theta_hat'] = theta.to_dict()
        written.append(write_json(summary, stem + '.json'))
        log(f"✓ x0={x0}: trim_mass={local.trim_mass:.4f}, "
            f"symmetry defect={symmetry_defect(local):.4f}")
    written.append(write_json(config.echo(), os.path.join(out, 'density_config.json')))
    return written


def cmd_study(config):
    """Replication study; report JSON, text table, raw dumps, timing sidecar."""
    p = config.params
    out = ensure_dir(p['out'])
    banner("Simulation study")
    scenarios = _scenario_list(p['scenario'])
    options = fit_options({**p, 'workers': 1})
    written = [write_json(config.echo(), os.path.join(out, 'study_config.json'))]

    blocks, wall = [], 0.0
    report = None
    try:
        for sc in scenarios:
            for n in p['n']:
                part = run_study([sc], [n], p['M'], p['K'], p['seed'], options, p['workers'])
                block = part.blocks[0]
                blocks.append(block)
                wall += part.wall_time
                written.append(write_csv(raw_frame(block),
                                         os.path.join(out, f"raw_{sc.name}_n{n}.csv")))
    finally:
        if blocks:
            report = StudyReport(blocks=blocks, M=p['M'], K=p['K'],
                                    master_seed=p['seed'], wall_time=wall)
            written.append(write_json(report.to_dict(), os.path.join(out, 'study_report.json')))
            table_path = os.path.join(out, 'study_table.txt')
            with open(table_path, 'w', encoding='utf-8') as f:
                f.write(format_table(report))
            written.append(table_path)
            written.append(write_json({'wall_time_seconds': round(wall, 3)},
                                      os.path.join(out, 'study_timing.json')))
    log(f"✓ Study complete in {format_time(wall)}")
    print(format_table(report))
    return written


COMMANDS = {
    'simulate': cmd_simulate,
    'fit': cmd_fit,
    'density': cmd_density,
    'study': cmd_study,
}
