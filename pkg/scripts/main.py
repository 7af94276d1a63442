#!/usr/bin/env python3
"""
mixreg-se command line

Subcommands:
    simulate   draw datasets from scenario G, T or L
    fit        estimate (pi, a, b) on a grid of testing points from a CSV dataset
    density    local error density at fitted points
    study      replication study with RASE tables

Exit codes: 0 success, 2 validation error, 3 numerical failure, 1 anything else.
"""

import argparse
import sys

from cli_io import COMMANDS, RunConfig
from console import log, set_quiet
from errors import MixRegError


def _add_common(parser, workers=False):
    parser.add_argument('--config', help='JSON config file (flags override it)')
    parser.add_argument('--out', help='Output directory (default: $MIXREG_OUTPUT_DIR or output/)')
    parser.add_argument('--quiet', action='store_true', help='Suppress info output')
    if workers:
        parser.add_argument('--workers', type=int, help='Parallel workers (default: 1)')


def _add_fit_options(parser):
    parser.add_argument('--seed', type=int, help='Master seed (default: 0)')
    parser.add_argument('--n-mc', dest='n_mc', type=int,
                        help='Monte-Carlo frequency nodes N (default: n)')
    parser.add_argument('--frac', type=float, help='Nearest-neighbour fraction (default: 0.2)')
    parser.add_argument('--pi-bar', dest='pi_bar', type=float,
                        help='Starting proportion (default: 0.4)')
    parser.add_argument('--kernel', choices=['gaussian', 'epanechnikov', 'uniform'])
    parser.add_argument('--bandwidth-mode', dest='bandwidth_mode',
                        choices=['local', 'global', 'rate'],
                        help='Contrast bandwidth: local h_local, global --h, or c n^(-1/(2a+d))')
    parser.add_argument('--h', type=float, help='Global contrast bandwidth')
    parser.add_argument('--rate-c', dest='rate_c', type=float)
    parser.add_argument('--rate-alpha', dest='rate_alpha', type=float)
    parser.add_argument('--init', dest='init_method', choices=['kernel', 'poly-em'])
    parser.add_argument('--poly-degree', dest='poly_degree', type=int)
    parser.add_argument('--strict-theta', dest='strict_theta', action='store_true', default=None,
                        help='Restrict pi to [0.05, 0.45]')
    parser.add_argument('--pi-lo', dest='pi_lo', type=float)
    parser.add_argument('--pi-hi', dest='pi_hi', type=float)
    parser.add_argument('--loc-lo', dest='loc_lo', type=float)
    parser.add_argument('--loc-hi', dest='loc_hi', type=float)
    parser.add_argument('--max-iter', dest='max_iter', type=int)
    parser.add_argument('--xatol', type=float)
    parser.add_argument('--transfer-floor', dest='transfer_floor', type=float,
                        help='Reject trial points with min |M(t, U_r)| below this (default: 0.1)')
    parser.add_argument('--K', type=int, help='Grid size for x_k = k/K (default: 20)')


def build_parser():
    parser = argparse.ArgumentParser(
        description='Semiparametric two-component mixture of regressions with symmetric errors',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python scripts/main.py simulate --scenario G --n 400 --seed 7
  python scripts/main.py fit --input output/G_n400_seed7.csv --grid 0.05:0.95:20
  python scripts/main.py density --input output/G_n400_seed7.csv --fit output/fit.json --x0 0.5
  python scripts/main.py study --scenario all --n 400,800,1200 --M 20 --workers 8
        """
    )
    sub = parser.add_subparsers(dest='command', required=True)

    sim = sub.add_parser('simulate', help='Sample scenario datasets')
    _add_common(sim)
    sim.add_argument('--scenario', help='G, T, L or all (default: G)')
    sim.add_argument('--n', type=int, help='Sample size (default: 400)')
    sim.add_argument('--seed', type=int, help='Seed (default: 0)')
    sim.add_argument('--M', type=int, help='Number of datasets (default: 1)')

    fit = sub.add_parser('fit', help='Fit a CSV dataset')
    _add_common(fit, workers=True)
    fit.add_argument('--input', help='Dataset CSV (x..., y)')
    fit.add_argument('--grid', help='Testing grid lo:hi:K (default: k/K, k=1..K)')
    fit.add_argument('--grid-file', dest='grid_file', help='CSV of testing points, one column per coordinate')
    _add_fit_options(fit)

    dens = sub.add_parser('density', help='Local error density from a fit')
    _add_common(dens)
    dens.add_argument('--input', help='Dataset CSV used for the fit')
    dens.add_argument('--fit', help='fit.json written by the fit command')
    dens.add_argument('--x0', help='Comma-separated fitted grid points')
    dens.add_argument('--h1', type=float, help='Frequency smoothing bandwidth')
    dens.add_argument('--h2', type=float, help='Design bandwidth (default: h_local of the fit)')

    study = sub.add_parser('study', help='Replication study (RASE tables)')
    _add_common(study, workers=True)
    study.add_argument('--scenario', help='G, T, L, comma list or all (default: T)')
    study.add_argument('--n', help='Comma-separated sample sizes (default: 400,800,1200)')
    study.add_argument('--M', type=int, help='Replications (default: 20)')
    _add_fit_options(study)

    return parser


def main(argv=None):
    """Parse arguments, run the command, map failures to exit codes."""
    args = build_parser().parse_args(argv)
    set_quiet(args.quiet)
    flags = {k: v for k, v in vars(args).items() if k not in ('command', 'config', 'quiet')}

    try:
        config = RunConfig.build(args.command, args.config, flags)
        written = COMMANDS[args.command](config)
        log(f"✓ Wrote {len(written)} file(s) to {config['out']}")
        return 0
    except MixRegError as e:
        print(f"\n❌ Fatal Error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        print(f"\n❌ Fatal Error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
