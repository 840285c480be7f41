"""
Command-line entry point: ``sigprop <command> [<subcommand>] [flags]``.

Exit codes: 0 success, 1 failed ``--assert-max-dev`` check, 2 usage or
configuration error, 3 numerical or runtime error.
"""
import argparse
import functools
import logging
import math
import sys

import numpy as np

from .errors import ConfigError, SigPropError
from .params import AttentionParams
from .regimes import critical_alpha_curve, find_fixed_point, no_residual_map, trainability_diagram
from .report import (RunConfig, compare_report, load_config, write_diagram_csv, write_fixed_point, write_phase_csv,
                     write_table, write_trajectory_csv)
from .simulation import run_depth_experiment, run_ipr_experiment, run_sa_phase_experiment
from .theory import (block_map, effective_beta, finite_size_entropy, iterate_depth, sa_update_map, y_p, y_q,
                     y_q_finite_size)

logger = logging.getLogger(__name__)

EXIT_ASSERTION = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class AssertionFailed(Exception):
    pass


def _range(text):
    parts = text.split(':')
    if len(parts) != 3:
        raise argparse.ArgumentTypeError('expected LO:HI:N, got %r' % text)
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError('expected LO:HI:N, got %r' % text)
    if n < 1:
        raise argparse.ArgumentTypeError('N must be >= 1')
    return lo, hi, n


def _similarity(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError('expected a number, got %r' % text)
    if not -1 <= value < 1:
        raise argparse.ArgumentTypeError('cosine similarity must lie in [-1, 1), got %r' % text)
    return value


def _similarity_range(text):
    lo, hi, n = _range(text)
    if not (-1 <= lo < 1 and -1 <= hi < 1):
        raise argparse.ArgumentTypeError('cosine similarities must lie in [-1, 1), got %r' % text)
    return lo, hi, n


def _grid(lo, hi, n):
    return [lo] if n == 1 else list(np.linspace(lo, hi, n))


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError('must be a positive integer, got %r' % text)
    return value


def _log_base(text):
    if text == 'e':
        return math.e
    return float(text)


def _load(args, **overrides):
    """Config file (if any) with command-line overrides applied; None values keep the file value"""
    config = load_config(args.config) if getattr(args, 'config', None) else RunConfig()
    block = {k: getattr(args, k, None) for k in ('beta', 'seq_len', 'sigma_w2', 'sigma_b2', 'activation',
                                               'alpha_sa', 'alpha_mlp', 'sigma_v2', 'norm_placement', 'layers',
                                               'rho0', 'quad_nodes')}
    if getattr(args, 'finite_size', False):
        block['finite_size'] = True
    block['base_seed'] = getattr(args, 'seed', None)
    block.update(overrides)
    return config.override(**block)


def _metadata(config, **extra):
    meta = config.as_dict()
    meta.update(extra)
    return meta


# theory


def cmd_theory_curve(args):
    if args.rho is not None:
        rhos = [args.rho]
    else:
        rhos = _grid(*args.rho_range)
    T = args.seq_len
    columns = ['beta', 'rho', 'sa_rho', 'y_q']
    if T is not None:
        columns += ['sa_rho_finite_size', 'y_q_finite_size', 'y_p_finite_size', 'entropy_finite_size']
    rows = []
    for rho in rhos:
        row = [args.beta, rho, sa_update_map(rho, AttentionParams(args.beta, T or 2)), y_q(args.beta, rho)]
        if T is not None:
            attn = AttentionParams(args.beta, T, finite_size=True)
            row += [sa_update_map(rho, attn), y_q_finite_size(args.beta, rho, T), y_p(args.beta, rho, T, True),
                    finite_size_entropy(args.beta, rho, T)]
        rows.append(row)
    meta = {'beta': args.beta, 'seq_len': T}
    write_table(args.output, columns, rows, meta, args.format)


def cmd_theory_depth(args):
    config = _load(args)
    traj = iterate_depth(config.rho0, config.block_params(), config.layers)
    write_trajectory_csv(traj, args.output, metadata=_metadata(config), fmt=args.format)


def cmd_theory_fixed_point(args):
    config = _load(args)
    params = config.block_params()
    rho_init = config.rho0 if args.rho_init is None else args.rho_init
    rho_star, converged = find_fixed_point(params, rho_init, args.max_iter, args.tol)
    residual = abs(block_map(rho_star, params) - rho_star)
    meta = _metadata(config, rho_init=rho_init, max_iter=args.max_iter, tol=args.tol)
    write_fixed_point(rho_star, converged, residual, args.output, meta, args.format)


def cmd_theory_no_residual(args):
    config = _load(args)
    rho0 = 0. if args.rho0 is None else args.rho0
    out = no_residual_map(args.beta_grid, args.sigma_w2_grid, config.block_params(), rho0)
    rows = [[b, s, out[i, j]] for i, b in enumerate(args.beta_grid) for j, s in enumerate(args.sigma_w2_grid)]
    meta = _metadata(config, rho0=rho0, alpha_sa=0., alpha_mlp=0.)
    write_table(args.output, ['beta', 'sigma_w2', 'rho_out'], rows, meta, args.format)


# diagram


def cmd_diagram(args):
    overrides = {}
    if args.alpha_range:
        overrides.update(alpha_min=args.alpha_range[0], alpha_max=args.alpha_range[1],
                         alpha_steps=args.alpha_range[2])
    if args.beta_range:
        overrides.update(beta_min=args.beta_range[0], beta_max=args.beta_range[1], beta_steps=args.beta_range[2])
    config = _load(args, **overrides)
    cfg = config.classifier_config()
    template = config.block_params()
    grid = trainability_diagram(template, config.alpha_range, config.beta_range, cfg, threads=args.threads,
                                progress=args.verbose)
    critical = None
    if args.critical_alpha:
        critical = critical_alpha_curve(template, grid.beta_axis, cfg, args.tol, threads=args.threads,
                                        progress=args.verbose)
    write_diagram_csv(grid, args.output, _metadata(config), critical, fmt=args.format)


# Monte Carlo


def cmd_sim_depth(args):
    config = _load(args, d=args.d, n_seeds=args.seeds, n_sequences=args.sequences, pos_std=args.pos_std)
    sim = config.sim_config()
    theory = iterate_depth(sim.input_similarity, sim.block, config.layers)
    empirical = run_depth_experiment(sim, config.layers, progress=args.verbose, threads=args.threads)
    report = compare_report(theory, empirical)
    logger.info('max deviation %.4g, mean deviation %.4g', report.max_deviation, report.mean_deviation)
    meta = _metadata(config, max_deviation=report.max_deviation, mean_deviation=report.mean_deviation)
    write_trajectory_csv(theory, args.output, empirical, meta, args.format)
    if args.assert_max_dev is not None and report.max_deviation > args.assert_max_dev:
        raise AssertionFailed('max deviation %.4g exceeds %.4g' % (report.max_deviation, args.assert_max_dev))


def cmd_sim_sa_phase(args):
    seed = 0 if args.seed is None else args.seed
    result = run_sa_phase_experiment(args.d, args.seq_len, args.beta_grid, args.rho_grid, args.seeds, seed,
                                     args.sigma_v2, progress=args.verbose, threads=args.threads)
    write_phase_csv(result, args.output, {'base_seed': seed, 'sigma_v2': args.sigma_v2}, args.format)


def cmd_sim_ipr(args):
    seed = 0 if args.seed is None else args.seed
    result = run_ipr_experiment(args.d, args.seq_len, args.beta_grid, args.rho, args.seeds, seed, args.chunk,
                                progress=args.verbose, threads=args.threads)
    write_phase_csv(result, args.output, {'base_seed': seed, 'chunk': args.chunk}, args.format)


def cmd_effective_beta(args, parser):
    if args.heads < 1:
        parser.error('--heads must be a positive integer')
    if args.d % args.heads:
        parser.error('--d must be divisible by --heads')
    config = _load(args, log_base=args.log_base)
    value = effective_beta(args.d // args.heads, config.seq_len, args.init_std, config.log_base)
    sys.stdout.write('%.10g\n' % value)


def _common():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--format', choices=['csv', 'json'], default='csv', help='output format')
    common.add_argument('--output', default=None, help='output path (default: stdout)')
    common.add_argument('--seed', type=int, default=None, help='base seed of all random streams')
    common.add_argument('--threads', type=_positive_int, default=None, help='worker processes (default: one per core)')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='debug logging and progress bars')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='warnings and errors only')
    return common


def _block_flags():
    block = argparse.ArgumentParser(add_help=False)
    block.add_argument('--config', help='JSON run configuration; flags override its values')
    block.add_argument('--beta', type=float)
    block.add_argument('--seq-len', dest='seq_len', type=int)
    block.add_argument('--finite-size', action='store_true', help='finite-T attention corrections')
    block.add_argument('--sigma-w2', dest='sigma_w2', type=float)
    block.add_argument('--sigma-b2', dest='sigma_b2', type=float)
    block.add_argument('--sigma-v2', dest='sigma_v2', type=float)
    block.add_argument('--activation', choices=['relu', 'tanh'])
    block.add_argument('--quad-nodes', dest='quad_nodes', type=int)
    block.add_argument('--alpha-sa', dest='alpha_sa', type=float)
    block.add_argument('--alpha-mlp', dest='alpha_mlp', type=float)
    block.add_argument('--norm-placement', dest='norm_placement', choices=['post_norm_both', 'post_norm_final'])
    block.add_argument('--layers', type=_positive_int)
    block.add_argument('--rho0', type=float)
    return block


def build_parser():
    common = _common()
    block = _block_flags()
    parser = argparse.ArgumentParser(prog='sigprop',
                                     description='Signal propagation in transformers at initialisation')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    theory = commands.add_parser('theory', help='closed-form maps').add_subparsers(dest='subcommand',
                                                                                      metavar='subcommand')
    theory.required = True
    p = theory.add_parser('curve', parents=[common], help='single-layer self-attention map SA(rho) and Y_q')
    p.add_argument('--beta', type=float, required=True)
    rho = p.add_mutually_exclusive_group(required=True)
    rho.add_argument('--rho', type=_similarity)
    rho.add_argument('--rho-range', dest='rho_range', type=_similarity_range, metavar='LO:HI:N')
    p.add_argument('--seq-len', dest='seq_len', type=int, help='adds finite-size columns for this T')
    p.set_defaults(func=cmd_theory_curve)

    p = theory.add_parser('depth', parents=[common, block], help='iterate the block map over depth')
    p.set_defaults(func=cmd_theory_depth)

    p = theory.add_parser('fixed-point', parents=[common, block], help='fixed point of the block map')
    p.add_argument('--rho-init', dest='rho_init', type=float, help='starting similarity (default: rho0)')
    p.add_argument('--max-iter', dest='max_iter', type=_positive_int, default=10000)
    p.add_argument('--tol', type=float, default=1e-10)
    p.set_defaults(func=cmd_theory_fixed_point)

    p = theory.add_parser('no-residual', parents=[common, block],
                          help='one block without residual connections over (beta, sigma_w2)')
    p.add_argument('--beta-grid', dest='beta_grid', type=float, nargs='+', required=True)
    p.add_argument('--sigma-w2-grid', dest='sigma_w2_grid', type=float, nargs='+', required=True)
    p.set_defaults(func=cmd_theory_no_residual)

    p = commands.add_parser('diagram', parents=[common, block], help='trainability diagram over (alpha_sa, beta)')
    p.add_argument('--alpha-range', dest='alpha_range', type=_range, metavar='LO:HI:N')
    p.add_argument('--beta-range', dest='beta_range', type=_range, metavar='LO:HI:N')
    p.add_argument('--critical-alpha', dest='critical_alpha', action='store_true',
                   help='also bisect the critical alpha_sa of every beta column')
    p.add_argument('--tol', type=float, default=1e-6, help='bisection tolerance')
    p.set_defaults(func=cmd_diagram)

    sim = commands.add_parser('sim', help='Monte Carlo experiments').add_subparsers(dest='subcommand',
                                                                                  metavar='subcommand')
    sim.required = True
    p = sim.add_parser('depth', parents=[common, block], help='theory and Monte Carlo depth profile')
    p.add_argument('--d', type=int)
    p.add_argument('--seeds', type=_positive_int, help='number of weight initialisations')
    p.add_argument('--sequences', type=_positive_int, help='number of input sequences')
    p.add_argument('--pos-std', dest='pos_std', type=float,
                   help='add random absolute positional embeddings of this standard deviation')
    p.add_argument('--assert-max-dev', dest='assert_max_dev', type=float,
                   help='exit 1 if the max per-layer deviation exceeds this')
    p.set_defaults(func=cmd_sim_depth)

    p = sim.add_parser('sa-phase', parents=[common], help='single self-attention layer over a (beta, rho) grid')
    p.add_argument('--d', type=int, default=512)
    p.add_argument('--seq-len', dest='seq_len', type=int, default=1024)
    p.add_argument('--beta-grid', dest='beta_grid', type=float, nargs='+', required=True)
    p.add_argument('--rho-grid', dest='rho_grid', type=float, nargs='+', required=True)
    p.add_argument('--seeds', type=_positive_int, default=5)
    p.add_argument('--sigma-v2', dest='sigma_v2', type=float, default=1.0)
    p.set_defaults(func=cmd_sim_sa_phase)

    p = sim.add_parser('ipr', parents=[common], help='attention-row IPR for very long sequences')
    p.add_argument('--d', type=int, default=512)
    p.add_argument('--seq-len', dest='seq_len', type=int, default=100000)
    p.add_argument('--beta-grid', dest='beta_grid', type=float, nargs='+', required=True)
    p.add_argument('--rho', type=float, default=0.0)
    p.add_argument('--seeds', type=_positive_int, default=10)
    p.add_argument('--chunk', type=_positive_int, default=8192)
    p.set_defaults(func=cmd_sim_ipr)

    p = commands.add_parser('effective-beta', parents=[common],
                            help='inverse temperature implied by a query/key init std')
    p.add_argument('--d', type=int, required=True)
    p.add_argument('--heads', type=int, required=True)
    p.add_argument('--config', help='JSON run configuration supplying seq_len and log_base')
    p.add_argument('--seq-len', dest='seq_len', type=int)
    p.add_argument('--init-std', dest='init_std', type=float, default=0.02)
    p.add_argument('--log-base', dest='log_base', type=_log_base, help="number or 'e' (default: config, else e)")
    p.set_defaults(func=functools.partial(cmd_effective_beta, parser=p))
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format='%(asctime)s %(name)s %(levelname)s: %(message)s')
    try:
        args.func(args)
    except AssertionFailed as e:
        logger.error('assertion failed: %s', e)
        return EXIT_ASSERTION
    except ConfigError as e:
        logger.error('configuration error: %s', e)
        return EXIT_USAGE
    except SigPropError as e:
        logger.error('%s', e)
        return EXIT_RUNTIME
    return 0


if __name__ == '__main__':
    sys.exit(main())
