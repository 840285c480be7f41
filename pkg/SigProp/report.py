"""
Run configuration files and result tables.

Configuration files are flat JSON objects; every key is optional and unknown keys
are rejected. The recognised keys and their defaults are the fields of
``RunConfig``. Every table is written either as CSV (``#``-prefixed metadata
lines, one header row, ``%.10g`` floats, ``\\n`` line endings) or as JSON of the
form ``{"metadata": {...}, "columns": [...], "rows": [{column: value}, ...]}``
with NaN written as null.
"""
import contextlib
import enum
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, fields, replace
from typing import List, Optional

import numpy as np

from .errors import ConfigError, LengthMismatchError, SigPropError
from .params import (DEFAULT_QUAD_NODES, Activation, AttentionParams, BlockParams, ClassifierConfig, MlpParams,
                     NormPlacement, SimConfig)
from .theory import Trajectory, sa_update_map, y_q, y_q_finite_size

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.10g'


@dataclass(frozen=True)
class RunConfig:
    # attention
    beta: float = 0.5
    seq_len: int = 512
    finite_size: bool = False
    log_base: float = math.e
    # MLP
    sigma_w2: float = 1.0
    sigma_b2: float = 0.0
    activation: str = Activation.RELU.value
    quad_nodes: int = DEFAULT_QUAD_NODES
    # block
    alpha_sa: float = 1.0
    alpha_mlp: float = 1.0
    sigma_v2: float = 1.0
    norm_placement: str = NormPlacement.POST_NORM_BOTH.value
    # depth / classifier
    layers: int = 60
    collapse_threshold: float = 0.99
    rho0: float = 0.04
    entropy_rho: Optional[float] = None
    # diagram grid
    alpha_min: float = 0.5
    alpha_max: float = 3.0
    alpha_steps: int = 26
    beta_min: float = 0.005
    beta_max: float = 2.5
    beta_steps: int = 50
    # Monte Carlo
    d: int = 512
    n_seeds: int = 1
    n_sequences: int = 1
    base_seed: int = 0
    pos_std: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.log_base) or self.log_base <= 1:
            raise ConfigError('must be a number > 1', key='log_base')
        for name in ('alpha', 'beta'):
            lo, hi, n = getattr(self, name + '_min'), getattr(self, name + '_max'), getattr(self, name + '_steps')
            if n < 1:
                raise ConfigError('must be >= 1', key=name + '_steps')
            if lo < 0 or lo > hi or (n > 1 and lo == hi):
                raise ConfigError('range must satisfy 0 <= %s_min < %s_max' % (name, name), key=name + '_max')
        for key, least in (('d', 2), ('n_seeds', 1), ('n_sequences', 1)):
            if getattr(self, key) < least:
                raise ConfigError('must be >= %d' % least, key=key)
        if not 0 <= self.base_seed < 2**64:
            raise ConfigError('must be an unsigned 64-bit integer', key='base_seed')
        if not math.isfinite(self.pos_std) or self.pos_std < 0:
            raise ConfigError('must be nonnegative', key='pos_std')
        # building the records validates every remaining field
        self.block_params()
        self.classifier_config()

    def block_params(self):
        return BlockParams(attn=AttentionParams(self.beta, self.seq_len, self.finite_size),
                           mlp=MlpParams(self.sigma_w2, self.sigma_b2, self.activation, self.quad_nodes),
                           alpha_sa=self.alpha_sa, alpha_mlp=self.alpha_mlp, sigma_v2=self.sigma_v2,
                           norm_placement=self.norm_placement)

    def classifier_config(self):
        return ClassifierConfig(self.layers, self.collapse_threshold, self.rho0, self.entropy_rho)

    def sim_config(self):
        return SimConfig(d=self.d, seq_len=self.seq_len, block=self.block_params(), n_seeds=self.n_seeds,
                         n_sequences=self.n_sequences, base_seed=self.base_seed, rho0=self.rho0,
                         pos_std=self.pos_std)

    @property
    def alpha_range(self):
        return self.alpha_min, self.alpha_max, self.alpha_steps

    @property
    def beta_range(self):
        return self.beta_min, self.beta_max, self.beta_steps

    def override(self, **values):
        """Copy with the given keys replaced; None values are ignored"""
        values = {k: v for k, v in values.items() if v is not None}
        unknown = set(values) - _FIELDS.keys()
        if unknown:
            raise ConfigError('unknown key', key=sorted(unknown)[0])
        return replace(self, **{k: _coerce(k, v) for k, v in values.items()})

    def as_dict(self):
        return asdict(self)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_INT_KEYS = {'seq_len', 'quad_nodes', 'layers', 'alpha_steps', 'beta_steps', 'd', 'n_seeds', 'n_sequences',
             'base_seed'}
_BOOL_KEYS = {'finite_size'}
_STR_KEYS = {'activation', 'norm_placement'}
_OPTIONAL_KEYS = {'entropy_rho'}


def _coerce(key, value):
    if value is None and key in _OPTIONAL_KEYS:
        return None
    if key in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ConfigError('must be true or false', key=key)
        return value
    if key in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError('must be a string', key=key)
        return value.lower()
    if isinstance(value, bool):
        raise ConfigError('must be a number', key=key)
    if key in _INT_KEYS:
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError('must be an integer', key=key)
        return value
    if not isinstance(value, (int, float)):
        raise ConfigError('must be a number', key=key)
    return float(value)


def parse_config(text):
    if not text.strip():
        doc = {}
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError('invalid JSON: %s (column %d)' % (e.msg, e.colno), line=e.lineno)
    if not isinstance(doc, dict):
        raise ConfigError('configuration must be a JSON object', line=1)
    for key in sorted(doc):
        if key not in _FIELDS:
            raise ConfigError('unknown key', key=key)
    return RunConfig(**{k: _coerce(k, v) for k, v in doc.items()})


def load_config(path):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError('cannot read %s: %s' % (path, e.strerror))
    return parse_config(text)


def serialize_config(config):
    return json.dumps(config.as_dict(), sort_keys=True, indent=2) + '\n'


def block_metadata(params):
    """Flat key/value view of BlockParams for output headers"""
    return {
        'beta': params.attn.beta, 'seq_len': params.attn.seq_len, 'finite_size': params.attn.finite_size,
        'sigma_w2': params.mlp.sigma_w2, 'sigma_b2': params.mlp.sigma_b2,
        'activation': params.mlp.activation.value, 'quad_nodes': params.mlp.quad_nodes,
        'alpha_sa': params.alpha_sa, 'alpha_mlp': params.alpha_mlp, 'sigma_v2': params.sigma_v2,
        'norm_placement': params.norm_placement.value,
    }


# table writers


def _format(value):
    if value is None:
        return 'null'
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % value
    if isinstance(value, enum.Enum):
        return str(value.value)
    return str(value)


def _json_value(value):
    if isinstance(value, (float, np.floating)):
        return None if math.isnan(value) else float(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, enum.Enum):
        return value.value
    return value


@contextlib.contextmanager
def _open(path):
    if path is None or path == '-':
        yield sys.stdout
        return
    try:
        f = open(path, 'w', newline='')
    except OSError as e:
        raise SigPropError('cannot write %s: %s' % (path, e.strerror))
    with f:
        yield f


def write_table(path, columns, rows, metadata=None, fmt='csv'):
    """Writes rows (sequences aligned with columns) as CSV or JSON to path; None or '-' is stdout."""
    metadata = metadata or {}
    with _open(path) as f:
        if fmt == 'json':
            doc = {'metadata': {k: _json_value(v) for k, v in sorted(metadata.items())},
                   'columns': list(columns),
                   'rows': [{c: _json_value(v) for c, v in zip(columns, row)} for row in rows]}
            f.write(json.dumps(doc, indent=2) + '\n')
        elif fmt == 'csv':
            for key in sorted(metadata):
                f.write('# %s = %s\n' % (key, _format(metadata[key])))
            f.write(','.join(columns) + '\n')
            for row in rows:
                f.write(','.join(_format(v) for v in row) + '\n')
        else:
            raise SigPropError('unknown output format %r' % fmt)
    if path not in (None, '-'):
        logger.info('wrote %d rows to %s', len(rows), path)


def write_trajectory_csv(traj, path, empirical=None, metadata=None, fmt='csv'):
    """
    One row per layer. A theory Trajectory gives ``rho_theory``; an empirical
    trajectory (alone or alongside) adds ``rho_mean,rho_std,ipr,entropy``.
    """
    if not isinstance(traj, Trajectory):
        traj, empirical = None, traj
    if traj is not None and empirical is not None and len(traj) != len(empirical):
        raise LengthMismatchError('theory has %d layers, simulation has %d' % (traj.layers, empirical.layers))
    columns = ['layer']
    if traj is not None:
        columns.append('rho_theory')
    if empirical is not None:
        columns += ['rho_mean', 'rho_std', 'ipr', 'entropy']
    n = len(traj) if traj is not None else len(empirical)
    rows = []
    for layer in range(n):
        row = [layer]
        if traj is not None:
            row.append(traj.states[layer].rho)
        if empirical is not None:
            row += [empirical.rho_mean[layer], empirical.rho_std[layer], empirical.ipr[layer],
                    empirical.entropy[layer]]
        rows.append(row)
    write_table(path, columns, rows, metadata, fmt)


def write_trajectory_json(traj, path, empirical=None, metadata=None):
    write_trajectory_csv(traj, path, empirical, metadata, fmt='json')


def write_diagram_csv(grid, path, metadata=None, critical_alpha=None, fmt='csv'):
    """Long format ``alpha_sa,beta,regime``, alpha-major; critical alphas go into the metadata."""
    meta = dict(block_metadata(grid.template))
    meta.update(layers=grid.cfg.layers, collapse_threshold=grid.cfg.collapse_threshold, rho0=grid.cfg.rho0,
                entropy_rho=grid.cfg.entropy_similarity)
    meta.update(metadata or {})
    # the alpha_sa and beta of the template are overridden per cell
    meta.pop('alpha_sa', None)
    meta.pop('beta', None)
    if critical_alpha is not None:
        for beta, alpha in zip(grid.beta_axis, critical_alpha):
            meta['critical_alpha[beta=%s]' % (FLOAT_FORMAT % beta)] = alpha
    rows = [[a, b, label.value] for a, b, label in grid.cells()]
    write_table(path, ['alpha_sa', 'beta', 'regime'], rows, meta, fmt)


def write_diagram_json(grid, path, metadata=None, critical_alpha=None):
    write_diagram_csv(grid, path, metadata, critical_alpha, fmt='json')


def write_phase_csv(result, path, metadata=None, fmt='csv'):
    """
    Single-layer Monte Carlo grids with their theory columns: a PhaseResult gives one row per
    (beta, rho) cell, beta-major; an IprResult one row per beta.
    """
    meta = {'d': result.d, 'seq_len': result.seq_len, 'n_seeds': result.n_seeds}
    meta.update(metadata or {})
    T = result.seq_len
    if hasattr(result, 'sa_rho'):
        columns = ['beta', 'rho', 'sa_rho_mean', 'sa_rho_std', 'ipr', 'entropy', 'cross_overlap',
                   'sa_rho_theory', 'y_q', 'y_q_finite_size']
        rows = []
        for i, beta in enumerate(result.beta_axis):
            for j, rho in enumerate(result.rho_axis):
                attn = AttentionParams(float(beta), T)
                rows.append([beta, rho, result.sa_rho[i, j], result.sa_rho_std[i, j], result.ipr[i, j],
                             result.entropy[i, j], result.cross_overlap[i, j], sa_update_map(float(rho), attn),
                             y_q(beta, rho), y_q_finite_size(beta, rho, T)])
    else:
        meta['rho'] = result.rho
        columns = ['beta', 'ipr_mean', 'ipr_std', 'entropy', 'y_q', 'y_q_finite_size']
        rho = result.rho
        rows = [[beta, result.ipr_mean[i], result.ipr_std[i], result.entropy_mean[i], y_q(beta, rho),
                 y_q_finite_size(beta, rho, T)] for i, beta in enumerate(result.beta_axis)]
    write_table(path, columns, rows, meta, fmt)


def write_phase_json(result, path, metadata=None):
    write_phase_csv(result, path, metadata, fmt='json')


def write_fixed_point(rho_star, converged, residual, path, metadata=None, fmt='csv'):
    write_table(path, ['rho_star', 'converged', 'residual'], [[rho_star, converged, residual]], metadata, fmt)


@dataclass(frozen=True)
class ComparisonRow:
    layer: int
    theory: float
    mean: float
    std: float
    deviation: float


@dataclass(frozen=True)
class ComparisonReport:
    rows: List[ComparisonRow]
    max_deviation: float
    mean_deviation: float


def compare_report(theory, empirical):
    if len(theory) != len(empirical):
        raise LengthMismatchError('theory has %d layers, simulation has %d' % (theory.layers, empirical.layers))
    rows = []
    for layer, state in enumerate(theory.states):
        mean = float(empirical.rho_mean[layer])
        rows.append(ComparisonRow(layer, state.rho, mean, float(empirical.rho_std[layer]), abs(state.rho - mean)))
    deviations = [r.deviation for r in rows]
    return ComparisonReport(rows, max(deviations), sum(deviations) / len(deviations))
