"""
Regime classification on top of the closed-form block map.

A configuration is entropy-collapsed when the first attention layer condenses
(beta above beta_c of the input similarity), rank-collapsed when the similarity
after ``layers`` blocks reaches ``collapse_threshold``, and trainable otherwise.
"""
import enum
import logging
import math
from dataclasses import dataclass, replace
from typing import List

import numpy as np

from .errors import DomainError, NonMonotoneBoundary, NoTrainableRegion
from .parallel import parallel_map
from .params import BlockParams, ClassifierConfig
from .theory import beta_critical, block_map, iterate_depth

logger = logging.getLogger(__name__)


class RegimeLabel(str, enum.Enum):
    TRAINABLE = 'trainable'
    RANK_COLLAPSE = 'rank_collapse'
    ENTROPY_COLLAPSE = 'entropy_collapse'


@dataclass(frozen=True)
class DiagramGrid:
    alpha_axis: List[float]
    beta_axis: List[float]
    # labels[i][j] belongs to (alpha_axis[i], beta_axis[j])
    labels: List[List[RegimeLabel]]
    template: BlockParams
    cfg: ClassifierConfig

    def __post_init__(self):
        if len(self.labels) != len(self.alpha_axis) or any(len(row) != len(self.beta_axis) for row in self.labels):
            raise DomainError('label matrix does not match the axis lengths')
        for name, axis in (('alpha', self.alpha_axis), ('beta', self.beta_axis)):
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise DomainError('%s axis must be strictly increasing' % name)

    @property
    def shape(self):
        return len(self.alpha_axis), len(self.beta_axis)

    def label_at(self, i, j):
        return self.labels[i][j]

    def cells(self):
        """(alpha, beta, label) triples, alpha-major."""
        for i, alpha in enumerate(self.alpha_axis):
            for j, beta in enumerate(self.beta_axis):
                yield alpha, beta, self.labels[i][j]


def classify(params, cfg):
    if params.attn.beta > beta_critical(cfg.entropy_similarity):
        return RegimeLabel.ENTROPY_COLLAPSE
    rho_l = iterate_depth(cfg.rho0, params, cfg.layers).final.rho
    if rho_l >= cfg.collapse_threshold:
        return RegimeLabel.RANK_COLLAPSE
    return RegimeLabel.TRAINABLE


def _axis(bounds, name):
    lo, hi, n = bounds
    if int(n) != n or n < 1:
        raise DomainError('%s grid needs at least one point, got %r' % (name, n))
    if n == 1:
        return [float(lo)]
    if not lo < hi:
        raise DomainError('%s range must satisfy lo < hi, got (%r, %r)' % (name, lo, hi))
    return [float(v) for v in np.linspace(lo, hi, int(n))]


def _classify_cell(task):
    params, cfg = task
    return classify(params, cfg)


def trainability_diagram(template, alpha_range, beta_range, cfg, threads=1, progress=False):
    alphas = _axis(alpha_range, 'alpha')
    betas = _axis(beta_range, 'beta')
    if alphas[0] < 0 or betas[0] < 0:
        raise DomainError('alpha and beta ranges must be nonnegative')
    tasks = [(replace(template, alpha_sa=a, attn=replace(template.attn, beta=b)), cfg)
             for a in alphas for b in betas]
    logger.info('classifying %d x %d grid (%d layers)', len(alphas), len(betas), cfg.layers)
    flat = parallel_map(_classify_cell, tasks, threads, 'diagram', progress)
    m = len(betas)
    labels = [flat[i * m:(i + 1) * m] for i in range(len(alphas))]
    return DiagramGrid(alphas, betas, labels, template, cfg)


def critical_alpha(template, cfg, tol=1e-6, alpha_max=64.):
    """
    Smallest residual strength alpha_SA at which the configuration stops rank-collapsing.

    The bracket [0, alpha_hi] is found by doubling alpha_hi from 1; an 8-point probe
    over the bracket must show a single RankCollapse -> Trainable flip before bisection.
    """
    if not tol > 0:
        raise DomainError('tol must be positive, got %r' % (tol,))
    if template.attn.beta >= beta_critical(cfg.entropy_similarity):
        raise DomainError('beta = %g is in the entropy-collapse phase; no critical alpha' % template.attn.beta)

    def label(alpha):
        return classify(template.with_alpha(alpha), cfg)

    if label(0.) == RegimeLabel.TRAINABLE:
        return 0.

    hi = 1.
    while label(hi) != RegimeLabel.TRAINABLE:
        hi *= 2.
        if hi > alpha_max:
            raise NoTrainableRegion(alpha_max)
    logger.debug('bracket [0, %g] for beta=%g', hi, template.attn.beta)

    probes = np.linspace(0., hi, 8)
    labels = [label(a) for a in probes]
    flips = sum(1 for a, b in zip(labels, labels[1:]) if a != b)
    if flips != 1:
        raise NonMonotoneBoundary(probes, labels)
    k = next(i for i, l in enumerate(labels) if l == RegimeLabel.TRAINABLE)
    lo, hi = probes[k - 1], probes[k]

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if label(mid) == RegimeLabel.TRAINABLE:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _critical_alpha_cell(task):
    template, cfg, tol = task
    if template.attn.beta >= beta_critical(cfg.entropy_similarity):
        return math.nan
    return critical_alpha(template, cfg, tol)


def critical_alpha_curve(template, betas, cfg, tol=1e-6, threads=1, progress=False):
    """Critical alpha per beta column; NaN where the column is entropy-collapsed."""
    tasks = [(template.with_beta(float(b)), cfg, tol) for b in betas]
    return parallel_map(_critical_alpha_cell, tasks, threads, 'critical alpha', progress)


def find_fixed_point(params, rho_init, max_iter=10000, tol=1e-10):
    rho = rho_init
    for i in range(max_iter):
        new = block_map(rho, params)
        if abs(new - rho) < tol:
            logger.debug('fixed point %.12g after %d iterations', rho, i + 1)
            return rho, True
        rho = new
    logger.warning('fixed-point iteration did not converge in %d steps (last rho=%g)', max_iter, rho)
    return rho, False


def no_residual_map(beta_axis, sigma_w2_axis, template, rho0=0.):
    """One-block similarity with alpha_SA = alpha_MLP = 0, rows over beta and columns over sigma_w^2."""
    out = np.empty((len(beta_axis), len(sigma_w2_axis)))
    base = replace(template, alpha_sa=0., alpha_mlp=0.)
    for i, beta in enumerate(beta_axis):
        for j, sw2 in enumerate(sigma_w2_axis):
            params = replace(base, attn=replace(base.attn, beta=float(beta)),
                             mlp=replace(base.mlp, sigma_w2=float(sw2)))
            out[i, j] = block_map(rho0, params)
    return out
