"""
Closed-form signal propagation through a post-norm transformer block at initialisation.

The geometry of a sequence is tracked by two concentrated scalars: the mean
squared token norm q and the mean cross inner product p (both divided by d),
with cosine similarity rho = p / q. Every function here is pure.
"""
import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import DomainError, NumericalError
from .params import Activation, NormPlacement
from .quadrature import correlated_gaussian_expectation, gaussian_expectation

logger = logging.getLogger(__name__)

# tolerance for comparisons against 1 (rho) and for the unit-norm precondition
UNIT_TOL = 1e-9
# inputs to the ReLU kernel may exceed [-1, 1] by this much through rounding
KERNEL_TOL = 1e-12


@dataclass(frozen=True)
class GeometryState:
    q: float
    p: float

    def __post_init__(self):
        if not (math.isfinite(self.q) and math.isfinite(self.p)):
            raise NumericalError('non-finite geometry (q=%r, p=%r)' % (self.q, self.p))
        if self.q < 0:
            raise DomainError('q must be nonnegative, got %r' % self.q)
        if abs(self.p) > self.q * (1. + UNIT_TOL) + KERNEL_TOL:
            raise DomainError('|p| must not exceed q (q=%r, p=%r)' % (self.q, self.p))

    @property
    def rho(self):
        # q == 0 only arises from a fully averaged attention output: every token
        # is the same (zero) vector, i.e. the rank-collapsed direction
        if self.q == 0.:
            return 1.
        return min(1., max(-1., self.p / self.q))

    @property
    def collapsed(self):
        return self.rho >= 1. - UNIT_TOL

    def scaled(self, c):
        return GeometryState(c * self.q, c * self.p)


COLLAPSED = GeometryState(1., 1.)


@dataclass(frozen=True)
class Trajectory:
    states: List[GeometryState]

    def __len__(self):
        return len(self.states)

    @property
    def layers(self):
        return len(self.states) - 1

    @property
    def rhos(self):
        return np.array([s.rho for s in self.states])

    @property
    def final(self):
        return self.states[-1]


def _check_seq_len(T):
    if int(T) != T or T < 2:
        raise DomainError('sequence length must be an integer >= 2, got %r' % (T,))


def _check_rho(rho, allow_one=False):
    if not math.isfinite(rho) or rho < -1. - KERNEL_TOL or rho > 1. + KERNEL_TOL:
        raise DomainError('cosine similarity must lie in [-1, 1], got %r' % (rho,))
    if not allow_one and rho >= 1.:
        raise DomainError('critical inverse temperature diverges at rho = 1')


def sigma_a_from_beta(beta, T):
    """Score standard deviation sigma_a = beta * sqrt(ln T)."""
    _check_seq_len(T)
    if beta < 0:
        raise DomainError('beta must be nonnegative, got %r' % beta)
    return beta * math.sqrt(math.log(T))


def effective_beta(head_dim, T, init_std=0.02, log_base=math.e):
    """
    Inverse temperature implied by a fixed query/key initialisation std:
    init_std^2 * head_dim / sqrt(log T).

    The logarithm defaults to natural; log_base=10 reproduces the figure usually
    quoted for BERT-base (about 0.016 for d_H = 64, T = 512).
    """
    if int(head_dim) != head_dim or head_dim < 1:
        raise DomainError('head dimension must be a positive integer, got %r' % (head_dim,))
    _check_seq_len(T)
    if not init_std > 0:
        raise DomainError('init_std must be positive, got %r' % (init_std,))
    if not log_base > 1:
        raise DomainError('log base must exceed 1, got %r' % (log_base,))
    return init_std**2 * head_dim / math.sqrt(math.log(T, log_base))


def beta_critical(rho):
    _check_rho(rho)
    return math.sqrt(2. / (1. - rho))


def y_q(beta, rho):
    """Asymptotic inverse participation ratio of an attention row."""
    bc = beta_critical(rho)
    if beta <= bc:
        return 0.
    return 1. - bc / beta


def y_q_finite_size(beta, rho, T):
    """
    Inverse participation ratio with the finite-T correction T^(-1 + beta^2 / beta_c^2)
    below the condensation threshold; the asymptotic value at and above it.
    """
    _check_seq_len(T)
    bc = beta_critical(rho)
    if beta < bc:
        value = T ** (-1. + (beta / bc)**2)
    else:
        value = y_q(beta, rho)
    return min(1., max(0., value))


def finite_size_entropy(beta, rho, T):
    """Extensive part of the attention-row entropy, ln T (1 - beta^2 / beta_c^2), zero once condensed."""
    _check_seq_len(T)
    bc = beta_critical(rho)
    if beta >= bc:
        return 0.
    return math.log(T) * (1. - (beta / bc)**2)


def y_p(beta, rho, T, finite_size=False):
    """Cross-overlap of two attention rows; 1/T for uniform rows in finite-size mode."""
    _check_seq_len(T)
    bc = beta_critical(rho)
    if finite_size and beta < bc:
        return 1. / T
    return 0.


def sa_update(state, attn):
    """
    Geometry after one self-attention layer with sigma_V^2 = 1/d:
    q' = rho + (1 - rho) Y_q, p' = p + (1 - rho) Y_p.

    The input must be layer-normalised (q = 1). Below beta_c in asymptotic mode
    q' = p' = rho and the reported similarity is 1.
    """
    if abs(state.q - 1.) > UNIT_TOL:
        raise DomainError('self-attention input must be layer-normalised (q = 1), got q = %r' % state.q)
    rho = state.rho
    if rho >= 1. - UNIT_TOL:
        return COLLAPSED
    T = attn.seq_len
    if attn.finite_size:
        yq = y_q_finite_size(attn.beta, rho, T)
    else:
        yq = y_q(attn.beta, rho)
    yp = y_p(attn.beta, rho, T, attn.finite_size)
    # a mean of T unit vectors cannot have negative squared norm
    q_new = max(0., rho + (1. - rho) * yq)
    p_new = min(q_new, max(-q_new, state.p + (1. - rho) * yp))
    return GeometryState(q_new, p_new)


def sa_update_map(rho, attn):
    return sa_update(GeometryState(1., rho), attn).rho


def residual_merge(branch, input, alpha):
    """Branch and skip path are independent at initialisation, so only their squared norms add."""
    if alpha < 0:
        raise DomainError('residual strength must be nonnegative, got %r' % alpha)
    a2 = alpha * alpha
    return GeometryState(branch.q + a2 * input.q, branch.p + a2 * input.p)


def layer_norm_geometry(state):
    if not state.q > 0:
        raise DomainError('cannot layer-normalise a state with q = %r' % state.q)
    return GeometryState(1., state.rho)


def relu_kernel_f(rho):
    """Normalised arc-cosine kernel: E[relu(u1) relu(u2)] / E[relu(u1)^2] at correlation rho."""
    if not math.isfinite(rho) or abs(rho) > 1. + KERNEL_TOL:
        raise DomainError('ReLU kernel argument must lie in [-1, 1], got %r' % (rho,))
    rho = min(1., max(-1., rho))
    return (math.sqrt(1. - rho * rho) + rho * (math.pi - math.acos(rho))) / math.pi


def mlp_update(state, mlp):
    """
    Two-layer MLP recursion. The first linear layer gives
    q1 = sw2 q0 + sb2, p1 = sw2 p0 + sb2; the second applies the activation
    kernel in closed form (ReLU) or by trapezoid quadrature on the normal law (tanh).
    """
    sw2, sb2 = mlp.sigma_w2, mlp.sigma_b2
    q1 = sw2 * state.q + sb2
    p1 = sw2 * state.p + sb2
    if not q1 > 0:
        raise DomainError('MLP pre-activation variance vanishes (q0 = %r, sigma_b2 = %r)' % (state.q, sb2))
    rho1 = min(1., max(-1., p1 / q1))
    if mlp.activation == Activation.RELU:
        q2 = 0.5 * sw2 * q1 + sb2
        p2 = 0.5 * sw2 * q1 * relu_kernel_f(rho1) + sb2
    else:
        q2 = sw2 * gaussian_expectation(lambda u: np.tanh(u)**2, q1, mlp.quad_nodes) + sb2
        if rho1 >= 1. - UNIT_TOL:
            p2 = q2
        else:
            p2 = sw2 * correlated_gaussian_expectation(np.tanh, q1, rho1, mlp.quad_nodes) + sb2
    p2 = min(q2, max(-q2, p2))
    return GeometryState(q2, p2)


def block_update(state, params):
    """
    One full post-norm block: LN, self-attention, weighted skip, LN, MLP, weighted skip, LN.

    With POST_NORM_FINAL the LayerNorm between the attention residual and the MLP is skipped.
    """
    x = layer_norm_geometry(state)
    sa = sa_update(x, params.attn).scaled(params.sigma_v2)
    h = residual_merge(sa, x, params.alpha_sa)
    if h.q == 0.:
        # no skip path and a fully averaged attention output
        return COLLAPSED
    if params.norm_placement == NormPlacement.POST_NORM_BOTH:
        h = layer_norm_geometry(h)
    m = mlp_update(h, params.mlp)
    out = residual_merge(m, h, params.alpha_mlp)
    return layer_norm_geometry(out)


def block_map(rho, params):
    return block_update(GeometryState(1., rho), params).rho


def iterate_depth(rho0, params, layers):
    if int(layers) != layers or layers < 1:
        raise DomainError('layers must be a positive integer, got %r' % (layers,))
    _check_rho(rho0)
    states = [GeometryState(1., rho0)]
    for layer in range(layers):
        states.append(block_update(states[-1], params))
    logger.debug('iterated %d blocks from rho0=%g: rho_L=%g', layers, rho0, states[-1].rho)
    return Trajectory(states)
