"""
Parameter records shared by the theory, the regime analysis and the simulator.

All records are frozen dataclasses; invalid values raise ConfigError naming the field.
"""
import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import ConfigError

# trapezoid points per dimension for the tanh expectations
DEFAULT_QUAD_NODES = 401
MAX_QUAD_NODES = 2001


class Activation(str, enum.Enum):
    RELU = 'relu'
    TANH = 'tanh'


class NormPlacement(str, enum.Enum):
    # LayerNorm after the attention residual and after the MLP residual
    POST_NORM_BOTH = 'post_norm_both'
    # LayerNorm only at the block exit; the MLP sees the un-normalised residual sum
    POST_NORM_FINAL = 'post_norm_final'


def _require(condition, key, message):
    if not condition:
        raise ConfigError(message, key=key)


def _enum(cls, value, key):
    try:
        return cls(value)
    except ValueError:
        raise ConfigError('must be one of %s' % ', '.join(m.value for m in cls), key=key)


def _finite(value):
    return isinstance(value, (int, float)) and math.isfinite(value)


@dataclass(frozen=True)
class AttentionParams:
    beta: float
    seq_len: int
    finite_size: bool = False

    def __post_init__(self):
        _require(_finite(self.beta) and self.beta >= 0, 'beta', 'must be a finite nonnegative number')
        _require(isinstance(self.seq_len, int) and self.seq_len >= 2, 'seq_len', 'must be an integer >= 2')

    @property
    def sigma_a(self):
        return self.beta * math.sqrt(math.log(self.seq_len))


@dataclass(frozen=True)
class MlpParams:
    sigma_w2: float
    sigma_b2: float = 0.0
    activation: Activation = Activation.RELU
    quad_nodes: int = DEFAULT_QUAD_NODES

    def __post_init__(self):
        _require(_finite(self.sigma_w2) and self.sigma_w2 > 0, 'sigma_w2', 'must be positive')
        _require(_finite(self.sigma_b2) and self.sigma_b2 >= 0, 'sigma_b2', 'must be nonnegative')
        _require(isinstance(self.quad_nodes, int) and 8 <= self.quad_nodes <= MAX_QUAD_NODES, 'quad_nodes',
                 'must be an integer in [8, %d]' % MAX_QUAD_NODES)
        object.__setattr__(self, 'activation', _enum(Activation, self.activation, 'activation'))


@dataclass(frozen=True)
class BlockParams:
    attn: AttentionParams
    mlp: MlpParams
    alpha_sa: float = 1.0
    alpha_mlp: float = 1.0
    sigma_v2: float = 1.0
    norm_placement: NormPlacement = NormPlacement.POST_NORM_BOTH

    def __post_init__(self):
        _require(_finite(self.alpha_sa) and self.alpha_sa >= 0, 'alpha_sa', 'must be nonnegative')
        _require(_finite(self.alpha_mlp) and self.alpha_mlp >= 0, 'alpha_mlp', 'must be nonnegative')
        _require(_finite(self.sigma_v2) and self.sigma_v2 > 0, 'sigma_v2', 'must be positive')
        object.__setattr__(self, 'norm_placement', _enum(NormPlacement, self.norm_placement, 'norm_placement'))

    def with_alpha(self, alpha_sa):
        return replace(self, alpha_sa=alpha_sa)

    def with_beta(self, beta):
        return replace(self, attn=replace(self.attn, beta=beta))


@dataclass(frozen=True)
class ClassifierConfig:
    layers: int = 60
    collapse_threshold: float = 0.99
    rho0: float = 0.04
    # similarity fed to the first-layer entropy-collapse test; None means rho0
    entropy_rho: Optional[float] = None

    def __post_init__(self):
        _require(isinstance(self.layers, int) and self.layers >= 1, 'layers', 'must be an integer >= 1')
        _require(_finite(self.collapse_threshold) and 0 < self.collapse_threshold < 1,
                 'collapse_threshold', 'must lie strictly between 0 and 1')
        _require(_finite(self.rho0) and -1 <= self.rho0 < 1, 'rho0', 'must lie in [-1, 1)')
        if self.entropy_rho is not None:
            _require(_finite(self.entropy_rho) and -1 <= self.entropy_rho < 1, 'entropy_rho', 'must lie in [-1, 1)')

    @property
    def entropy_similarity(self):
        return self.rho0 if self.entropy_rho is None else self.entropy_rho


@dataclass(frozen=True)
class SimConfig:
    d: int
    seq_len: int
    block: BlockParams
    n_seeds: int = 1
    n_sequences: int = 1
    base_seed: int = 0
    rho0: float = 0.0
    # standard deviation of random absolute positional embeddings added to every sequence
    pos_std: float = 0.0

    def __post_init__(self):
        _require(isinstance(self.d, int) and self.d >= 2, 'd', 'must be an integer >= 2')
        _require(isinstance(self.seq_len, int) and self.seq_len >= 2, 'seq_len', 'must be an integer >= 2')
        _require(isinstance(self.n_seeds, int) and self.n_seeds >= 1, 'n_seeds', 'must be an integer >= 1')
        _require(isinstance(self.n_sequences, int) and self.n_sequences >= 1, 'n_sequences', 'must be an integer >= 1')
        _require(isinstance(self.base_seed, int) and 0 <= self.base_seed < 2**64, 'base_seed',
                 'must be an unsigned 64-bit integer')
        _require(_finite(self.rho0) and 0 <= self.rho0 < 1, 'rho0', 'must lie in [0, 1)')
        _require(_finite(self.pos_std) and self.pos_std >= 0, 'pos_std', 'must be nonnegative')
        _require(self.block.attn.seq_len == self.seq_len, 'seq_len',
                 'must match the attention sequence length (%d)' % self.block.attn.seq_len)

    @property
    def input_similarity(self):
        """Expected cosine similarity of the inputs once positions are added"""
        return self.rho0 / (1. + self.pos_std**2)
