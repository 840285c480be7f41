import math

import torch
from torch.utils import data

from ..errors import DomainError
from ..seeding import POSITIONS, SEQUENCES, generator

DTYPE = torch.float64


def generate_sequence(rho_target, T, d, g):
    """
    T tokens X_t = sqrt(rho) g0 + sqrt(1 - rho) g_t with g0, g_t standard normal d-vectors,
    so that E[X_t . X_s / d] = rho for t != s and E[|X_t|^2 / d] = 1.
    """
    if not 0 <= rho_target < 1:
        raise DomainError('rho_target must lie in [0, 1), got %r' % (rho_target,))
    g0 = torch.randn(d, generator=g, dtype=DTYPE)
    gt = torch.randn(T, d, generator=g, dtype=DTYPE)
    return math.sqrt(rho_target) * g0 + math.sqrt(1. - rho_target) * gt


def positional_embeddings(T, d, g, std=1.0):
    """Random absolute positions: one N(0, std^2) d-vector per position"""
    return std * torch.randn(T, d, generator=g, dtype=DTYPE)


def sequence_chunks(rho_target, T, d, g, chunk=8192):
    """Same construction as generate_sequence, produced chunk by chunk for very long sequences"""
    g0 = torch.randn(d, generator=g, dtype=DTYPE)
    shared = math.sqrt(rho_target) * g0
    scale = math.sqrt(1. - rho_target)
    for start in range(0, T, chunk):
        n = min(chunk, T - start)
        yield shared + scale * torch.randn(n, d, generator=g, dtype=DTYPE)


class SequenceDataset(data.Dataset):
    'One item per (seed, sequence) task of a Monte Carlo run'

    def __init__(self, d, seq_len, rho0=0.0, n_seeds=1, n_sequences=1, base_seed=0, pos_std=0.0):
        self.d = d
        self.seq_len = seq_len
        self.rho0 = rho0
        self.n_seeds = n_seeds
        self.n_sequences = n_sequences
        self.base_seed = base_seed
        self.positions = None
        if pos_std > 0:
            self.positions = positional_embeddings(seq_len, d, generator(base_seed, POSITIONS), pos_std)

    def __len__(self):
        return self.n_seeds * self.n_sequences

    def __getitem__(self, index):
        """Returns (seed index, sequence index, T x d embeddings); the sequence depends only on its index"""
        if not 0 <= index < len(self):
            raise IndexError(index)
        seed_idx, seq_idx = divmod(index, self.n_sequences)
        x = generate_sequence(self.rho0, self.seq_len, self.d, generator(self.base_seed, SEQUENCES, seq_idx))
        if self.positions is not None:
            x = x + self.positions
        return seed_idx, seq_idx, x
