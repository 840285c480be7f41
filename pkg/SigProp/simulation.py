"""
Monte Carlo simulation of random post-norm transformer blocks.

A sequence batch is a (T, d) float64 tensor. All randomness flows through
explicit ``torch.Generator`` objects derived with ``SigProp.seeding``, so a
run is reproducible from its base seed alone.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from pytorch_lightning import Trainer

from .base import Experiment
from .datasets.sequences import SequenceDataset, generate_sequence, sequence_chunks
from .errors import DomainError
from .networks.transformer import (AttentionStats, FeedForward, RandomTransformer, RMSNorm, SelfAttention,
                                   TransformerBlock, attention_stats)
from .parallel import parallel_map, worker_count
from .seeding import IPR, PAIRS, PHASE, SEQUENCES, generator
from .theory import sigma_a_from_beta

logger = logging.getLogger(__name__)

# above this many tokens the pair statistics are estimated from a uniform subsample
PAIR_LIMIT = 2048
MAX_PAIRS = 2**18
PAIR_CHUNK = 16384

__all__ = ['AttentionStats', 'generate_sequence', 'layer_norm_apply', 'attention_forward', 'mlp_forward',
           'block_forward', 'measure_geometry', 'run_depth_experiment', 'run_sa_phase_experiment',
           'run_ipr_experiment', 'score_correlations']


@dataclass(frozen=True)
class GeometryMeasurement:
    q: float
    p: float
    # mean and standard deviation of the pairwise cosine similarity
    rho: float
    rho_std: float
    n_pairs: int


def layer_norm_apply(batch):
    return RMSNorm()(batch)


def attention_forward(batch, beta, g, sigma_v2=1.0):
    T, d = batch.shape
    attn = SelfAttention(d, sigma_a_from_beta(beta, T), sigma_v2)
    attn.reset_parameters(g)
    out, A = attn(batch)
    return out, attention_stats(A)


def mlp_forward(batch, mlp, d, g):
    ff = FeedForward(d, mlp)
    ff.reset_parameters(g)
    return ff(batch)


def block_forward(batch, params, g):
    T, d = batch.shape
    block = TransformerBlock(d, T, params)
    block.reset_parameters(g)
    out, A = block(batch)
    return out, attention_stats(A)


def _pair_dots(batch, i, j):
    dots = []
    for start in range(0, len(i), PAIR_CHUNK):
        ii, jj = i[start:start + PAIR_CHUNK], j[start:start + PAIR_CHUNK]
        dots.append((batch[ii] * batch[jj]).sum(dim=-1))
    return torch.cat(dots)


def measure_geometry(batch, g=None, max_pairs=MAX_PAIRS):
    """
    q, p and the pairwise cosine similarity of a sequence. All T(T-1)/2 pairs are used
    up to PAIR_LIMIT tokens; longer sequences use max_pairs uniformly sampled pairs.
    """
    T, d = batch.shape
    if T < 2:
        raise DomainError('need at least two tokens to measure pair statistics')
    sq = (batch * batch).sum(dim=-1)
    if T <= PAIR_LIMIT:
        i, j = torch.triu_indices(T, T, offset=1)
        dots = (batch @ batch.T)[i, j]
    else:
        if g is None:
            g = generator(0, PAIRS)
        logger.debug('subsampling %d of %d token pairs', max_pairs, T * (T - 1) // 2)
        i = torch.randint(T, (max_pairs,), generator=g)
        j = torch.randint(T - 1, (max_pairs,), generator=g)
        j = j + (j >= i).long()
        dots = _pair_dots(batch, i, j)
    cos = dots / torch.sqrt(sq[i] * sq[j])
    return GeometryMeasurement(q=sq.mean().item() / d, p=dots.mean().item() / d, rho=cos.mean().item(),
                               rho_std=cos.std(unbiased=False).item(), n_pairs=len(cos))


@dataclass(frozen=True)
class EmpiricalTrajectory:
    """
    Per-layer statistics over all (seed, sequence) tasks. Index 0 is the input
    sequence; attention statistics are NaN there.
    """
    rho_mean: np.ndarray
    rho_std: np.ndarray
    ipr: np.ndarray
    cross_overlap: np.ndarray
    entropy: np.ndarray
    n_tasks: int

    def __len__(self):
        return len(self.rho_mean)

    @property
    def layers(self):
        return len(self.rho_mean) - 1


class DepthExperiment(Experiment):
    """
    Pushes every (seed, sequence) task through a freshly initialised stack and
    records the cosine similarity and attention statistics after each block.
    """

    def __init__(self, cfg, layers, **kwargs):
        network = RandomTransformer(cfg.d, cfg.seq_len, cfg.block, layers)
        dataset = SequenceDataset(cfg.d, cfg.seq_len, cfg.rho0, cfg.n_seeds, cfg.n_sequences, cfg.base_seed,
                                  cfg.pos_std)
        super().__init__(network, dataset, base_seed=cfg.base_seed, **kwargs)
        self.cfg = cfg

    def measure(self, seed_idx, seq_idx, x):
        self.network.reset_parameters(self.base_seed, seed_idx)
        pairs = generator(self.base_seed, PAIRS, seed_idx, seq_idx)
        rhos = [measure_geometry(x, pairs).rho]
        stats = [AttentionStats.missing()]
        for block in self.network.blocks:
            x, A = block(x)
            rhos.append(measure_geometry(x, pairs).rho)
            stats.append(attention_stats(A))
        return rhos, stats


def _predict_shard(task):
    cfg, layers, indices, progress = task
    experiment = DepthExperiment(cfg, layers, indices=indices)
    trainer = Trainer(accelerator='cpu', devices=1, logger=False, enable_checkpointing=False,
                      enable_progress_bar=progress, enable_model_summary=False)
    return trainer.predict(experiment)


def run_depth_experiment(cfg, layers, progress=False, threads=1):
    """
    Monte Carlo side of a depth comparison. The (seed, sequence) tasks are split into
    contiguous shards, one Lightning predict run per worker process, and gathered in
    task order; threads=None uses every core.
    """
    if int(layers) != layers or layers < 0:
        raise DomainError('layers must be a nonnegative integer, got %r' % (layers,))
    n_tasks = cfg.n_seeds * cfg.n_sequences
    workers = worker_count(threads, n_tasks)
    logger.info('depth experiment: d=%d T=%d layers=%d, %d seeds x %d sequences on %d processes',
                cfg.d, cfg.seq_len, layers, cfg.n_seeds, cfg.n_sequences, workers)
    if workers == 1:
        outputs = _predict_shard((cfg, int(layers), None, progress))
    else:
        shards = [s.tolist() for s in np.array_split(np.arange(n_tasks), workers)]
        tasks = [(cfg, int(layers), shard, False) for shard in shards]
        outputs = [out for shard in parallel_map(_predict_shard, tasks, workers, 'depth', progress) for out in shard]

    rho = np.array([r for r, _ in outputs])
    stats = [s for _, s in outputs]

    def stat(name):
        return np.array([[getattr(s, name) for s in task] for task in stats]).mean(axis=0)

    return EmpiricalTrajectory(rho_mean=rho.mean(axis=0), rho_std=rho.std(axis=0), ipr=stat('ipr'),
                               cross_overlap=stat('cross_overlap'), entropy=stat('entropy'), n_tasks=len(outputs))


@dataclass(frozen=True)
class PhaseResult:
    """Single-layer self-attention measurements; arrays are indexed [beta, rho]"""
    beta_axis: np.ndarray
    rho_axis: np.ndarray
    sa_rho: np.ndarray
    sa_rho_std: np.ndarray
    ipr: np.ndarray
    entropy: np.ndarray
    cross_overlap: np.ndarray
    d: int
    seq_len: int
    n_seeds: int


def _check_grid(values, name):
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or len(values) == 0:
        raise DomainError('%s grid must be a nonempty list' % name)
    return values


def _sa_phase_cell(task):
    """All beta cells of one (rho, seed) pair; the input sequence is shared by them"""
    d, T, betas, rho, j, s, base_seed, sigma_v2 = task
    x = layer_norm_apply(generate_sequence(rho, T, d, generator(base_seed, SEQUENCES, j, s)))
    out = np.empty((len(betas), 4))
    for i, beta in enumerate(betas):
        y, stats = attention_forward(x, beta, generator(base_seed, PHASE, i, j, s), sigma_v2)
        out[i] = (measure_geometry(y, generator(base_seed, PAIRS, i, j, s)).rho, stats.ipr, stats.entropy,
                  stats.cross_overlap)
    return out


def run_sa_phase_experiment(d, T, beta_grid, rho_grid, n_seeds=1, base_seed=0, sigma_v2=1.0, progress=False,
                            threads=1):
    """One self-attention layer on layer-normalised inputs for every (beta, rho) cell."""
    betas = _check_grid(beta_grid, 'beta')
    rhos = _check_grid(rho_grid, 'rho')
    logger.info('sa-phase experiment: d=%d T=%d, %d x %d cells, %d seeds', d, T, len(betas), len(rhos), n_seeds)
    tasks = [(d, T, betas, rhos[j], j, s, base_seed, sigma_v2) for j in range(len(rhos)) for s in range(n_seeds)]
    cells = parallel_map(_sa_phase_cell, tasks, threads, 'sa-phase', progress)
    # [rho, seed, beta, statistic] -> [beta, rho, seed, statistic]
    grid = np.stack(cells).reshape(len(rhos), n_seeds, len(betas), 4).transpose(2, 0, 1, 3)
    sa, ipr, ent, cross = (grid[..., k] for k in range(4))
    return PhaseResult(beta_axis=betas, rho_axis=rhos, sa_rho=sa.mean(axis=2), sa_rho_std=sa.std(axis=2),
                       ipr=ipr.mean(axis=2), entropy=ent.mean(axis=2), cross_overlap=cross.mean(axis=2),
                       d=d, seq_len=T, n_seeds=n_seeds)


@dataclass(frozen=True)
class IprResult:
    beta_axis: np.ndarray
    ipr_mean: np.ndarray
    ipr_std: np.ndarray
    entropy_mean: np.ndarray
    rho: float
    d: int
    seq_len: int
    n_seeds: int


def _ipr_cell(task):
    d, T, beta, rho, i, s, base_seed, chunk = task
    norm = RMSNorm()
    g = generator(base_seed, IPR, i, s)
    attn = SelfAttention(d, sigma_a_from_beta(beta, T))
    attn.reset_parameters(g)
    u = None
    scores = []
    for keys in sequence_chunks(rho, T, d, g, chunk):
        keys = norm(keys)
        if u is None:
            u = attn.wk.T @ (attn.wq @ keys[0]) / math.sqrt(d)
        scores.append(keys @ u)
    a = torch.cat(scores)
    e = torch.exp(a - a.max())
    A = e / e.sum()
    return (A * A).sum().item(), torch.special.entr(A).sum().item()


def run_ipr_experiment(d, T, beta_grid, rho=0.0, n_seeds=10, base_seed=0, chunk=8192, progress=False, threads=1):
    """
    Inverse participation ratio of one attention row over very long sequences.

    Only the first token is scored as a query, so the keys can be streamed in chunks
    and memory stays O(chunk * d + T); averaging over seeds replaces averaging over rows.
    """
    betas = _check_grid(beta_grid, 'beta')
    if int(T) != T or T < 2:
        raise DomainError('sequence length must be an integer >= 2, got %r' % (T,))
    logger.info('ipr experiment: d=%d T=%d, %d betas, %d seeds', d, T, len(betas), n_seeds)
    tasks = [(d, T, betas[i], rho, i, s, base_seed, chunk) for i in range(len(betas)) for s in range(n_seeds)]
    cells = np.array(parallel_map(_ipr_cell, tasks, threads, 'ipr', progress)).reshape(len(betas), n_seeds, 2)
    ipr, ent = cells[..., 0], cells[..., 1]
    return IprResult(beta_axis=betas, ipr_mean=ipr.mean(axis=1), ipr_std=ipr.std(axis=1),
                     entropy_mean=ent.mean(axis=1), rho=rho, d=d, seq_len=T, n_seeds=n_seeds)


@dataclass(frozen=True)
class ScoreCorrelations:
    """
    Score second moments over weight draws, in units of sigma_a^2, with standard errors.
    For layer-normalised tokens of similarity rho the expected tiers are 1, rho and rho^2.
    """
    same_pair: float
    shared_query: float
    disjoint: float
    same_pair_se: float
    shared_query_se: float
    disjoint_se: float
    n_draws: int


def score_correlations(batch, beta, n_draws, g):
    """Moments of a_01, a_02 and a_34 over independent query/key draws"""
    T, d = batch.shape
    if T < 5:
        raise DomainError('score correlations need at least 5 tokens')
    sigma_a = sigma_a_from_beta(beta, T)
    if sigma_a == 0:
        raise DomainError('score correlations are undefined at beta = 0')
    attn = SelfAttention(d, sigma_a)
    draws = []
    for _ in range(n_draws):
        attn.reset_parameters(g)
        qx = batch[[0, 3]] @ attn.wq.T
        kx = batch[[1, 2, 4]] @ attn.wk.T
        a = (qx[[0, 0, 1]] * kx).sum(dim=-1) / math.sqrt(d)
        draws.append(a)
    a01, a02, a34 = torch.stack(draws).T
    products = torch.stack([a01 * a01, a01 * a02, a01 * a34]) / sigma_a**2
    mean = products.mean(dim=1)
    se = products.std(dim=1) / math.sqrt(n_draws)
    return ScoreCorrelations(mean[0].item(), mean[1].item(), mean[2].item(),
                             se[0].item(), se[1].item(), se[2].item(), n_draws)
