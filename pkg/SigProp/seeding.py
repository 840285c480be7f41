"""
Seed derivation for the Monte Carlo simulator.

Every random stream is seeded from ``derive_seed(base_seed, stream, *indices)``.
The derivation folds each index into a 64-bit state with the SplitMix64
finaliser:

    state = splitmix64(base_seed)
    for i in (stream, *indices):
        state = splitmix64(state ^ (i + GOLDEN_GAMMA))

and drops the lowest bit so the seed fits ``torch.Generator.manual_seed``.
Streams keep weights and inputs independent:

    WEIGHTS    (seed, layer)          depth runs, one generator per block
    SEQUENCES  (sequence,)            depth runs
               (rho, seed)            single-layer grids, shared by every beta
    PHASE      (beta, rho, seed)      single-layer grid weights
    IPR        (beta, seed)           weights first, then the streamed tokens
    PAIRS      (seed, sequence)       pair subsampling in depth runs
               (beta, rho, seed)      pair subsampling in single-layer grids
    POSITIONS  ()                     positional embeddings, shared by every sequence
"""
import torch

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

WEIGHTS = 1
SEQUENCES = 2
PHASE = 3
IPR = 4
PAIRS = 5
POSITIONS = 6


def splitmix64(x):
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(base_seed, *indices):
    state = splitmix64(int(base_seed) & MASK64)
    for i in indices:
        state = splitmix64(state ^ ((int(i) + GOLDEN_GAMMA) & MASK64))
    return state >> 1


def generator(base_seed, *indices):
    g = torch.Generator(device='cpu')
    g.manual_seed(derive_seed(base_seed, *indices))
    return g
