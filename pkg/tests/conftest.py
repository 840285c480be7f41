import os

import pytest

from SigProp.params import Activation, AttentionParams, BlockParams, ClassifierConfig, MlpParams

EXAMPLES = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'SigProp', 'examples')


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run full-scale Monte Carlo runs')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: full-scale Monte Carlo run, needs --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def example_path():
    """Path of a bundled example configuration"""
    return lambda name: os.path.join(EXAMPLES, name)


@pytest.fixture
def bert_block():
    """60-layer BERT-like block: beta ~ 0.02, ReLU MLP with sigma_w2 = 0.2, sigma_b2 = 0.0004"""
    return BlockParams(attn=AttentionParams(beta=0.02, seq_len=512),
                       mlp=MlpParams(sigma_w2=0.2, sigma_b2=0.0004),
                       alpha_sa=1.0, alpha_mlp=1.0, sigma_v2=0.2)


@pytest.fixture
def bert_classifier():
    return ClassifierConfig(layers=60, collapse_threshold=0.99, rho0=0.04, entropy_rho=0.0)


@pytest.fixture
def tanh_block():
    """sigma_w = 2.5, sigma_b2 = 0.1, alpha_SA = 6, alpha_MLP = 1"""
    return BlockParams(attn=AttentionParams(beta=0.5, seq_len=512),
                       mlp=MlpParams(sigma_w2=6.25, sigma_b2=0.1, activation=Activation.TANH),
                       alpha_sa=6.0, alpha_mlp=1.0)
