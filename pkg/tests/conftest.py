import os

import numpy as np
import pytest

from pgprofiler import envs, policies

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture
def chain():
    return envs.ChainMdp()


@pytest.fixture
def chain_family():
    return policies.softmax_family(policies.one_hot_features(3), 2)


@pytest.fixture
def uniform_chain_policy(chain_family):
    return policies.init_params(chain_family)


def right_walker(chain_family):
    """Softmax parameters so extreme the chain policy is exactly
    'always right' in float64 (the logit gap underflows the competitor)."""
    theta = np.zeros(chain_family.param_count)
    theta[chain_family.feature_map.output_dim:] = 60.0
    return policies.PolicyParams(theta, chain_family)
