import numpy as np
import pytest

from llmpsych import load_questionnaire


@pytest.fixture(scope="session")
def bfi2():
    return load_questionnaire("bfi2")


@pytest.fixture(scope="session")
def ipip():
    return load_questionnaire("ipip-bffm")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
