import pytest
import torch

from misca.corpus import Vocabularies, build_hierarchy, make_batches
from misca.model import Dims, build_model
from misca.synthetic import tiny_corpus

TINY_DIMS = Dims(word_dim=3, word_hidden=2, sa_dim=3, char_dim=2, char_hidden=2, task_hidden=2, d_a=3, d_p=2, d_s=3, d=3)
SMALL_DIMS = Dims(word_dim=8, word_hidden=6, sa_dim=8, char_dim=4, char_hidden=3, task_hidden=5, d_a=6, d_p=3, d_s=5, d=4)


def toy_samples():
    return tiny_corpus()


@pytest.fixture
def toy():
    samples = toy_samples()
    h = build_hierarchy(samples, 2)
    v = Vocabularies.build(samples)
    return samples, h, v


@pytest.fixture
def toy_model(toy):
    samples, h, v = toy
    return build_model(h, v, SMALL_DIMS, "full", seed=3)


@pytest.fixture
def toy_batch(toy):
    samples, h, v = toy
    return make_batches(samples, v, h, batch_size=8)[0]


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(1234)


def pytest_terminal_summary(terminalreporter):
    from oracles import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
