import numpy as np
import pytest
import torch

from cmvfuse.cli import GRADCHECK_EXAMPLE, gradcheck_model
from cmvfuse.config import TrainConfig
from cmvfuse.data import synthetic_artifacts, synthetic_corpus
from cmvfuse.embeddings import EmbeddingSource, KgSource
from cmvfuse.graphs import ParsedExample


@pytest.fixture
def dish():
    """'The small dish was very delicious', aspect 'dish'."""
    return GRADCHECK_EXAMPLE


@pytest.fixture
def tree_example():
    # (S (NP w0 w1) (VP w2))
    return ParsedExample(
        tokens=("w0", "w1", "w2"), aspect_span=(0, 1), label="neutral",
        dep_edges=((0, 1, "amod"),),
        constituents=((0, 2, "NP", 1), (2, 3, "VP", 1), (0, 3, "S", 2)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def corpus():
    return synthetic_corpus(30, 0)


@pytest.fixture(scope="session")
def sources(corpus):
    emb, kg = synthetic_artifacts(corpus, 16, 100)
    return EmbeddingSource(16, emb), KgSource(100, kg)


@pytest.fixture
def tiny_config():
    return TrainConfig(l_a=1, l_d=2, l_c=2, l_s=2, hidden_dim=8, head_count=2, kg_dim=6,
                       epochs=2, batch_size=4)


@pytest.fixture
def gc_setup():
    """Float64 full model (all views, all losses) on the 6-token example, d = 8."""
    return gradcheck_model(TrainConfig(hidden_dim=8, kg_dim=8))


def pytest_configure(config):
    torch.set_num_threads(1)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
