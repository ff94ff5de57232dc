import numpy as np
import pytest

from topicfuse.corpus import parse_corpus
from topicfuse.harness.config import RunConfig
from topicfuse.synth import SynthSpec, generate_synthetic

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion(request):
    """Call with (number, title, passed, detail) to add a summary line."""
    def record(number, title, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        request.config.stash[ACCEPTANCE_LINES].append(
            f"criterion {number}: {status}  {title}  {detail}".rstrip())
    return record


def small_config(**over) -> RunConfig:
    cfg = RunConfig(total_steps=over.pop("total_steps", 30), warmup_steps=5, batch_size=8)
    cfg.model.num_layers, cfg.model.hidden_dim, cfg.model.num_heads = 2, 16, 2
    cfg.model.ffn_dim, cfg.model.entity_embed_dim = 32, 16
    cfg.finetune.epochs = over.pop("epochs", 1)
    for k, v in over.items():
        setattr(cfg, k, v)
    return cfg


@pytest.fixture(scope="session")
def small_world(tmp_path_factory):
    """A 60-entity world written to disk, with parsed segments and vocab."""
    out = tmp_path_factory.mktemp("world")
    corpus = generate_synthetic(SynthSpec(n_entities=60, pages=12, sentences_per_page=10, seed=0))
    corpus.write(out)
    segs, vocab = parse_corpus(corpus.corpus_lines())
    return out, corpus, segs, vocab


@pytest.fixture
def rng():
    return np.random.default_rng(0)
