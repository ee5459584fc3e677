from __future__ import annotations

import numpy as np
import pytest

from cycleasr.config import ExperimentConfig
from cycleasr.corpus import Corpus, CorpusConfig, collate_paired, collate_speech, collate_text, generate_corpus
from cycleasr.model import Architecture, ModelParams
from cycleasr.trainer import train_initial

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


TINY = Architecture(feat_dim=3, hidden=4, shared_layers=1, decoder_layers=1, vocab_size=6, embed_dim=3, att_dim=3)


@pytest.fixture
def tiny_arch() -> Architecture:
    return TINY


@pytest.fixture
def tiny_params() -> ModelParams:
    return ModelParams.initialize(TINY, seed=0)


def random_batches(rng: np.random.Generator, arch: Architecture = TINY, n: int = 3):
    """Paired, speech and text batches of random content for a tiny model.

    Labels avoid adjacent repeats so every CTC target is alignable.
    """
    def labels(k):
        out = [int(rng.integers(4, arch.vocab_size))]
        while len(out) < k:
            c = int(rng.integers(4, arch.vocab_size))
            if c != out[-1]:
                out.append(c)
        return out

    def feats(frames):
        return rng.normal(size=(frames, arch.feat_dim))

    ys = [labels(int(rng.integers(1, 4))) for _ in range(n)]
    paired = collate_paired([f"p{i}" for i in range(n)], [feats(2 * len(y) + int(rng.integers(0, 3))) for y in ys], ys)
    speech = collate_speech([f"s{i}" for i in range(n)], [feats(int(rng.integers(2, 7))) for _ in range(n)])
    text = collate_text([f"t{i}" for i in range(n)], [labels(int(rng.integers(1, 5))) for _ in range(n)])
    return paired, speech, text


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory):
    cfg = CorpusConfig(utterances=60, dev_utterances=10, eval_utterances=10, seed=3)
    path = tmp_path_factory.mktemp("corpus")
    generate_corpus(cfg, path)
    return path


@pytest.fixture(scope="session")
def small_corpus(small_corpus_dir) -> Corpus:
    return Corpus.load(small_corpus_dir)


RIG = Architecture(feat_dim=3, hidden=6, shared_layers=1, decoder_layers=1, vocab_size=6, embed_dim=6, att_dim=3)


def rigged_params(transitions: dict[int, int], margin: float = 1000.0) -> ModelParams:
    """Decoder whose next label is a fixed function of the previous label.

    The update gate is saturated shut, so the hidden state is
    tanh(3 * onehot(prev)) and carries nothing else; the output layer maps
    it to ``transitions[prev]`` with the given logit margin.
    """
    params = ModelParams.initialize(RIG, seed=0)
    V, H = RIG.vocab_size, RIG.hidden
    p = {k: t.data for k, t in params.items()}
    p["decoder.embed"][:] = 3.0 * np.eye(V)
    p["decoder.layer0.wx"][:] = 0.0
    p["decoder.layer0.wx"][:V, 2 * H : 2 * H + V] = np.eye(V)
    p["decoder.layer0.wh"][:] = 0.0
    p["decoder.layer0.bx"][:] = 0.0
    p["decoder.layer0.bx"][H : 2 * H] = -50.0
    p["decoder.layer0.bh"][:] = 0.0
    p["decoder.out.w"][:] = 0.0
    p["decoder.out.b"][:] = 0.0
    for prev, nxt in transitions.items():
        p["decoder.out.w"][prev, nxt] = margin
    return params


FAST = ExperimentConfig(hidden=8, att_dim=8, embed_dim=4, lm_hidden=8, epochs_initial=3, epochs_retrain=1,
                        epochs_lm=3, batch_size=4, beam_width=2)


@pytest.fixture(scope="session")
def initial_run(tmp_path_factory, small_corpus):
    """Initial model trained on the small corpus, with its checkpoint on disk."""
    out = tmp_path_factory.mktemp("initial")
    return train_initial(FAST, small_corpus, out)
