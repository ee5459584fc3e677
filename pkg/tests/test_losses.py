import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cycleasr.autograd import Tensor
from cycleasr.config import ConfigError, ExperimentConfig, KernelConfig, Variant
from cycleasr.corpus import collate_paired, collate_speech, collate_text
from cycleasr.decoder import greedy_decode
from cycleasr.losses import (
    combined_objective,
    loss_cyc_dom,
    loss_dom,
    loss_idt,
    loss_pair,
    loss_text,
    masked_mmd,
    median_bandwidth,
    mmd,
)
from cycleasr.model import (
    Architecture,
    FeatureSequence,
    ModelParams,
    ctc_log_prob,
    embed_text,
    encode_speech,
    frontend,
    group_of,
    sequence_log_prob,
)
from cycleasr.vocab import EOS, SOS, UNK

from conftest import TINY, random_batches, rigged_params
from oracles import directional_difference, mmd_naive, objective_from_components, relative_error

FIXED = KernelConfig(bandwidth=1.5)


def grad_groups(params, loss):
    params.zero_grad()
    loss.backward()
    norms = {}
    for name, t in params.items():
        g = group_of(name)
        norms[g] = norms.get(g, 0.0) + float(np.abs(t.grad).sum())
    return norms


def directional_check(params, build, seed):
    """Backward vs central difference along a random direction in parameter space."""
    rng = np.random.default_rng(seed)
    directions = {k: rng.normal(size=t.shape) for k, t in params.items()}
    params.zero_grad()
    build().backward()
    analytic = sum(float((t.grad * directions[k]).sum()) for k, t in params.items())
    numeric = directional_difference(lambda: build().item(),
                                     [t.data for _, t in params.items()],
                                     [directions[k] for k, _ in params.items()])
    return relative_error(analytic, numeric)


class TestMMD:
    def test_two_singletons_closed_form(self):
        got = mmd(np.array([[0.0]]), np.array([[1.0]]), KernelConfig(bandwidth=1.0)).item()
        assert got == pytest.approx(2 - 2 * math.exp(-0.5), abs=1e-12)

    def test_identical_sets_zero(self):
        p = np.random.default_rng(0).normal(size=(7, 3))
        assert abs(mmd(p, p.copy()).item()) < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.just(2)), elements=st.floats(-3, 3)),
           hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.just(2)), elements=st.floats(-3, 3)),
           st.floats(0.1, 5.0))
    def test_biased_nonnegative_symmetric_and_matches_naive(self, p, q, sigma):
        k = KernelConfig(bandwidth=sigma)
        pq, qp = mmd(p, q, k).item(), mmd(q, p, k).item()
        assert pq >= -1e-12
        assert pq == pytest.approx(qp, abs=1e-12)
        assert pq == pytest.approx(mmd_naive(p, q, sigma), abs=1e-12)

    def test_unbiased_matches_naive(self):
        rng = np.random.default_rng(1)
        p, q = rng.normal(size=(5, 2)), rng.normal(size=(4, 2)) + 1
        got = mmd(p, q, KernelConfig(bandwidth=0.7, estimator="unbiased")).item()
        assert got == pytest.approx(mmd_naive(p, q, 0.7, unbiased=True), abs=1e-12)

    def test_median_bandwidth(self):
        pts = np.array([[0.0], [1.0], [3.0]])
        assert median_bandwidth(pts[:2], pts[2:]) == 2.0
        assert median_bandwidth(np.zeros((3, 2))) == 1.0

    def test_masked_rows_independent(self):
        rng = np.random.default_rng(2)
        p, q = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 3, 3))
        pm = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], bool)
        qm = np.array([[1, 1, 0], [1, 0, 0]], bool)
        rows = masked_mmd(Tensor(p), pm, Tensor(q), qm, 1.3).data
        for i in range(2):
            assert rows[i] == pytest.approx(mmd_naive(p[i][pm[i]], q[i][qm[i]], 1.3), abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError, match="non-empty"):
            mmd(np.zeros((0, 2)), np.zeros((3, 2)))
        with pytest.raises(ConfigError):
            KernelConfig(bandwidth=0.0)
        with pytest.raises(ConfigError):
            KernelConfig(bandwidth=-1.0)


class TestPair:
    def test_ctc_weight_endpoints(self, tiny_params):
        paired, _, _ = random_batches(np.random.default_rng(0))
        att, ctc = [], []
        for i in range(len(paired)):
            frames = paired.feats[i][paired.mask[i]]
            y = paired.labels[i, : paired.lengths[i]]
            att.append(sequence_log_prob(tiny_params, encode_speech(tiny_params, FeatureSequence("u", frames)), y).item())
            f_out, _ = frontend(tiny_params, frames[None], np.ones((1, len(frames)), bool))
            ctc.append(ctc_log_prob(tiny_params, f_out[0], y).item())
        assert loss_pair(tiny_params, paired, 0.0).item() == pytest.approx(-np.mean(att), abs=1e-12)
        assert loss_pair(tiny_params, paired, 1.0).item() == pytest.approx(-np.mean(ctc), abs=1e-12)
        mixed = -(0.5 * np.mean(ctc) + 0.5 * np.mean(att))
        assert loss_pair(tiny_params, paired, 0.5).item() == pytest.approx(mixed, abs=1e-12)

    def test_uniform_decoder(self):
        arch = Architecture(feat_dim=2, hidden=3, vocab_size=4, embed_dim=2, att_dim=2)
        params = ModelParams.initialize(arch)
        params["decoder.out.w"].data[:] = 0.0
        params["decoder.out.b"].data[:] = 0.0
        batch = collate_paired(["a", "b"], [np.ones((4, 2)), np.ones((2, 2))], [[3], [3]])
        assert loss_pair(params, batch, 0.0).item() == pytest.approx(2.77259, abs=1e-5)

    def test_rigged_perfect(self):
        params = rigged_params({SOS: 4, 4: 5, 5: EOS})
        batch = collate_paired(["a"], [np.ones((6, 3))], [[4, 5]])
        assert loss_pair(params, batch, 0.0).item() == 0.0

    def test_unalignable_error_names_utterance(self, tiny_params):
        batch = collate_paired(["short"], [np.ones((2, 3))], [[4, 5, 4]])
        with pytest.raises(ValueError, match="short"):
            loss_pair(tiny_params, batch)

    def test_empty_batch(self, tiny_params):
        paired, _, _ = random_batches(np.random.default_rng(0))
        empty = type(paired)([], paired.feats[:0], paired.mask[:0], paired.labels[:0], paired.lengths[:0])
        with pytest.raises(ValueError, match="empty"):
            loss_pair(tiny_params, empty)


class TestText:
    def test_uniform_decoder(self):
        arch = Architecture(feat_dim=2, hidden=3, vocab_size=4, embed_dim=2, att_dim=2)
        params = ModelParams.initialize(arch)
        params["decoder.out.w"].data[:] = 0.0
        params["decoder.out.b"].data[:] = 0.0
        assert loss_text(params, collate_text(["t"], [[3, 3]])).item() == pytest.approx(3 * math.log(4), abs=1e-12)

    def test_rigged_perfect(self):
        params = rigged_params({SOS: 5, 5: 4, 4: EOS})
        assert loss_text(params, collate_text(["t"], [[5, 4]])).item() == 0.0

    def test_gradient_reaches_text_shared_decoder(self, tiny_params):
        _, _, text = random_batches(np.random.default_rng(1))
        norms = grad_groups(tiny_params, loss_text(tiny_params, text))
        assert norms["text"] > 0 and norms["shared"] > 0 and norms["decoder"] > 0
        assert norms["frontend"] == 0 and norms["ctc"] == 0


class TestDom:
    def test_single_frames_reduce_to_two_singletons(self, tiny_params):
        speech = collate_speech(["s"], [np.random.default_rng(0).normal(size=(1, 3))])
        text = collate_text(["t"], [[4]])
        b = encode_speech(tiny_params, FeatureSequence("s", speech.feats[0])).vectors.data
        bt = embed_text(tiny_params, [4]).vectors.data
        got = loss_dom(tiny_params, speech, text, FIXED).item()
        assert got == pytest.approx(mmd_naive(b, bt, 1.5), abs=1e-12)

    def test_identical_embeddings_zero(self, tiny_params):
        params = tiny_params.copy()
        for name, t in params.items():
            if group_of(name) == "shared":
                t.data[:] = 0.0
        _, speech, text = random_batches(np.random.default_rng(2))
        assert abs(loss_dom(params, speech, text).item()) < 1e-12

    def test_pools_all_frames(self, tiny_params):
        _, speech, text = random_batches(np.random.default_rng(3))
        b = [encode_speech(tiny_params, FeatureSequence("s", speech.feats[i][speech.mask[i]])).vectors.data
             for i in range(len(speech))]
        bt = [embed_text(tiny_params, text.labels[i, : text.lengths[i]]).vectors.data for i in range(len(text))]
        expected = mmd_naive(np.concatenate(b), np.concatenate(bt), 1.5)
        assert loss_dom(tiny_params, speech, text, FIXED).item() == pytest.approx(expected, abs=1e-12)

    def test_differentiable(self, tiny_params):
        _, speech, text = random_batches(np.random.default_rng(4))
        norms = grad_groups(tiny_params, loss_dom(tiny_params, speech, text))
        assert norms["shared"] > 0 and norms["frontend"] > 0 and norms["text"] > 0
        assert norms["decoder"] == 0


class TestIdt:
    def test_hand_sum(self):
        arch = Architecture(feat_dim=2, hidden=2, vocab_size=5, embed_dim=2, att_dim=2)
        params = ModelParams.initialize(arch)
        for name, t in params.items():
            if group_of(name) == "shared":
                t.data[:] = 0.0
        params["shared.layer0.proj.b"].data[:] = 1.0
        assert loss_idt(params, Tensor([[0.0, 3.0]])).item() == 3.0
        assert loss_idt(params, Tensor([[1.0, 1.0]])).item() == 0.0

    def test_mean_over_valid_frames(self, tiny_params):
        rng = np.random.default_rng(0)
        b = rng.normal(size=(2, 3, 4))
        mask = np.array([[1, 1, 0], [1, 1, 1]], bool)
        first = loss_idt(tiny_params, Tensor(b[0, :2])).item()
        second = loss_idt(tiny_params, Tensor(b[1])).item()
        got = loss_idt(tiny_params, Tensor(b), mask).item()
        assert got == pytest.approx((2 * first + 3 * second) / 5, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_check(self, tiny_params, seed):
        b = Tensor(np.random.default_rng(seed).normal(size=(1, 3, 4)))
        assert directional_check(tiny_params, lambda: loss_idt(tiny_params, b), seed) < 1e-4


class TestCycle:
    def test_compositional_oracle(self, tiny_params):
        x = np.random.default_rng(0).normal(size=(6, 3))
        b = encode_speech(tiny_params, FeatureSequence("s", x)).vectors
        hyp = greedy_decode(tiny_params, b).labels or (UNK,)
        cyc = embed_text(tiny_params, list(hyp)).vectors
        expected = mmd(b.data, cyc.data).item()
        got = loss_cyc_dom(tiny_params, collate_speech(["s"], [x]))
        assert got.loss.item() == pytest.approx(expected, abs=1e-12)
        assert got.hypotheses == [tuple(hyp)]

    def test_deterministic(self, tiny_params):
        _, speech, _ = random_batches(np.random.default_rng(1))
        assert loss_cyc_dom(tiny_params, speech).loss.item() == loss_cyc_dom(tiny_params, speech).loss.item()

    def test_empty_hypothesis_substituted(self):
        params = rigged_params({SOS: EOS})
        got = loss_cyc_dom(params, collate_speech(["s", "t"], [np.ones((4, 3)), np.ones((2, 3))]))
        assert got.hypotheses == [(UNK,), (UNK,)]
        assert got.empty_substituted == 2

    def test_no_gradient_through_decode(self, tiny_params):
        _, speech, _ = random_batches(np.random.default_rng(2))
        norms = grad_groups(tiny_params, loss_cyc_dom(tiny_params, speech).loss)
        assert norms["decoder"] == 0 and norms["ctc"] == 0
        assert norms["frontend"] > 0 and norms["shared"] > 0 and norms["text"] > 0


def cfg_for(variant, alpha=0.5, beta=0.4):
    return ExperimentConfig(variant=variant, alpha=alpha, beta=beta, kernel=FIXED)


class TestCombined:
    @pytest.mark.parametrize("variant", list(Variant))
    def test_alpha_one_is_pair(self, tiny_params, variant):
        paired, speech, text = random_batches(np.random.default_rng(0))
        out = combined_objective(tiny_params, cfg_for(variant, alpha=1.0), paired, speech, text)
        assert out.total.item() == loss_pair(tiny_params, paired, 0.3).item()
        assert set(out.components) <= {"pair", "ctc"}

    def test_initial_forces_alpha_one(self, tiny_params):
        paired, _, _ = random_batches(np.random.default_rng(0))
        out = combined_objective(tiny_params, cfg_for(Variant.INITIAL, alpha=0.2), paired)
        assert out.total.item() == out.components["pair"].item()

    def test_baseline_beta_zero_is_text(self, tiny_params):
        paired, speech, text = random_batches(np.random.default_rng(1))
        out = combined_objective(tiny_params, cfg_for(Variant.BASELINE, alpha=0.0, beta=0.0), paired, speech, text)
        assert out.total.item() == loss_text(tiny_params, text).item()
        assert set(out.components) == {"text"}

    def test_baseline_beta_one_has_no_text_term(self, tiny_params):
        paired, speech, text = random_batches(np.random.default_rng(1))
        out = combined_objective(tiny_params, cfg_for(Variant.BASELINE, beta=1.0), paired, speech, text)
        assert "text" not in out.components and "dom" in out.components

    def test_cyc_idt_beta_one(self, tiny_params):
        paired, speech, text = random_batches(np.random.default_rng(2))
        out = combined_objective(tiny_params, cfg_for(Variant.CYC_IDT, beta=1.0), paired, speech, text)
        c = out.values()
        assert out.total.item() == pytest.approx(0.5 * c["pair"] + 0.5 * (c["cyc_dom"] + c["idt_speech"]), abs=1e-12)
        assert set(c) == {"pair", "ctc", "cyc_dom", "idt_speech"}

    @pytest.mark.parametrize("variant,expected", [
        (Variant.BASELINE, {"pair", "ctc", "dom", "text"}),
        (Variant.IDT, {"pair", "ctc", "idt_speech", "idt_text"}),
        (Variant.CYC, {"pair", "ctc", "cyc_dom", "text"}),
        (Variant.CYC_IDT, {"pair", "ctc", "cyc_dom", "idt_speech", "idt_text", "text"}),
    ])
    def test_components_present(self, tiny_params, variant, expected):
        paired, speech, text = random_batches(np.random.default_rng(3))
        out = combined_objective(tiny_params, cfg_for(variant), paired, speech, text)
        assert set(out.components) == expected

    def test_speech_batch_skipped_at_beta_zero(self, tiny_params):
        paired, _, text = random_batches(np.random.default_rng(4))
        out = combined_objective(tiny_params, cfg_for(Variant.CYC_IDT, beta=0.0), paired, None, text)
        assert "cyc_dom" not in out.components and "idt_speech" not in out.components

    def test_text_batch_skipped_at_beta_one(self, tiny_params):
        paired, speech, _ = random_batches(np.random.default_rng(4))
        out = combined_objective(tiny_params, cfg_for(Variant.IDT, beta=1.0), paired, speech, None)
        assert set(out.components) == {"pair", "ctc", "idt_speech"}

    def test_missing_batches(self, tiny_params):
        paired, speech, text = random_batches(np.random.default_rng(5))
        with pytest.raises(ValueError, match="text batch"):
            combined_objective(tiny_params, cfg_for(Variant.BASELINE, beta=0.5), paired, speech, None)
        with pytest.raises(ValueError, match="speech batch"):
            combined_objective(tiny_params, cfg_for(Variant.CYC, beta=0.5), paired, None, text)
        with pytest.raises(ValueError, match="paired"):
            combined_objective(tiny_params, cfg_for(Variant.CYC), None, speech, text)

    @pytest.mark.parametrize("seed", range(10))
    def test_reconstructs_from_components(self, tiny_params, seed):
        rng = np.random.default_rng(seed)
        variant = list(Variant)[int(rng.integers(0, 5))]
        alpha, beta = float(rng.uniform()), float(rng.uniform())
        paired, speech, text = random_batches(rng)
        out = combined_objective(tiny_params, cfg_for(variant, alpha, beta), paired, speech, text)
        a = 1.0 if variant is Variant.INITIAL else alpha
        expected = objective_from_components(variant.value, a, beta, out.values())
        assert out.total.item() == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("variant,trained", [
        (Variant.INITIAL, {"frontend", "ctc", "shared", "decoder"}),
        (Variant.BASELINE, {"frontend", "ctc", "shared", "decoder", "text"}),
        (Variant.IDT, {"frontend", "ctc", "shared", "decoder", "text"}),
        (Variant.CYC, {"frontend", "ctc", "shared", "decoder", "text"}),
        (Variant.CYC_IDT, {"frontend", "ctc", "shared", "decoder", "text"}),
    ])
    def test_parameter_groups_receive_gradient(self, tiny_params, variant, trained):
        paired, speech, text = random_batches(np.random.default_rng(6))
        out = combined_objective(tiny_params, cfg_for(variant), paired, speech, text)
        norms = grad_groups(tiny_params, out.total)
        assert {g for g, v in norms.items() if v > 0} == trained

    @pytest.mark.parametrize("variant", list(Variant))
    def test_gradient_check(self, tiny_params, variant):
        paired, speech, text = random_batches(np.random.default_rng(7))
        cfg = cfg_for(variant)
        build = lambda: combined_objective(tiny_params, cfg, paired, speech, text).total
        assert directional_check(tiny_params, build, 7) < 1e-4
