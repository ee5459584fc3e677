import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cycleasr.metrics import (
    align,
    beta_type,
    export_embeddings,
    format_table,
    make_report,
    principal_projection,
    score_corpus,
    tokenize,
    write_report_csv,
)
from cycleasr.model import ModelParams
from cycleasr.trainer import architecture_for
from cycleasr.config import ExperimentConfig

from oracles import best_alignment_counts, levenshtein

short = st.text(alphabet="abc", max_size=7)


def check_identities(ref, hyp, a):
    assert a.hits + a.substitutions + a.deletions == len(ref)
    assert a.hits + a.substitutions + a.insertions == len(hyp)
    assert [r for r, _ in a.pairs if r is not None] == list(ref)
    assert [h for _, h in a.pairs if h is not None] == list(hyp)


class TestAlign:
    def test_identical(self):
        a = align("abc", "abc")
        assert (a.substitutions, a.deletions, a.insertions, a.hits) == (0, 0, 0, 3)

    def test_all_deleted(self):
        a = align("abc", "")
        assert (a.deletions, a.errors) == (3, 3)

    def test_one_substitution(self):
        a = align("abc", "axc")
        assert (a.substitutions, a.deletions, a.insertions) == (1, 0, 0)
        assert a.error_rate == pytest.approx(1 / 3)
        assert a.pairs == (("a", "a"), ("b", "x"), ("c", "c"))

    def test_both_empty(self):
        a = align("", "")
        assert a.errors == 0 and a.error_rate == 0.0 and a.pairs == ()

    def test_hits_preferred_over_substitutions(self):
        # "ab" -> "ba" costs 2 either as two substitutions or one deletion plus one insertion
        a = align("ab", "ba")
        assert a.hits == 1 and a.substitutions == 0 and (a.deletions, a.insertions) == (1, 1)

    @settings(max_examples=200, deadline=None)
    @given(short, short)
    def test_matches_independent_oracle(self, ref, hyp):
        a = align(ref, hyp)
        check_identities(ref, hyp, a)
        assert a.errors == levenshtein(ref, hyp)
        assert (a.substitutions, a.deletions, a.insertions, a.hits) == best_alignment_counts(ref, hyp)

    @settings(max_examples=100, deadline=None)
    @given(short, short)
    def test_swap_symmetry(self, ref, hyp):
        a, b = align(ref, hyp), align(hyp, ref)
        assert a.errors == b.errors and a.substitutions == b.substitutions
        assert (a.deletions, a.insertions) == (b.insertions, b.deletions)

    @settings(max_examples=100, deadline=None)
    @given(short, short, short)
    def test_triangle_inequality(self, x, y, z):
        assert align(x, z).errors <= align(x, y).errors + align(y, z).errors


class TestScoreCorpus:
    refs = {"u1": "abc", "u2": "ab ca", "u3": "b"}

    def test_all_correct(self):
        s = make_report(self.refs, dict(self.refs), "m")
        assert s.cer == 0.0 and s.wer == 0.0

    def test_single_utterance_matches_align(self):
        s = score_corpus({"u": "abc"}, {"u": "axcd"})
        a = align("abc", "axcd")
        assert s.rate == a.error_rate and s.total.errors == a.errors

    def test_hand_fixture(self):
        hyps = {"u1": "abd", "u2": "ab a", "u3": "bb"}
        # u1: 1 sub / 3; u2: 1 del / 5; u3: 1 ins / 1  -> 3 / 9 chars
        s = score_corpus(self.refs, hyps, "char")
        assert (s.total.substitutions, s.total.deletions, s.total.insertions) == (1, 1, 1)
        assert s.rate == pytest.approx(3 / 9)
        # words: u1 1 sub / 1; u2 "ab a" vs "ab ca": 1 sub / 2; u3 1 sub / 1 -> 3 / 4
        assert score_corpus(self.refs, hyps, "word").rate == pytest.approx(3 / 4)

    def test_not_mean_of_rates(self):
        s = score_corpus({"a": "a", "b": "bbbb"}, {"a": "", "b": "bbbb"})
        assert s.rate == pytest.approx(1 / 5)

    def test_missing_hypothesis_lists_ids(self):
        with pytest.raises(KeyError, match="u2, u3"):
            score_corpus(self.refs, {"u1": "abc"})

    def test_unknown_hypothesis(self):
        with pytest.raises(KeyError, match="zz"):
            score_corpus({"u1": "a"}, {"u1": "a", "zz": "b"})

    def test_tokenize(self):
        assert tokenize("ab  c", "word") == ["ab", "c"]
        assert tokenize("ab c", "char") == ["a", "b", " ", "c"]
        with pytest.raises(ValueError):
            tokenize("x", "phone")


class TestReports:
    def test_type_tags(self):
        assert [beta_type(b) for b in (None, 0.0, 1.0, 0.4)] == ["-", "Text", "Speech", "Both"]

    def test_table_and_csv(self, tmp_path):
        refs = {"u": "ab"}
        reports = [make_report(refs, {"u": "ab"}, "Initial"), make_report(refs, {"u": "a"}, "Retrain-cyc", 0.4, True)]
        table = format_table(reports).splitlines()
        assert table[0].split() == ["Model", "Type", "LM", "CER(%)", "WER(%)"]
        assert table[3].split() == ["Retrain-cyc", "Both", "Y", "50.00", "100.00"]
        write_report_csv(tmp_path / "r.csv", reports)
        rows = list(csv.DictReader(open(tmp_path / "r.csv")))
        assert rows[1]["char_del"] == "1" and rows[1]["cer"] == "50.00"


class TestEmbeddings:
    def test_export(self, small_corpus, tmp_path):
        arch = architecture_for(ExperimentConfig(hidden=4, att_dim=4, embed_dim=3), small_corpus)
        params = ModelParams.initialize(arch, seed=0)
        n = export_embeddings(params, small_corpus, "dev", tmp_path / "e.csv")
        rows = list(csv.DictReader(open(tmp_path / "e.csv")))
        assert len(rows) == n
        records = small_corpus.manifest.split("dev")
        speech = sum(-(-len(small_corpus.features(r)) // 2) for r in records)
        text = sum(len(r.transcript) for r in records)
        assert sum(r["source"] == "speech" for r in rows) == speech
        assert sum(r["source"] == "text" for r in rows) == text
        assert list(rows[0])[-2:] == ["proj0", "proj1"]
        export_embeddings(params, small_corpus, "dev", tmp_path / "f.csv")
        assert (tmp_path / "e.csv").read_bytes() == (tmp_path / "f.csv").read_bytes()

    def test_projection_deterministic_and_centred(self):
        rows = np.random.default_rng(0).normal(size=(20, 5))
        p = principal_projection(rows)
        np.testing.assert_array_equal(p, principal_projection(rows.copy()))
        np.testing.assert_allclose(p.mean(axis=0), 0.0, atol=1e-12)
        assert p[:, 0].var() >= p[:, 1].var()
