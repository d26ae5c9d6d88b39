import numpy as np
import pytest

from saam import autodiff as ad
from saam.heads import AttributionResult, PredictionSet
from saam.snippets import Snippet, explain_discrepancy, extract_snippets, snippet_record
from saam.text import ReviewDocument

ASPECTS = ["Value", "Room", "Location"]


def make_doc(n):
    return ReviewDocument("doc1", [[2]] * n, [f"sentence {i}" for i in range(n)],
                          3.0, [3.0, 3.0, 3.0])


def make_attribution(weights, scores):
    weights = np.asarray(weights, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    return AttributionResult(weights, scores, weights * scores[:, None], "R")


def regression_preds(overall, aspects):
    return PredictionSet("regression", ad.constant(float(overall)),
                         [ad.constant(float(a)) for a in aspects])


class TestExtractSnippets:
    def test_single_candidate_wins_regardless_of_score(self):
        att = make_attribution([[0.9, 0.05, 0.05], [0.1, 0.8, 0.1]], [5.0, -5.0])
        got = extract_snippets(make_doc(2), att, ASPECTS, "Value", tau=0.5)
        assert [s.sentence_index for s in got] == [0]

    def test_tau_zero_pure_score_sort(self):
        att = make_attribution([[0.2, 0.4, 0.4]] * 3, [0.5, -1.0, 2.0])
        got = extract_snippets(make_doc(3), att, ASPECTS, "Value", tau=0.0)
        assert [s.sentence_index for s in got] == [1, 0, 2]

    def test_filter_then_sort_oracle(self):
        # weights {0.8, 0.9, 0.1}, tau 0.3: sentence 2 filtered; lowest is -2.9
        att = make_attribution([[0.8, 0.1, 0.1], [0.9, 0.05, 0.05], [0.1, 0.5, 0.4]],
                               [-2.9, 1.3, 0.4])
        got = extract_snippets(make_doc(3), att, ASPECTS, "Value", polarity="lowest", tau=0.3)
        assert got[0].sentence_index == 0
        assert got[0].score == pytest.approx(-2.9)
        assert all(s.weight >= 0.3 for s in got)

    def test_highest_polarity(self):
        att = make_attribution([[0.6, 0.2, 0.2]] * 3, [1.0, 3.0, 2.0])
        got = extract_snippets(make_doc(3), att, ASPECTS, "Value", polarity="highest", top_k=1)
        assert got[0].sentence_index == 1

    def test_nothing_clears_tau(self):
        att = make_attribution([[0.1, 0.45, 0.45]] * 2, [1.0, 2.0])
        assert extract_snippets(make_doc(2), att, ASPECTS, "Value", tau=0.9) == []

    def test_ties_break_by_sentence_index(self):
        att = make_attribution([[0.5, 0.25, 0.25]] * 3, [2.0, 2.0, 2.0])
        got = extract_snippets(make_doc(3), att, ASPECTS, "Value", tau=0.0)
        assert [s.sentence_index for s in got] == [0, 1, 2]

    def test_unknown_aspect(self):
        att = make_attribution([[1.0, 0.0, 0.0]], [1.0])
        with pytest.raises(KeyError, match="Pool"):
            extract_snippets(make_doc(1), att, ASPECTS, "Pool")

    def test_deterministic_rerun(self):
        att = make_attribution([[0.5, 0.3, 0.2], [0.4, 0.3, 0.3]], [1.5, -0.5])
        a = extract_snippets(make_doc(2), att, ASPECTS, "Value")
        b = extract_snippets(make_doc(2), att, ASPECTS, "Value")
        assert a == b

    def test_render_bracket_format(self):
        s = Snippet("d", 0, "the beach was fabulous", "Location", 0.9, 5.99, "highest")
        assert s.render() == "the beach was fabulous [Location, 5.990]"
        rec = snippet_record(s)
        assert rec["score"] == 5.99
        assert rec["weight"] == 0.9


class TestExplainDiscrepancy:
    def test_no_deviation_empty(self):
        att = make_attribution([[0.5, 0.3, 0.2]], [3.0])
        preds = regression_preds(3.0, [3.0, 3.2, 2.8])
        assert explain_discrepancy(make_doc(1), preds, att, ASPECTS) == []

    def test_low_aspect_gets_lowest_snippet(self):
        att = make_attribution([[0.9, 0.05, 0.05], [0.8, 0.1, 0.1]], [1.5, 4.0])
        preds = regression_preds(4.5, [2.0, 4.5, 4.5])
        got = explain_discrepancy(make_doc(2), preds, att, ASPECTS, margin=1.0)
        assert len(got) == 1
        assert got[0].aspect == "Value"
        assert got[0].polarity == "lowest"
        assert got[0].sentence_index == 0

    def test_two_deviating_aspects_in_order(self):
        att = make_attribution([[0.9, 0.05, 0.05], [0.05, 0.05, 0.9]], [1.0, 5.0])
        preds = regression_preds(3.0, [1.0, 3.0, 5.0])
        got = explain_discrepancy(make_doc(2), preds, att, ASPECTS, margin=1.0)
        assert [s.aspect for s in got] == ["Value", "Location"]
        assert [s.polarity for s in got] == ["lowest", "highest"]
