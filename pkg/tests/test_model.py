import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kcoref import model as m
from kcoref.autodiff import Tensor
from kcoref.corpus import SpanRef
from kcoref.model import (CandidateSet, EncoderParams, FeedForward,
                          ModelConfig, OrderingError, ScoringParams,
                          antecedent_distribution, antecedent_window,
                          attend_span, build_span_representation,
                          build_span_representations, encode_tokens,
                          mention_score, pair_score, prune_mentions)

from oracles import finite_difference, relative_error, softmax_by_hand
from test_corpus import make_doc


def encoder(embeddings, radius=0, attention=None, width_emb=None,
            vocab=None, mixer=None, bias=None):
    embeddings = np.asarray(embeddings, dtype=np.float64)
    d = embeddings.shape[1]
    window = 2 * radius + 1
    if mixer is None:
        mixer = np.zeros((window * d, d))
        mixer[radius * d:(radius + 1) * d] = np.eye(d)  # identity on center
    if vocab is None:
        vocab = {m.UNK_TOKEN: 0}
        vocab.update({f"t{i}": i for i in range(1, embeddings.shape[0])})
    return EncoderParams(
        embeddings=Tensor(embeddings),
        mixer_w=Tensor(mixer),
        mixer_b=Tensor(bias if bias is not None else np.zeros(d)),
        attention_w=Tensor(attention if attention is not None else np.zeros(d)),
        width_embeddings=Tensor(width_emb if width_emb is not None
                                else np.zeros((6, 2))),
        vocab=vocab)


def linear_scoring(mention_w, antecedent_w):
    return ScoringParams(
        mention=FeedForward(w1=Tensor(np.asarray(mention_w, dtype=float)),
                            b2=Tensor(0.0)),
        antecedent=FeedForward(w1=Tensor(np.asarray(antecedent_w, dtype=float)),
                               b2=Tensor(0.0)))


class TestEncodeTokens:
    def test_identity_mixer_returns_embedding_row(self):
        emb = np.array([[0.0, 0.0], [1.5, -2.0]])
        enc = encoder(emb, radius=0)
        doc = make_doc(["t1"])
        out = encode_tokens(doc, enc)
        np.testing.assert_array_equal(out.value, [[1.5, -2.0]])

    def test_zero_embeddings_give_zero_vectors(self):
        enc = encoder(np.zeros((3, 4)), radius=1)
        doc = make_doc(["t1", "t2", "t1"])
        out = encode_tokens(doc, enc)
        np.testing.assert_array_equal(out.value, np.zeros((3, 4)))

    def test_radius_zero_ignores_neighbors(self):
        rng = np.random.default_rng(0)
        emb = rng.normal(size=(4, 3))
        mixer = rng.normal(size=(3, 3))
        enc = encoder(emb, radius=0, mixer=mixer)
        out_a = encode_tokens(make_doc(["t1", "t2"]), enc)
        out_b = encode_tokens(make_doc(["t1", "t3"]), enc)
        np.testing.assert_array_equal(out_a.value[0], out_b.value[0])

    def test_window_limits_dependence(self):
        rng = np.random.default_rng(1)
        emb = rng.normal(size=(6, 2))
        mixer = rng.normal(size=(3 * 2, 2))
        enc = encoder(emb, radius=1, mixer=mixer)
        base = encode_tokens(make_doc(["t1", "t2", "t3", "t4"]), enc)
        far = encode_tokens(make_doc(["t1", "t2", "t3", "t5"]), enc)
        np.testing.assert_array_equal(base.value[:2], far.value[:2])
        assert not np.array_equal(base.value[3], far.value[3])

    def test_unknown_token_uses_unk_row(self):
        emb = np.array([[9.0, 9.0], [1.0, 1.0]])
        enc = encoder(emb, radius=0)
        out = encode_tokens(make_doc(["never-seen"]), enc)
        np.testing.assert_array_equal(out.value, [[9.0, 9.0]])


class TestAttendSpan:
    def test_single_token_span_returns_its_vector(self):
        vecs = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        enc = encoder(np.zeros((1, 2)))
        out = attend_span(vecs, SpanRef(1, 1), enc)
        np.testing.assert_allclose(out.value, [3.0, 4.0])

    def test_zero_attention_is_arithmetic_mean(self):
        vecs = Tensor(np.array([[1.0, 0.0], [0.0, 2.0]]))
        enc = encoder(np.zeros((1, 2)))
        out = attend_span(vecs, SpanRef(0, 1), enc)
        np.testing.assert_allclose(out.value, [0.5, 1.0])

    def test_hand_softmax_logits_one_zero(self):
        u = np.array([1.0, 0.0, 0.0])
        v = np.array([0.0, 1.0, 0.0])
        # attention vector picks coordinate 2 to produce logits (1, 0)
        vecs = Tensor(np.stack([u + np.array([0, 0, 1.0]), v]))
        enc = encoder(np.zeros((1, 3)), attention=np.array([0.0, 0.0, 1.0]))
        out = attend_span(vecs, SpanRef(0, 1), enc)
        w1, w2 = softmax_by_hand([1.0, 0.0])
        expected = w1 * (u + np.array([0, 0, 1.0])) + w2 * v
        np.testing.assert_allclose(out.value, expected, atol=1e-12)
        assert w1 == pytest.approx(0.7311, abs=1e-4)
        assert w2 == pytest.approx(0.2689, abs=1e-4)

    def test_output_in_convex_hull(self):
        rng = np.random.default_rng(3)
        vecs = Tensor(rng.normal(size=(5, 3)))
        enc = encoder(np.zeros((1, 3)), attention=rng.normal(size=3))
        out = attend_span(vecs, SpanRef(1, 4), enc).value
        lo = vecs.value[1:5].min(axis=0) - 1e-12
        hi = vecs.value[1:5].max(axis=0) + 1e-12
        assert np.all(out >= lo) and np.all(out <= hi)


class TestSpanRepresentation:
    def test_width_one_boundaries_coincide(self):
        rng = np.random.default_rng(0)
        vecs = Tensor(rng.normal(size=(3, 4)))
        enc = encoder(np.zeros((1, 4)), width_emb=np.zeros((6, 2)))
        config = ModelConfig(d_token=4, d_width=2)
        rep = build_span_representation(vecs, SpanRef(1, 1), enc, config)
        np.testing.assert_array_equal(rep.boundary_start.value,
                                      rep.boundary_end.value)

    def test_full_dimension(self):
        vecs = Tensor(np.zeros((3, 4)))
        enc = encoder(np.zeros((1, 4)), width_emb=np.zeros((6, 2)))
        config = ModelConfig(d_token=4, d_width=2)
        rep = build_span_representation(vecs, SpanRef(0, 2), enc, config)
        assert rep.full.shape == (14,)

    def test_width_bucket_rule(self):
        vecs = Tensor(np.zeros((3, 4)))
        width_emb = np.arange(10).reshape(5, 2).astype(float)
        enc = encoder(np.zeros((1, 4)), width_emb=width_emb)
        config = ModelConfig(d_token=4, d_width=2,
                             width_bucket_edges=(1, 2, 3, 4))
        rep = build_span_representation(vecs, SpanRef(0, 2), enc, config)
        np.testing.assert_array_equal(rep.width_feature.value, width_emb[2])

    @given(st.integers(0, 6), st.integers(0, 3))
    @settings(max_examples=40, deadline=None)
    def test_batched_matches_single(self, seed, span_pick):
        rng = np.random.default_rng(seed)
        vecs = Tensor(rng.normal(size=(6, 3)))
        enc = encoder(rng.normal(size=(2, 3)), attention=rng.normal(size=3),
                      width_emb=rng.normal(size=(6, 2)))
        config = ModelConfig(d_token=3, d_width=2)
        spans = [SpanRef(0, 0), SpanRef(0, 2), SpanRef(2, 5), SpanRef(4, 4)]
        batch = build_span_representations(vecs, spans, enc, config)
        span = spans[span_pick]
        single = build_span_representation(vecs, span, enc, config)
        np.testing.assert_allclose(batch.full.value[batch.row(span)],
                                   single.full.value, atol=1e-12)
        np.testing.assert_allclose(batch.internal.value[batch.row(span)],
                                   single.internal.value, atol=1e-12)


class TestMentionScore:
    def test_zero_weights_score_zero(self):
        scoring = linear_scoring(np.zeros(14), np.zeros(42))
        rep = Tensor(np.ones(14))
        assert float(mention_score(rep, scoring).value) == 0.0

    def test_linear_scorer_reads_coordinate(self):
        w = np.arange(14.0)
        scoring = linear_scoring(w, np.zeros(42))
        h = np.zeros(14)
        h[5] = 1.0
        assert float(mention_score(Tensor(h), scoring).value) == 5.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        w = rng.normal(size=8)
        h = rng.normal(size=8)

        def f(weights):
            scoring = linear_scoring(weights, np.zeros(24))
            return float(mention_score(Tensor(h), scoring).value)

        t = Tensor.param(w.copy())
        scoring = ScoringParams(
            mention=FeedForward(w1=t, b2=Tensor(0.0)),
            antecedent=FeedForward(w1=Tensor(np.zeros(24)), b2=Tensor(0.0)))
        out = mention_score(Tensor(h), scoring)
        out.backward()
        numeric = finite_difference(f, w.copy())
        for a, n in zip(t.grad, numeric):
            assert relative_error(a, n) < 1e-4


class TestPrune:
    def test_lambda_one_keeps_all(self):
        doc = make_doc(["a"] * 4)
        spans = [SpanRef(i, i) for i in range(4)]
        kept = prune_mentions(doc, spans, np.arange(4.0), 1.0)
        assert kept.spans == spans

    def test_ceiling_rule(self):
        doc = make_doc(["a"] * 10)
        spans = [SpanRef(i, i) for i in range(10)]
        kept = prune_mentions(doc, spans, np.arange(10.0), 0.4)
        assert len(kept) == 4

    def test_ties_keep_position_order(self):
        doc = make_doc(["a"] * 10)
        spans = [SpanRef(i, i) for i in range(10)]
        kept = prune_mentions(doc, spans, np.zeros(10), 0.4)
        assert kept.spans == spans[:4]

    def test_result_sorted_by_position(self):
        doc = make_doc(["a"] * 6)
        spans = [SpanRef(i, i) for i in range(6)]
        scores = np.array([0.0, 5.0, 1.0, 4.0, 2.0, 3.0])
        kept = prune_mentions(doc, spans, scores, 0.5)
        assert kept.spans == sorted(kept.spans)
        assert kept.spans == [spans[1], spans[3], spans[5]]


class TestPairScore:
    def rep(self, span, h):
        h = Tensor(np.asarray(h, dtype=float))
        return m.SpanRepresentation(span, h, h, h, h, h)

    def test_zero_weight_scorers_give_zero(self):
        scoring = linear_scoring(np.zeros(3), np.zeros(9))
        s = pair_score(self.rep(SpanRef(2, 2), [1, 2, 3]),
                       self.rep(SpanRef(0, 0), [4, 5, 6]), scoring)
        assert float(s.value) == 0.0

    def test_sum_of_parts(self):
        # mention scorer reads h[0]; antecedent scorer reads product slot 0
        mention_w = np.array([1.0, 0.0, 0.0])
        antecedent_w = np.zeros(9)
        antecedent_w[6] = 0.25  # product block starts at 2 * 3
        scoring = linear_scoring(mention_w, antecedent_w)
        h_i = self.rep(SpanRef(2, 2), [1.0, 0.0, 0.0])
        h_j = self.rep(SpanRef(0, 0), [2.0, 0.0, 0.0])
        s = pair_score(h_i, h_j, scoring)
        assert float(s.value) == pytest.approx(1.0 + 2.0 + 0.25 * 2.0)

    def test_ordering_violation_raises(self):
        scoring = linear_scoring(np.zeros(3), np.zeros(9))
        with pytest.raises(OrderingError):
            pair_score(self.rep(SpanRef(0, 0), [1, 2, 3]),
                       self.rep(SpanRef(1, 1), [1, 2, 3]), scoring)


class TestAntecedentDistribution:
    def test_no_candidates_dummy_gets_all(self):
        probs = antecedent_distribution(np.array([]))
        np.testing.assert_allclose(probs, [1.0])

    def test_single_zero_candidate_splits_evenly(self):
        probs = antecedent_distribution(np.array([0.0]))
        np.testing.assert_allclose(probs, [0.5, 0.5])

    def test_hand_softmax_two_candidates(self):
        probs = antecedent_distribution(np.array([1.0, 0.0]))
        expected = softmax_by_hand([1.0, 0.0, 0.0])
        np.testing.assert_allclose(probs, expected, atol=1e-12)
        np.testing.assert_allclose(probs, [0.5761, 0.2119, 0.2119], atol=1e-4)

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            antecedent_distribution(np.array([np.nan]))

    @given(st.lists(st.floats(-30, 30), min_size=0, max_size=8))
    @settings(max_examples=100, deadline=None)
    def test_sums_to_one(self, scores):
        probs = antecedent_distribution(np.array(scores))
        assert probs.min() >= 0
        assert abs(probs.sum() - 1.0) < 1e-12

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=6),
           st.floats(-10, 10))
    @settings(max_examples=60, deadline=None)
    def test_shift_applies_to_dummy_too(self, scores, shift):
        # Shifting all pair scores changes the distribution relative to the
        # fixed dummy; shifting scores AND dummy leaves it unchanged.
        base = antecedent_distribution(np.array(scores))
        shifted_all = np.concatenate([np.array(scores) + shift, [shift]])
        exps = np.exp(shifted_all - shifted_all.max())
        manual = exps / exps.sum()
        np.testing.assert_allclose(manual, base, atol=1e-9)


def test_antecedent_window_caps_lookback():
    assert list(antecedent_window(5, 3)) == [2, 3, 4]
    assert list(antecedent_window(2, 50)) == [0, 1]
    assert list(antecedent_window(0, 50)) == []


def test_candidate_set_len():
    cs = CandidateSet([SpanRef(0, 0)], np.array([1.0]), np.array([0]))
    assert len(cs) == 1
