"""The training objective: coreference, retrofitting, and scaffold losses.

All three losses follow the minimize convention (coreference and scaffold
terms are negative log-likelihoods), so the combined objective
``beta1 * CL + beta2 * RL + beta3 * SL`` is uniformly minimized.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import model as m
from .autodiff import Tensor
from .corpus import Document, SpanRef, enumerate_candidate_spans

log = logging.getLogger(__name__)

_NORM_EPS = 1e-30  # keeps batched cosine finite for zero vectors


class LossError(ValueError):
    """Raised when a loss component is malformed (NaN, bad weights)."""


@dataclass(frozen=True)
class LossWeights:
    """The full hyperparameter surface of the objective.

    `alpha_c` weighs coreference distance, `alpha_k` weighs concept-knowledge
    distance per lexicon, and `beta` weighs (coreference, retrofitting,
    scaffold) losses in the combined objective.
    """

    alpha_c: float = 1.0
    alpha_k: Mapping[str, float] = field(default_factory=dict)
    beta: tuple[float, float, float] = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if self.alpha_c < 0 or any(v < 0 for v in self.alpha_k.values()):
            raise LossError("distance weights must be non-negative")
        if len(self.beta) != 3 or any(b < 0 for b in self.beta):
            raise LossError("beta must be three non-negative weights")
        if not any(b > 0 for b in self.beta):
            raise LossError("at least one beta must be positive")

    def replace(self, **kwargs) -> "LossWeights":
        data = {"alpha_c": self.alpha_c, "alpha_k": dict(self.alpha_k),
                "beta": self.beta}
        data.update(kwargs)
        return LossWeights(**data)


@dataclass(frozen=True)
class PairSet:
    """Deduplicated unordered span pairs internal to one document."""

    doc_id: str
    pairs: tuple[tuple[SpanRef, SpanRef], ...]

    @property
    def count(self) -> int:
        return len(self.pairs)


@dataclass
class ScaffoldParams:
    """Per-concept weight vectors for the concept-identification head."""

    classes: tuple[str, ...]
    weights: Tensor
    none_class: str | None = None

    def __post_init__(self):
        if len(self.classes) != self.weights.shape[0]:
            raise LossError("one weight vector per scaffold class required")
        self.class_index = {c: i for i, c in enumerate(self.classes)}


# ---------------------------------------------------------------------------
# Distances


def coref_distance(span_i: SpanRef, span_j: SpanRef,
                   gold_clusters: Iterable[frozenset[SpanRef]]) -> int:
    """0 when both spans share a gold cluster, else 1.

    Pairs in different clusters and pairs where either span is unclustered
    both count as distance 1.
    """
    for cluster in gold_clusters:
        if span_i in cluster:
            return 0 if span_j in cluster else 1
    return 1


def knowledge_distance(span_i: SpanRef, span_j: SpanRef,
                       annotations: Mapping[str, Mapping[SpanRef, str]],
                       lexicon_id: str) -> int:
    """0 when both spans carry the same concept from one lexicon, else 1."""
    labels = annotations.get(lexicon_id, {})
    a, b = labels.get(span_i), labels.get(span_j)
    if a is not None and a == b:
        return 0
    return 1


def target_distance(span_i: SpanRef, span_j: SpanRef, doc: Document,
                    weights: LossWeights, unlabeled: str = "strict") -> float:
    """Knowledge-based target distance: alpha_c * d_c + sum alpha_k * d_k.

    With `unlabeled="skip"`, a lexicon's term is dropped for pairs where
    either span carries no concept from that lexicon.
    """
    total = weights.alpha_c * coref_distance(span_i, span_j, doc.gold_clusters)
    for lexicon_id, alpha in weights.alpha_k.items():
        if alpha == 0.0:
            continue
        if unlabeled == "skip":
            labels = doc.concept_annotations.get(lexicon_id, {})
            if span_i not in labels or span_j not in labels:
                continue
        total += alpha * knowledge_distance(span_i, span_j,
                                            doc.concept_annotations, lexicon_id)
    return total


def cosine_distance(u, v) -> float:
    """1 - cos(u, v), in [0, 2]; zero vectors degrade to distance 1."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        log.warning("cosine_distance of a zero vector; returning 1.0")
        return 1.0
    return float(1.0 - np.dot(u, v) / (nu * nv))


def cosine_distance_t(u: Tensor, v: Tensor) -> Tensor:
    """Differentiable cosine distance between two vectors."""
    dot_uv = ad.dot(u, v)
    norms = ad.dot(u, u).sqrt() * ad.dot(v, v).sqrt()
    return 1.0 - dot_uv / (norms + _NORM_EPS)


# ---------------------------------------------------------------------------
# Pair population for the retrofitting loss


def build_pair_set(doc: Document, extra_spans: Sequence[SpanRef],
                   budget: int, rng: np.random.Generator) -> PairSet:
    """Pairs over gold-cluster spans plus `extra_spans`, capped at `budget`.

    Enumeration order is deterministic; over-budget sets are thinned by
    seeded sampling without replacement.
    """
    spans = sorted(set(doc.gold_spans()) | set(extra_spans))
    pairs = list(itertools.combinations(spans, 2))
    if len(pairs) > budget:
        chosen = np.sort(rng.choice(len(pairs), size=budget, replace=False))
        pairs = [pairs[i] for i in chosen]
    return PairSet(doc.doc_id, tuple(pairs))


# ---------------------------------------------------------------------------
# Loss operations (reference forms over explicit structures)


def retrofit_loss(docs: Sequence[Document], pair_sets: Sequence[PairSet],
                  internals: Mapping[str, Mapping[SpanRef, Tensor]],
                  weights: LossWeights, unlabeled: str = "strict") -> Tensor:
    """Mean absolute gap between target and cosine distance, summed over docs."""
    by_id = {d.doc_id: d for d in docs}
    total = Tensor(0.0)
    for pair_set in pair_sets:
        doc = by_id[pair_set.doc_id]
        if pair_set.count == 0:
            log.warning("%s: empty pair set contributes 0", doc.doc_id)
            continue
        vectors = internals[doc.doc_id]
        acc = Tensor(0.0)
        for span_i, span_j in pair_set.pairs:
            target = target_distance(span_i, span_j, doc, weights, unlabeled)
            gap = Tensor(target) - cosine_distance_t(vectors[span_i],
                                                     vectors[span_j])
            acc = acc + gap.abs()
        total = total + acc / float(pair_set.count)
    return total


def scaffold_loss(labeled: Mapping[str, Sequence[tuple[SpanRef, str]]],
                  internals: Mapping[str, Mapping[SpanRef, Tensor]],
                  scaffold: ScaffoldParams) -> Tensor:
    """Per-document mean concept negative log-likelihood, summed over docs."""
    total = Tensor(0.0)
    for doc_id in sorted(labeled):
        spans = [(s, c) for s, c in labeled[doc_id] if c in scaffold.class_index]
        if not spans:
            continue
        acc = Tensor(0.0)
        for span, concept in spans:
            logits = scaffold.weights @ internals[doc_id][span]
            nll = logits.logsumexp() - logits.take(scaffold.class_index[concept])
            acc = acc + nll
        total = total + acc / float(len(spans))
    return total


def gold_antecedent_rows(doc: Document, candidates: m.CandidateSet,
                         k: int, window: range) -> tuple[list[int], bool]:
    """Window positions of candidate k's gold antecedents.

    Returns (positions, missed) where `missed` flags an anaphoric mention
    whose every gold antecedent fell outside the candidate window.
    """
    span = candidates.spans[k]
    cluster = doc.cluster_of(span)
    if cluster is None:
        return [], False
    rows = [j - window.start for j in window
            if candidates.spans[j] in cluster]
    if rows:
        return rows, False
    anaphoric = any(other < span for other in cluster)
    return [], anaphoric


def coref_loss(doc: Document, candidates: m.CandidateSet,
               distributions: Sequence[np.ndarray],
               max_antecedents: int = 50) -> float:
    """Marginal negative log-likelihood of correct antecedents.

    `distributions[k]` covers candidate k's antecedent window with the dummy
    antecedent last, as produced by `model.antecedent_distribution`.
    """
    loss, _ = coref_loss_with_misses(doc, candidates, distributions,
                                     max_antecedents)
    return loss


def coref_loss_with_misses(doc: Document, candidates: m.CandidateSet,
                           distributions: Sequence[np.ndarray],
                           max_antecedents: int = 50) -> tuple[float, int]:
    total = 0.0
    misses = 0
    for k in range(len(candidates)):
        window = m.antecedent_window(k, max_antecedents)
        probs = distributions[k]
        if len(probs) != len(window) + 1:
            raise LossError(f"distribution {k} does not cover its window")
        rows, missed = gold_antecedent_rows(doc, candidates, k, window)
        misses += missed
        mass = probs[rows].sum() if rows else probs[-1]
        total -= math.log(mass)
    return total, misses


def combined_loss(cl, rl, sl, weights: LossWeights):
    """beta1 * CL + beta2 * RL + beta3 * SL, with NaN components rejected."""
    named = {"coreference": cl, "retrofitting": rl, "scaffold": sl}
    for name, component in named.items():
        value = component.value if isinstance(component, Tensor) else component
        if np.isnan(value).any():
            raise LossError(f"{name} loss is NaN")
    b1, b2, b3 = weights.beta
    return b1 * cl + b2 * rl + b3 * sl


# ---------------------------------------------------------------------------
# Document-level objective graph (vectorized; used by training and eval)


@dataclass
class ObjectiveConfig:
    """Loss-assembly knobs independent of the model architecture."""

    pair_budget: int = 5000
    pair_seed: int = 0
    unlabeled_knowledge: str = "strict"  # or "skip"
    scaffold_lexicon: str | None = None
    scaffold_include_unlabeled: bool = False
    source_phase_rl: bool = True
    grad_accumulation: int = 1


@dataclass
class DocumentLosses:
    """Loss tensors and forward-pass artifacts for one document."""

    total: Tensor
    cl: Tensor
    rl: Tensor
    sl: Tensor
    pruning_misses: int
    candidates: m.CandidateSet
    reps: m.BatchedSpans | None
    pair_set: PairSet | None


def scaffold_targets(doc: Document, scaffold: ScaffoldParams,
                     objective: ObjectiveConfig,
                     spans: Sequence[SpanRef]) -> list[tuple[SpanRef, str]]:
    """(span, class) pairs contributing to the scaffold loss for one doc."""
    if objective.scaffold_lexicon is None:
        return []
    labels = doc.concept_annotations.get(objective.scaffold_lexicon, {})
    out = []
    for span in spans:
        concept = labels.get(span)
        if concept is None:
            if objective.scaffold_include_unlabeled and scaffold.none_class:
                out.append((span, scaffold.none_class))
            continue
        if concept in scaffold.class_index:
            out.append((span, concept))
    return out


def document_objective(doc: Document, enc: m.EncoderParams,
                       scoring: m.ScoringParams, scaffold: ScaffoldParams | None,
                       weights: LossWeights, config: m.ModelConfig,
                       objective: ObjectiveConfig,
                       rng: np.random.Generator | None = None) -> DocumentLosses:
    """Assemble CL, RL, SL, and the combined loss for one document."""
    b1, b2, b3 = weights.beta
    if len(doc) == 0:
        zero = Tensor(0.0)
        empty = m.CandidateSet([], np.zeros(0), np.zeros(0, dtype=np.intp))
        return DocumentLosses(combined_loss(zero, zero, zero, weights), zero,
                              zero, zero, 0, empty, None, None)
    token_vecs = m.encode_tokens(doc, enc)
    enumerated = enumerate_candidate_spans(doc, config.max_span_width)

    gold = doc.gold_spans()
    union: set[SpanRef] = set(enumerated)
    if b2 > 0 or b3 > 0:
        union.update(gold)
    if b3 > 0 and scaffold is not None and objective.scaffold_lexicon:
        union.update(doc.concept_annotations.get(objective.scaffold_lexicon, {}))
    union_spans = sorted(union)

    reps = m.build_span_representations(token_vecs, union_spans, enc, config)
    scores_t = m.mention_scores(reps, scoring)
    scores = scores_t.value

    enum_rows = np.array([reps.row(s) for s in enumerated], dtype=np.intp)
    candidates = m.prune_mentions(doc, enumerated, scores[enum_rows],
                                  config.prune_ratio)

    zero = Tensor(0.0)
    cl, misses = (zero, 0)
    if b1 > 0:
        cl, misses = _coref_loss_graph(doc, candidates, reps, scores_t,
                                       scoring, config)

    rl, pair_set = zero, None
    if b2 > 0:
        if rng is None:
            rng = np.random.default_rng(objective.pair_seed)
        pair_set = build_pair_set(doc, candidates.spans, objective.pair_budget,
                                  rng)
        rl = _retrofit_loss_graph(doc, pair_set, reps, weights,
                                  objective.unlabeled_knowledge)

    sl = zero
    scaffold_spans: list[tuple[SpanRef, str]] = []
    if b3 > 0 and scaffold is not None:
        pool: set[SpanRef] = set(gold)
        if objective.scaffold_lexicon:
            pool.update(doc.concept_annotations.get(objective.scaffold_lexicon,
                                                    {}))
        if objective.scaffold_include_unlabeled:
            pool.update(candidates.spans)
        scaffold_spans = scaffold_targets(doc, scaffold, objective, sorted(pool))
        if scaffold_spans:
            sl = _scaffold_loss_graph(scaffold_spans, reps, scaffold)

    total = combined_loss(cl, rl, sl, weights)
    return DocumentLosses(total, cl, rl, sl, misses, candidates, reps, pair_set)


def _coref_loss_graph(doc: Document, candidates: m.CandidateSet,
                      reps: m.BatchedSpans, scores_t: Tensor,
                      scoring: m.ScoringParams,
                      config: m.ModelConfig) -> tuple[Tensor, int]:
    cand_rows = np.array([reps.row(s) for s in candidates.spans], dtype=np.intp)
    pair_i: list[int] = []
    pair_j: list[int] = []
    segments: list[tuple[int, int]] = []
    for k in range(len(candidates)):
        window = m.antecedent_window(k, config.max_antecedents)
        lo = len(pair_i)
        for j in window:
            pair_i.append(cand_rows[k])
            pair_j.append(cand_rows[j])
        segments.append((lo, len(pair_i)))

    if pair_i:
        rows_i = np.array(pair_i, dtype=np.intp)
        rows_j = np.array(pair_j, dtype=np.intp)
        h_i = reps.full.take(rows_i)
        h_j = reps.full.take(rows_j)
        s_a = scoring.antecedent.apply(m.pair_features(h_i, h_j))
        pair_scores = s_a + scores_t.take(rows_i) + scores_t.take(rows_j)
    else:
        pair_scores = None

    epsilon = Tensor(np.zeros(1))
    total = Tensor(0.0)
    misses = 0
    for k in range(len(candidates)):
        lo, hi = segments[k]
        window = m.antecedent_window(k, config.max_antecedents)
        if hi > lo:
            seg = pair_scores.narrow(lo, hi)
            denom = ad.concat([seg, epsilon]).logsumexp()
        else:
            seg = None
            denom = Tensor(0.0)
        rows, missed = gold_antecedent_rows(doc, candidates, k, window)
        misses += missed
        if rows:
            numer = seg.take(np.array(rows, dtype=np.intp)).logsumexp()
        else:
            numer = Tensor(0.0)
        total = total + (denom - numer)
    return total, misses


def _retrofit_loss_graph(doc: Document, pair_set: PairSet,
                         reps: m.BatchedSpans, weights: LossWeights,
                         unlabeled: str) -> Tensor:
    if pair_set.count == 0:
        log.warning("%s: empty pair set contributes 0", doc.doc_id)
        return Tensor(0.0)
    rows_i = np.array([reps.row(a) for a, _ in pair_set.pairs], dtype=np.intp)
    rows_j = np.array([reps.row(b) for _, b in pair_set.pairs], dtype=np.intp)
    targets = Tensor(np.array([
        target_distance(a, b, doc, weights, unlabeled)
        for a, b in pair_set.pairs]))
    x_i = reps.internal.take(rows_i)
    x_j = reps.internal.take(rows_j)
    dots = (x_i * x_j).sum(axis=1)
    norm_i = (x_i * x_i).sum(axis=1).sqrt()
    norm_j = (x_j * x_j).sum(axis=1).sqrt()
    distances = 1.0 - dots / (norm_i * norm_j + _NORM_EPS)
    return (targets - distances).abs().mean()


def _scaffold_loss_graph(scaffold_spans: Sequence[tuple[SpanRef, str]],
                         reps: m.BatchedSpans,
                         scaffold: ScaffoldParams) -> Tensor:
    rows = np.array([reps.row(s) for s, _ in scaffold_spans], dtype=np.intp)
    targets = np.array([scaffold.class_index[c] for _, c in scaffold_spans],
                       dtype=np.intp)
    logits = reps.internal.take(rows) @ scaffold.weights.transpose()
    onehot = np.zeros((len(rows), len(scaffold.classes)))
    onehot[np.arange(len(rows)), targets] = 1.0
    true_logits = (logits * Tensor(onehot)).sum(axis=1)
    return (logits.logsumexp(axis=1) - true_logits).mean()
