"""Cluster decoding and the MUC / B-cubed / CEAF-e metric suite.

Corpus-level scores pool every document's clusters into one clustering with
document-tagged mentions; all three metrics decompose over documents, so
pooling equals micro-averaging. MUC and B-cubed are computed with exact
rational arithmetic internally and converted to float at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import model as m
from . import training as tr
from .corpus import (Document, SpanRef, SubwordVocab,
                     enumerate_candidate_spans, mean_subwords_per_span,
                     subword_bucket)

Cluster = frozenset
Clustering = Sequence[frozenset]


class UnionFind:
    """Disjoint sets with path compression and union by size."""

    def __init__(self):
        self.parent: dict[Hashable, Hashable] = {}
        self.size: dict[Hashable, int] = {}

    def find(self, x: Hashable) -> Hashable:
        if x not in self.parent:
            self.parent[x] = x
            self.size[x] = 1
            return x
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: Hashable, b: Hashable) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]

    def groups(self) -> list[set]:
        out: dict[Hashable, set] = {}
        for x in self.parent:
            out.setdefault(self.find(x), set()).add(x)
        return list(out.values())


@dataclass(frozen=True)
class RPF1:
    recall: float
    precision: float
    f1: float

    @classmethod
    def from_rp(cls, recall: float, precision: float) -> "RPF1":
        total = recall + precision
        f1 = 2 * recall * precision / total if total > 0 else 0.0
        return cls(recall, precision, f1)


@dataclass(frozen=True)
class MetricReport:
    muc: RPF1
    b_cubed: RPF1
    ceaf_e: RPF1

    @property
    def average(self) -> RPF1:
        return average_report(self.muc, self.b_cubed, self.ceaf_e)


@dataclass
class EvalSlice:
    key: str
    gold_chains: int
    report: MetricReport


@dataclass
class PredictedClusters:
    """Decoded clusters per document; singletons are already dropped."""

    clusters: list[frozenset[SpanRef]]


# ---------------------------------------------------------------------------
# Decoding


def predict_antecedents(doc: Document, store: tr.ParameterStore,
                        config: m.ModelConfig) -> dict[SpanRef, SpanRef | None]:
    """Argmax antecedent per candidate mention; None is the dummy choice.

    Score ties break toward the dummy, then toward the nearest antecedent.
    """
    if len(doc) == 0:
        return {}
    enc, scoring, _, _ = tr.bind_parameters(store, config, trainable=False)
    token_vecs = m.encode_tokens(doc, enc)
    spans = enumerate_candidate_spans(doc, config.max_span_width)
    reps = m.build_span_representations(token_vecs, spans, enc, config)
    scores = m.mention_scores(reps, scoring).value
    candidates = m.prune_mentions(doc, spans, scores, config.prune_ratio)

    links: dict[SpanRef, SpanRef | None] = {}
    cand_rows = np.array([reps.row(s) for s in candidates.spans], dtype=np.intp)
    full = reps.full
    for k, span in enumerate(candidates.spans):
        window = m.antecedent_window(k, config.max_antecedents)
        if len(window) == 0:
            links[span] = None
            continue
        rows_i = np.full(len(window), cand_rows[k], dtype=np.intp)
        rows_j = cand_rows[window.start:window.stop]
        h_i = full.take(rows_i)
        h_j = full.take(rows_j)
        s_a = scoring.antecedent.apply(m.pair_features(h_i, h_j)).value
        pair_scores = s_a + scores[cand_rows[k]] + scores[rows_j]
        if np.isnan(pair_scores).any():
            raise ValueError(f"{doc.doc_id}: NaN antecedent score")
        pick = select_antecedent(pair_scores)
        links[span] = None if pick is None \
            else candidates.spans[window.start + pick]
    return links


def select_antecedent(pair_scores: np.ndarray) -> int | None:
    """Argmax against the implicit zero-scored dummy antecedent.

    Returns the window-relative index of the chosen antecedent, or None for
    the dummy. Ties break toward the dummy, then toward the nearest (latest)
    antecedent.
    """
    if len(pair_scores) == 0:
        return None
    best = pair_scores.max()
    if best <= 0.0:
        return None
    ties = np.flatnonzero(pair_scores == best)
    return int(ties[-1])


def decode_clusters(links: Mapping[SpanRef, SpanRef | None]) -> PredictedClusters:
    """Connected components of the non-dummy links; singletons dropped."""
    uf = UnionFind()
    for mention, antecedent in links.items():
        if antecedent is not None:
            uf.union(mention, antecedent)
    clusters = [frozenset(g) for g in uf.groups() if len(g) >= 2]
    clusters.sort(key=lambda c: sorted(c)[0])
    return PredictedClusters(clusters)


def predict_clusters(doc: Document, store: tr.ParameterStore,
                     config: m.ModelConfig) -> PredictedClusters:
    return decode_clusters(predict_antecedents(doc, store, config))


# ---------------------------------------------------------------------------
# Metrics


def _cluster_map(clusters: Clustering) -> dict[Hashable, frozenset]:
    out: dict[Hashable, frozenset] = {}
    for cluster in clusters:
        frozen = frozenset(cluster)
        for mention in cluster:
            out[mention] = frozen
    return out


def muc(gold: Clustering, pred: Clustering) -> RPF1:
    """Link-based metric: partitions of each cluster by the other side."""

    def side(clusters: Clustering, other_map) -> tuple[int, int]:
        num = den = 0
        for cluster in clusters:
            cells = set()
            for mention in cluster:
                home = other_map.get(mention)
                cells.add(home if home is not None else ("solo", mention))
            num += len(cluster) - len(cells)
            den += len(cluster) - 1
        return num, den

    r_num, r_den = side(gold, _cluster_map(pred))
    p_num, p_den = side(pred, _cluster_map(gold))
    recall = r_num / r_den if r_den else 0.0
    precision = p_num / p_den if p_den else 0.0
    return RPF1.from_rp(recall, precision)


def b_cubed(gold: Clustering, pred: Clustering) -> RPF1:
    """Per-mention overlap metric; missing mentions act as singletons."""

    def side(a_clusters: Clustering, b_map) -> Fraction:
        total = Fraction(0)
        count = 0
        for cluster in a_clusters:
            for mention in cluster:
                b_cluster = b_map.get(mention, frozenset([mention]))
                total += Fraction(len(cluster & b_cluster), len(cluster))
                count += 1
        return total / count if count else Fraction(0)

    recall = float(side(gold, _cluster_map(pred)))
    precision = float(side(pred, _cluster_map(gold)))
    return RPF1.from_rp(recall, precision)


def ceaf_e(gold: Clustering, pred: Clustering) -> RPF1:
    """Entity-alignment metric with the similarity 2|G∩P| / (|G|+|P|).

    The one-to-one alignment maximizing total similarity is found with the
    Kuhn-Munkres assignment.
    """
    gold = [frozenset(c) for c in gold]
    pred = [frozenset(c) for c in pred]
    if not gold and not pred:
        return RPF1(1.0, 1.0, 1.0)
    if not gold or not pred:
        return RPF1(0.0, 0.0, 0.0)
    phi = np.zeros((len(gold), len(pred)))
    for i, g in enumerate(gold):
        for j, p in enumerate(pred):
            phi[i, j] = 2.0 * len(g & p) / (len(g) + len(p))
    rows, cols = linear_sum_assignment(phi, maximize=True)
    total = float(phi[rows, cols].sum())
    return RPF1.from_rp(total / len(gold), total / len(pred))


def average_report(muc_score: RPF1, b3_score: RPF1, ceafe_score: RPF1) -> RPF1:
    """Unweighted arithmetic means of R, P, and F1 across the three metrics."""
    triples = (muc_score, b3_score, ceafe_score)
    return RPF1(sum(t.recall for t in triples) / 3.0,
                sum(t.precision for t in triples) / 3.0,
                sum(t.f1 for t in triples) / 3.0)


def score_clusterings(gold: Clustering, pred: Clustering) -> MetricReport:
    return MetricReport(muc(gold, pred), b_cubed(gold, pred),
                        ceaf_e(gold, pred))


def pool_documents(per_doc: Sequence[Clustering]) -> list[frozenset]:
    """Tag mentions with their document index and merge the clusterings."""
    pooled = []
    for i, clustering in enumerate(per_doc):
        for cluster in clustering:
            pooled.append(frozenset((i, mention) for mention in cluster))
    return pooled


def score_documents(gold_docs: Sequence[Clustering],
                    pred_docs: Sequence[Clustering]) -> MetricReport:
    if len(gold_docs) != len(pred_docs):
        raise ValueError("gold and predicted document counts differ")
    return score_clusterings(pool_documents(gold_docs),
                             pool_documents(pred_docs))


def evaluate_model(docs: Sequence[Document], store: tr.ParameterStore,
                   config: m.ModelConfig) -> MetricReport:
    gold = [doc.gold_clusters for doc in docs]
    pred = [predict_clusters(doc, store, config).clusters for doc in docs]
    return score_documents(gold, pred)


# ---------------------------------------------------------------------------
# Evaluation slices


def _restrict(clusters: Iterable[frozenset], mentions: set) -> list[frozenset]:
    out = []
    for cluster in clusters:
        kept = frozenset(m for m in cluster if m in mentions)
        if kept:
            out.append(kept)
    return out


def _chain_label(cluster: frozenset[SpanRef],
                 labels: Mapping[SpanRef, str]) -> str | None:
    found = {labels[s] for s in cluster if s in labels}
    if len(found) == 1:
        return next(iter(found))
    return None


def slice_by_concept(docs: Sequence[Document],
                     pred_docs: Sequence[Clustering],
                     lexicon_id: str) -> list[EvalSlice]:
    """Per-concept scores over gold chains carrying that concept.

    Predicted clusters are intersected with the slice's gold mentions.
    """
    keys: set[str] = set()
    for doc in docs:
        labels = doc.concept_annotations.get(lexicon_id, {})
        for cluster in doc.gold_clusters:
            label = _chain_label(cluster, labels)
            if label is not None:
                keys.add(label)
    slices = []
    for key in sorted(keys):
        gold_sel: list[list[frozenset]] = []
        pred_sel: list[list[frozenset]] = []
        n_chains = 0
        for doc, pred in zip(docs, pred_docs):
            labels = doc.concept_annotations.get(lexicon_id, {})
            chains = [c for c in doc.gold_clusters
                      if _chain_label(c, labels) == key]
            n_chains += len(chains)
            mentions = {s for c in chains for s in c}
            gold_sel.append(chains)
            pred_sel.append(_restrict(pred, mentions))
        report = score_documents(gold_sel, pred_sel)
        slices.append(EvalSlice(key, n_chains, report))
    return slices


def bucket_key(bucket: int, width: float = 1.7, n_buckets: int = 5) -> str:
    if bucket >= n_buckets:
        return f"[{n_buckets * width:.1f},inf)"
    return f"[{bucket * width:.1f},{(bucket + 1) * width:.1f})"


def slice_by_subword_bucket(docs: Sequence[Document],
                            pred_docs: Sequence[Clustering],
                            vocab: SubwordVocab, width: float = 1.7,
                            n_buckets: int = 5) -> list[EvalSlice]:
    """Scores per half-open bucket of mean wordpieces per span per chain.

    Chains past the last bucket pool into an overflow slice.
    """
    assignments: list[list[tuple[frozenset, int]]] = []
    seen: set[int] = set()
    for doc in docs:
        rows = []
        for cluster in doc.gold_clusters:
            mean_pieces = mean_subwords_per_span(cluster, doc, vocab)
            bucket = subword_bucket(mean_pieces, width, n_buckets)
            rows.append((cluster, bucket))
            seen.add(bucket)
        assignments.append(rows)
    slices = []
    for bucket in sorted(seen):
        gold_sel: list[list[frozenset]] = []
        pred_sel: list[list[frozenset]] = []
        n_chains = 0
        for rows, pred in zip(assignments, pred_docs):
            chains = [c for c, b in rows if b == bucket]
            n_chains += len(chains)
            mentions = {s for c in chains for s in c}
            gold_sel.append(chains)
            pred_sel.append(_restrict(pred, mentions))
        report = score_documents(gold_sel, pred_sel)
        slices.append(EvalSlice(bucket_key(bucket, width, n_buckets),
                                n_chains, report))
    return slices
