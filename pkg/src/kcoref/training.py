"""Parameter store, gradients, the optimizer, and the training schedule.

Training runs one document at a time (optionally accumulating gradients
over several documents) through the combined objective, with separate
learning rates for the encoder and the task heads. A source-role phase
forces the knowledge weights and the scaffold weight to zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import losses as L
from . import model as m
from .autodiff import Tensor
from .corpus import Document
from .model import UNK_TOKEN, ModelConfig

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "kcoref-checkpoint"
CHECKPOINT_VERSION = 1

TASK_PREFIXES = ("scorer.", "scaffold.")


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    """Loss went NaN; carries the last finite parameter snapshot."""

    def __init__(self, message: str, last_good: "ParameterStore",
                 records: list["EpochRecord"]):
        super().__init__(message)
        self.last_good = last_good
        self.records = records


@dataclass
class ParameterStore:
    """Named tensors plus the vocabulary and scaffold class list."""

    tensors: dict[str, np.ndarray]
    vocab: tuple[str, ...]
    scaffold_classes: tuple[str, ...] = ()
    step: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.vocab and self.vocab[0] != UNK_TOKEN:
            raise TrainingError(f"vocab must start with {UNK_TOKEN!r}")
        self._vocab_index = {tok: i for i, tok in enumerate(self.vocab)}

    @property
    def vocab_index(self) -> Mapping[str, int]:
        return self._vocab_index

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.copy() for k, v in self.tensors.items()},
                              self.vocab, self.scaffold_classes,
                              self.step, self.seed)

    def save(self, path) -> None:
        path = Path(path)
        lines = [f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}",
                 f"seed {self.seed}", f"step {self.step}",
                 f"vocab {len(self.vocab)}"]
        lines.extend(self.vocab)
        lines.append(f"classes {len(self.scaffold_classes)}")
        lines.extend(self.scaffold_classes)
        for name in sorted(self.tensors):
            tensor = self.tensors[name]
            dims = " ".join(str(d) for d in tensor.shape)
            lines.append(f"tensor {name} {tensor.ndim}"
                         + (f" {dims}" if tensor.ndim else ""))
            lines.append(" ".join(float(x).hex() for x in tensor.reshape(-1)))
        lines.append("end")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ParameterStore":
        path = Path(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith(CHECKPOINT_MAGIC):
            raise TrainingError(f"{path}: not a checkpoint file")
        version = lines[0].split(" v")[-1]
        if int(version) != CHECKPOINT_VERSION:
            raise TrainingError(f"{path}: unsupported checkpoint version "
                                f"{version}")
        pos = 1
        seed = int(lines[pos].split()[1]); pos += 1
        step = int(lines[pos].split()[1]); pos += 1
        n_vocab = int(lines[pos].split()[1]); pos += 1
        vocab = tuple(lines[pos:pos + n_vocab]); pos += n_vocab
        n_classes = int(lines[pos].split()[1]); pos += 1
        classes = tuple(lines[pos:pos + n_classes]); pos += n_classes
        tensors: dict[str, np.ndarray] = {}
        while pos < len(lines) and lines[pos] != "end":
            header = lines[pos].split(); pos += 1
            if header[0] != "tensor":
                raise TrainingError(f"{path}: malformed tensor header "
                                    f"{' '.join(header)!r}")
            name, ndim = header[1], int(header[2])
            shape = tuple(int(d) for d in header[3:3 + ndim])
            values = np.array([float.fromhex(tok)
                               for tok in lines[pos].split()]); pos += 1
            tensors[name] = values.reshape(shape)
        return cls(tensors, vocab, classes, step, seed)


def build_vocab(docs: Sequence[Document]) -> tuple[str, ...]:
    """Deterministic token vocabulary: the unknown symbol, then sorted surfaces."""
    surfaces = sorted({t.surface for d in docs for t in d.tokens})
    return (UNK_TOKEN, *surfaces)


def _tensor_specs(config: ModelConfig, n_vocab: int,
                  n_classes: int) -> list[tuple[str, tuple[int, ...], str]]:
    d, dw = config.d_token, config.d_width
    window = 2 * config.window_radius + 1
    span_dim = config.span_dim
    specs: list[tuple[str, tuple[int, ...], str]] = [
        ("encoder.embeddings", (n_vocab, d), "uniform"),
        ("encoder.mixer_w", (window * d, d), "uniform"),
        ("encoder.mixer_b", (d,), "zeros"),
        ("encoder.attention_w", (d,), "uniform"),
        ("encoder.width_embeddings", (config.n_width_buckets, dw), "uniform"),
    ]
    hidden = config.scorer_hidden
    for head, in_dim in (("mention", span_dim), ("antecedent", 3 * span_dim)):
        if hidden > 0:
            specs += [(f"scorer.{head}.w1", (in_dim, hidden), "uniform"),
                      (f"scorer.{head}.b1", (hidden,), "zeros"),
                      (f"scorer.{head}.w2", (hidden,), "uniform"),
                      (f"scorer.{head}.b2", (), "zeros")]
        else:
            specs += [(f"scorer.{head}.w1", (in_dim,), "uniform"),
                      (f"scorer.{head}.b2", (), "zeros")]
    if n_classes > 0:
        specs.append(("scaffold.weights", (n_classes, d), "zeros"))
    return specs


def init_parameters(config: ModelConfig, vocab: tuple[str, ...],
                    scaffold_classes: tuple[str, ...] = (), seed: int = 0,
                    zero_init: bool = False) -> ParameterStore:
    """Seeded uniform fan-in initialization; biases and the scaffold start at 0."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape, kind in _tensor_specs(config, len(vocab),
                                           len(scaffold_classes)):
        if zero_init or kind == "zeros" or not shape:
            tensors[name] = np.zeros(shape)
        else:
            fan_in = shape[0] if len(shape) == 1 else shape[-2]
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ParameterStore(tensors, vocab, scaffold_classes, step=0, seed=seed)


def bind_parameters(store: ParameterStore, config: ModelConfig,
                    trainable: bool = True,
                    ) -> tuple[m.EncoderParams, m.ScoringParams,
                               L.ScaffoldParams | None, dict[str, Tensor]]:
    """Wrap the store's arrays as gradient leaves shared by all heads.

    With trainable=False the tensors are constants and forward passes build
    no tape (used for inference and finite-difference probing).
    """
    leaves = {name: Tensor(arr, requires_grad=trainable, name=name)
              for name, arr in store.tensors.items()}
    enc = m.EncoderParams(
        embeddings=leaves["encoder.embeddings"],
        mixer_w=leaves["encoder.mixer_w"],
        mixer_b=leaves["encoder.mixer_b"],
        attention_w=leaves["encoder.attention_w"],
        width_embeddings=leaves["encoder.width_embeddings"],
        vocab=store.vocab_index)

    def head(prefix: str) -> m.FeedForward:
        if f"{prefix}.w2" in leaves:
            return m.FeedForward(w1=leaves[f"{prefix}.w1"],
                                 b1=leaves[f"{prefix}.b1"],
                                 w2=leaves[f"{prefix}.w2"],
                                 b2=leaves[f"{prefix}.b2"])
        return m.FeedForward(w1=leaves[f"{prefix}.w1"],
                             b2=leaves[f"{prefix}.b2"])

    scoring = m.ScoringParams(mention=head("scorer.mention"),
                              antecedent=head("scorer.antecedent"))
    scaffold = None
    if "scaffold.weights" in leaves:
        classes = store.scaffold_classes
        none_class = classes[-1] if classes and classes[-1] == "<none>" else None
        scaffold = L.ScaffoldParams(classes, leaves["scaffold.weights"],
                                    none_class)
    return enc, scoring, scaffold, leaves


LossBuilder = Callable[[m.EncoderParams, m.ScoringParams,
                        L.ScaffoldParams | None], Tensor]


def compute_gradients(store: ParameterStore, build_loss: LossBuilder,
                      config: ModelConfig,
                      ) -> tuple[dict[str, np.ndarray], float]:
    """Reverse-mode gradients of a scalar loss over every named tensor."""
    enc, scoring, scaffold, leaves = bind_parameters(store, config)
    loss = build_loss(enc, scoring, scaffold)
    value = float(loss.value)
    if not np.isfinite(value):
        raise TrainingError(f"loss is not finite: {value}")
    loss.backward()
    grads: dict[str, np.ndarray] = {}
    for name, leaf in leaves.items():
        grad = leaf.grad if leaf.grad is not None \
            else np.zeros_like(store.tensors[name])
        if not np.isfinite(grad).all():
            raise TrainingError(f"non-finite gradient in tensor {name}")
        grads[name] = grad
    return grads, value


@dataclass
class LearningRates:
    """Base rate for encoder tensors, task rate for scorer/scaffold heads."""

    base: float
    task: float

    def rate_for(self, name: str) -> float:
        if name.startswith(TASK_PREFIXES):
            return self.task
        return self.base


@dataclass
class AdamState:
    """First/second moment accumulators for the adaptive-moment update."""

    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(store: ParameterStore, grads: Mapping[str, np.ndarray],
                   rates: LearningRates, state: AdamState) -> ParameterStore:
    """One adaptive-moment update, in place; returns the store."""
    state.t += 1
    for name, grad in grads.items():
        if name not in store.tensors:
            raise TrainingError(f"gradient for unknown tensor {name}")
        if grad.shape != store.tensors[name].shape:
            raise TrainingError(f"gradient shape mismatch for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(grad)
            state.v[name] = np.zeros_like(grad)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * grad
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * grad**2
        m_hat = state.m[name] / (1 - state.beta1**state.t)
        v_hat = state.v[name] / (1 - state.beta2**state.t)
        store.tensors[name] -= rates.rate_for(name) * m_hat / (
            np.sqrt(v_hat) + state.epsilon)
    store.step += 1
    return store


# ---------------------------------------------------------------------------
# Schedule


@dataclass
class Phase:
    """One stretch of training on one corpus with fixed weights and rates."""

    corpus: str
    epochs: int
    weights: L.LossWeights
    base_lr: float = 1e-3
    task_lr: float = 1e-3
    role: str = "target"

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainingError("epochs must be >= 1")
        if self.role not in ("source", "target"):
            raise TrainingError(f"unknown phase role {self.role!r}")


@dataclass
class TrainingSchedule:
    phases: list[Phase]

    def __post_init__(self):
        if not self.phases:
            raise TrainingError("schedule needs at least one phase")


@dataclass
class EpochRecord:
    phase: int
    epoch: int
    cl: float
    rl: float
    sl: float
    total: float
    pruning_misses: int = 0


def effective_weights(phase: Phase,
                      objective: L.ObjectiveConfig) -> L.LossWeights:
    """Source phases train without concept knowledge or the scaffold."""
    if phase.role != "source":
        return phase.weights
    beta1, beta2, _ = phase.weights.beta
    if not objective.source_phase_rl:
        beta2 = 0.0
    alpha_k = {k: 0.0 for k in phase.weights.alpha_k}
    return L.LossWeights(phase.weights.alpha_c, alpha_k, (beta1, beta2, 0.0))


def run_schedule(schedule: TrainingSchedule,
                 corpora: Mapping[str, Sequence[Document]],
                 config: ModelConfig, objective: L.ObjectiveConfig,
                 store: ParameterStore,
                 checkpoint_dir=None,
                 ) -> tuple[ParameterStore, list[EpochRecord]]:
    """Run every phase in order, logging per-epoch loss components.

    Divergence (NaN loss) aborts with a TrainingDiverged carrying the last
    finite epoch's parameters; they are also written to `checkpoint_dir`
    when one is given.
    """
    records: list[EpochRecord] = []
    last_good = store.copy()
    state = AdamState()
    for phase_no, phase in enumerate(schedule.phases, start=1):
        if phase.corpus not in corpora:
            raise TrainingError(f"phase {phase_no}: unknown corpus "
                                f"{phase.corpus!r}")
        docs = list(corpora[phase.corpus])
        weights = effective_weights(phase, objective)
        rates = LearningRates(phase.base_lr, phase.task_lr)
        for epoch in range(1, phase.epochs + 1):
            sums = {"cl": 0.0, "rl": 0.0, "sl": 0.0, "total": 0.0}
            misses = 0
            pending: dict[str, np.ndarray] | None = None
            pending_count = 0
            for doc_no, doc in enumerate(docs):
                rng = np.random.default_rng(
                    [objective.pair_seed, phase_no, epoch, doc_no])
                result: dict = {}

                def build(enc, scoring, scaffold, doc=doc, rng=rng):
                    out = L.document_objective(doc, enc, scoring, scaffold,
                                               weights, config, objective, rng)
                    result["losses"] = out
                    return out.total

                try:
                    grads, total = compute_gradients(store, build, config)
                except (TrainingError, L.LossError) as exc:
                    if checkpoint_dir is not None:
                        path = Path(checkpoint_dir) / "last_good.ckpt"
                        path.parent.mkdir(parents=True, exist_ok=True)
                        last_good.save(path)
                    raise TrainingDiverged(
                        f"phase {phase_no} epoch {epoch} doc {doc.doc_id}: "
                        f"{exc}", last_good, records) from exc

                losses: L.DocumentLosses = result["losses"]
                sums["cl"] += float(losses.cl.value)
                sums["rl"] += float(losses.rl.value)
                sums["sl"] += float(losses.sl.value)
                sums["total"] += total
                misses += losses.pruning_misses

                if pending is None:
                    pending = grads
                else:
                    for name in pending:
                        pending[name] = pending[name] + grads[name]
                pending_count += 1
                if (pending_count >= objective.grad_accumulation
                        or doc_no == len(docs) - 1):
                    optimizer_step(store, pending, rates, state)
                    pending, pending_count = None, 0
            records.append(EpochRecord(phase_no, epoch, sums["cl"], sums["rl"],
                                       sums["sl"], sums["total"], misses))
            last_good = store.copy()
    return store, records


def write_loss_log(records: Sequence[EpochRecord], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        handle.write("phase\tepoch\tcl\trl\tsl\ttotal\tpruning_misses\n")
        for r in records:
            handle.write(f"{r.phase}\t{r.epoch}\t{r.cl!r}\t{r.rl!r}\t{r.sl!r}\t"
                         f"{r.total!r}\t{r.pruning_misses}\n")


# ---------------------------------------------------------------------------
# Finite-difference gradient checking


@dataclass
class GradCheckReport:
    """Max relative error per tensor from central-difference probing."""

    per_tensor: dict[str, float]
    threshold: float
    epsilon: float

    @property
    def max_error(self) -> float:
        return max(self.per_tensor.values()) if self.per_tensor else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.threshold

    def summary(self) -> str:
        lines = [f"gradient check (eps={self.epsilon:g}, "
                 f"threshold={self.threshold:g})"]
        for name in sorted(self.per_tensor):
            err = self.per_tensor[name]
            flag = "ok" if err < self.threshold else "FAIL"
            lines.append(f"  {name:32s} max_rel_err={err:.3e} {flag}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def gradient_check(store: ParameterStore, build_loss: LossBuilder,
                   config: ModelConfig, epsilon: float = 1e-5,
                   threshold: float = 1e-4, coords_per_tensor: int = 20,
                   seed: int = 0) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    Probes at least `coords_per_tensor` seeded coordinates per tensor (all of
    them for small tensors).
    """
    grads, _ = compute_gradients(store, build_loss, config)
    rng = np.random.default_rng(seed)
    probe = store.copy()
    per_tensor: dict[str, float] = {}
    for name in sorted(store.tensors):
        tensor = probe.tensors[name]
        size = tensor.size
        if size == 0:
            per_tensor[name] = 0.0
            continue
        if size <= coords_per_tensor:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=coords_per_tensor, replace=False)
        flat = tensor.reshape(-1)
        worst = 0.0
        for c in coords:
            original = flat[c]
            flat[c] = original + epsilon
            _, hi = _loss_only(probe, build_loss, config)
            flat[c] = original - epsilon
            _, lo = _loss_only(probe, build_loss, config)
            flat[c] = original
            numeric = (hi - lo) / (2 * epsilon)
            analytic = grads[name].reshape(-1)[c]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric),
                                                1e-8)
            worst = max(worst, err)
        per_tensor[name] = worst
    return GradCheckReport(per_tensor, threshold, epsilon)


def _loss_only(store: ParameterStore, build_loss: LossBuilder,
               config: ModelConfig) -> tuple[None, float]:
    enc, scoring, scaffold, _ = bind_parameters(store, config, trainable=False)
    loss = build_loss(enc, scoring, scaffold)
    return None, float(loss.value)
