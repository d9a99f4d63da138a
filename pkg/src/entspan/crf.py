"""Linear-chain CRF: exact inference, full and partial likelihood, SGD training.

Potentials factor as emission(t, y) + transition(y_prev, y) in log space.
All inference runs in log space with log-sum-exp. The partial likelihood
marginalizes over every label sequence consistent with a per-position
allowed-label constraint; its loss is log Z - log Z_constrained.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .corpus import EmbeddingTable, LabeledSequence
from .features import FeatureConfig, LinearEmissionScorer, SequenceFeatures
from .labels import LabelScheme

_NEG = -1e4  # finite stand-in for -inf when hard-masking invalid transitions


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss is encountered during SGD."""


class AnnotationConflict(ValueError):
    """Two annotations constrain the same position to different labels."""


@dataclass
class PotentialTable:
    """Log-potentials for one sequence: (T, L) emissions, (L, L) transitions."""

    emissions: np.ndarray
    transitions: np.ndarray

    @property
    def length(self) -> int:
        return self.emissions.shape[0]

    @property
    def num_labels(self) -> int:
        return self.emissions.shape[1]


@dataclass
class Marginals:
    """Token and pairwise label marginals plus the log partition."""

    token_marginals: np.ndarray  # (T, L)
    pairwise_marginals: np.ndarray  # (T-1, L, L)
    log_z: float


@dataclass(frozen=True)
class AnnotatedSpan:
    """Provenance of one annotation: [start, end) typed or not-an-entity."""

    start: int
    end: int
    entity_type: str | None  # None means explicitly not an entity

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError(f"empty span [{self.start}, {self.end})")


@dataclass
class PartialLabeling:
    """Per-token allowed-label sets; an all-True row means unconstrained."""

    allowed: np.ndarray  # (T, L) bool
    spans: list[AnnotatedSpan] = field(default_factory=list)

    @classmethod
    def unconstrained(cls, length: int, num_labels: int) -> "PartialLabeling":
        return cls(allowed=np.ones((length, num_labels), dtype=bool))

    @classmethod
    def from_labels(cls, labels: list[int], num_labels: int) -> "PartialLabeling":
        allowed = np.zeros((len(labels), num_labels), dtype=bool)
        allowed[np.arange(len(labels)), labels] = True
        return cls(allowed=allowed)

    def validate(self) -> None:
        if not self.allowed.any(axis=1).all():
            bad = int(np.flatnonzero(~self.allowed.any(axis=1))[0])
            raise ValueError(f"empty allowed set at position {bad}")

    def is_constrained(self, pos: int) -> bool:
        return not self.allowed[pos].all()

    def constrained_positions(self) -> np.ndarray:
        return np.flatnonzero(~self.allowed.all(axis=1))

    def annotate_span(self, span: AnnotatedSpan, scheme: LabelScheme) -> int:
        """Apply the constraint-induction rule for one annotated span.

        An entity span (i, j, X) pins position i to {B-X} and i+1..j-1 to
        {I-X}; a not-an-entity span pins each position to {O}. Constraints
        only accumulate: re-pinning a position to the same label is a no-op,
        pinning it to a different one raises AnnotationConflict naming both
        annotations. Returns the number of newly constrained positions.
        """
        if span.start < 0 or span.end > len(self.allowed):
            raise ValueError(f"span [{span.start}, {span.end}) outside sequence of length {len(self.allowed)}")
        wanted: list[int] = []
        for pos in range(span.start, span.end):
            if span.entity_type is None:
                wanted.append(scheme.outside_index)
            elif pos == span.start:
                wanted.append(scheme.begin_index(span.entity_type))
            else:
                wanted.append(scheme.inside_index(span.entity_type))
        new_positions = 0
        for pos, label in zip(range(span.start, span.end), wanted):
            row = self.allowed[pos]
            if row.all():
                new_positions += 1
                continue
            if not (row.sum() == 1 and row[label]):
                prior = next(
                    (s for s in self.spans if s.start <= pos < s.end),
                    None,
                )
                raise AnnotationConflict(
                    f"position {pos} already constrained by {prior} "
                    f"conflicting with {span}"
                )
        for pos, label in zip(range(span.start, span.end), wanted):
            self.allowed[pos, :] = False
            self.allowed[pos, label] = True
        self.spans.append(span)
        return new_positions

    def copy(self) -> "PartialLabeling":
        return PartialLabeling(allowed=self.allowed.copy(), spans=list(self.spans))


def _masked_emissions(pot: PotentialTable, constraints: PartialLabeling | None) -> np.ndarray:
    if constraints is None:
        return pot.emissions
    constraints.validate()
    out = pot.emissions.copy()
    out[~constraints.allowed] = -np.inf
    return out


def log_partition(pot: PotentialTable, constraints: PartialLabeling | None = None) -> float:
    """Forward-pass log Z of the (optionally constrained) distribution."""
    emit = _masked_emissions(pot, constraints)
    alpha = emit[0].copy()
    for t in range(1, pot.length):
        alpha = emit[t] + logsumexp(alpha[:, None] + pot.transitions, axis=0)
    return float(logsumexp(alpha))


def forward_backward(
    pot: PotentialTable, constraints: PartialLabeling | None = None
) -> Marginals:
    """Exact token and pairwise marginals with log Z, in log space.

    With constraints, marginals are those of the distribution restricted to
    label sequences honoring every allowed set.
    """
    emit = _masked_emissions(pot, constraints)
    T, L = emit.shape
    trans = pot.transitions

    alpha = np.empty((T, L))
    alpha[0] = emit[0]
    for t in range(1, T):
        alpha[t] = emit[t] + logsumexp(alpha[t - 1][:, None] + trans, axis=0)
    log_z = float(logsumexp(alpha[-1]))

    beta = np.empty((T, L))
    beta[-1] = 0.0
    for t in range(T - 2, -1, -1):
        beta[t] = logsumexp(trans + (emit[t + 1] + beta[t + 1])[None, :], axis=1)

    token = np.exp(alpha + beta - log_z)
    pairwise = np.empty((max(T - 1, 0), L, L))
    for t in range(T - 1):
        pairwise[t] = np.exp(
            alpha[t][:, None] + trans + (emit[t + 1] + beta[t + 1])[None, :] - log_z
        )
    return Marginals(token_marginals=token, pairwise_marginals=pairwise, log_z=log_z)


def viterbi(pot: PotentialTable) -> tuple[list[int], float]:
    """Argmax label sequence and its unnormalized log score.

    Ties break toward the lower label index at every step.
    """
    T, L = pot.emissions.shape
    trellis = pot.emissions[0].copy()
    backptr = np.zeros((T, L), dtype=np.int64)
    for t in range(1, T):
        scores = trellis[:, None] + pot.transitions
        backptr[t] = np.argmax(scores, axis=0)
        trellis = pot.emissions[t] + np.max(scores, axis=0)
    best = int(np.argmax(trellis))
    path = [best]
    for t in range(T - 1, 0, -1):
        path.append(int(backptr[t][path[-1]]))
    path.reverse()
    return path, float(np.max(trellis))


def path_score(pot: PotentialTable, labels: list[int]) -> float:
    emit = pot.emissions[np.arange(len(labels)), labels].sum()
    trans = pot.transitions[labels[:-1], labels[1:]].sum() if len(labels) > 1 else 0.0
    return float(emit + trans)


# BIO2-invalid transition mask: O -> I-X and B-X/I-X -> I-Y are disallowed.
def _invalid_transition_mask(scheme: LabelScheme) -> np.ndarray:
    L = scheme.num_labels
    bad = np.zeros((L, L), dtype=bool)
    for prev in range(L):
        for cur in range(L):
            if scheme.is_inside(cur) and scheme.type_of(prev) != scheme.type_of(cur):
                bad[prev, cur] = True
    return bad


@dataclass
class CrfModel:
    """Label scheme, transition weights, and a pluggable emission scorer."""

    scheme: LabelScheme
    emission_scorer: LinearEmissionScorer
    transitions: np.ndarray  # (L, L)
    mask_invalid: bool = False

    @classmethod
    def create(
        cls,
        scheme: LabelScheme,
        feature_config: FeatureConfig | None = None,
        embeddings: EmbeddingTable | None = None,
        mask_invalid: bool = False,
    ) -> "CrfModel":
        scorer = LinearEmissionScorer(scheme.num_labels, feature_config, embeddings)
        return cls(
            scheme=scheme,
            emission_scorer=scorer,
            transitions=np.zeros((scheme.num_labels, scheme.num_labels)),
            mask_invalid=mask_invalid,
        )

    @property
    def num_parameters(self) -> int:
        return len(self.emission_scorer.weights) + self.transitions.size

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([self.emission_scorer.weights, self.transitions.ravel()])

    def set_parameter_vector(self, vec: np.ndarray) -> None:
        n = len(self.emission_scorer.weights)
        self.emission_scorer.weights[:] = vec[:n]
        self.transitions[:] = vec[n:].reshape(self.transitions.shape)

    def featurize(self, seq: LabeledSequence) -> SequenceFeatures:
        return self.emission_scorer.featurizer.featurize(seq.tokens)

    def copy(self) -> "CrfModel":
        return replace(
            self, emission_scorer=self.emission_scorer.copy(), transitions=self.transitions.copy()
        )


def score_potentials(model: CrfModel, seq: LabeledSequence) -> PotentialTable:
    """Deterministic log-potential table for one sequence."""
    feats = model.featurize(seq)
    emissions = model.emission_scorer.emissions(feats)
    transitions = model.transitions
    if model.mask_invalid:
        transitions = transitions.copy()
        transitions[_invalid_transition_mask(model.scheme)] = _NEG
        emissions = emissions.copy()
        for idx in model.scheme.inside_indices:
            emissions[0, idx] = _NEG
    return PotentialTable(emissions=emissions, transitions=transitions)


@dataclass
class _SparseGrad:
    """Per-sequence gradient: sparse over emission weights, dense transitions."""

    emission_indices: np.ndarray
    emission_values: np.ndarray
    transition_grad: np.ndarray

    def to_vector(self, model: CrfModel) -> np.ndarray:
        out = np.zeros(model.num_parameters)
        np.add.at(out, self.emission_indices, self.emission_values)
        out[len(model.emission_scorer.weights):] = self.transition_grad.ravel()
        return out

    def apply(self, model: CrfModel, lr: float) -> None:
        np.subtract.at(model.emission_scorer.weights, self.emission_indices, lr * self.emission_values)
        model.transitions -= lr * self.transition_grad


def _full_grad(
    model: CrfModel, seq: LabeledSequence, labels: list[int]
) -> tuple[float, _SparseGrad]:
    if len(labels) != len(seq):
        raise ValueError(f"{len(labels)} labels for sequence of length {len(seq)}")
    feats = model.featurize(seq)
    pot = score_potentials(model, seq)
    marg = forward_backward(pot)
    loss = marg.log_z - path_score(pot, labels)

    coef = marg.token_marginals.copy()
    coef[np.arange(len(labels)), labels] -= 1.0
    idx, vals = model.emission_scorer.gradient_updates(feats, coef)

    trans_grad = marg.pairwise_marginals.sum(axis=0)
    np.subtract.at(trans_grad, (labels[:-1], labels[1:]), 1.0)
    return loss, _SparseGrad(idx, vals, trans_grad)


def _partial_grad(
    model: CrfModel, seq: LabeledSequence, partial: PartialLabeling
) -> tuple[float, _SparseGrad]:
    feats = model.featurize(seq)
    pot = score_potentials(model, seq)
    marg_free = forward_backward(pot)
    marg_con = forward_backward(pot, partial)
    loss = marg_free.log_z - marg_con.log_z

    coef = marg_free.token_marginals - marg_con.token_marginals
    idx, vals = model.emission_scorer.gradient_updates(feats, coef)
    trans_grad = (marg_free.pairwise_marginals - marg_con.pairwise_marginals).sum(axis=0)
    return loss, _SparseGrad(idx, vals, trans_grad)


def loss_and_grad_full(
    model: CrfModel, seq: LabeledSequence, labels: list[int]
) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of a fully labeled sequence and its gradient.

    The gradient is expected feature counts under the model minus empirical
    counts, laid out as model.parameter_vector().
    """
    loss, grad = _full_grad(model, seq, labels)
    return loss, grad.to_vector(model)


def loss_and_grad_partial(
    model: CrfModel, seq: LabeledSequence, partial: PartialLabeling
) -> tuple[float, np.ndarray]:
    """Marginalized negative log-likelihood over all consistent labelings.

    loss = log Z - log Z_constrained; the gradient is the expectation gap
    between the unconstrained and constrained distributions.
    """
    loss, grad = _partial_grad(model, seq, partial)
    return loss, grad.to_vector(model)


TrainItem = tuple[LabeledSequence, "list[int] | PartialLabeling"]


@dataclass
class TrainConfig:
    learning_rate: float = 0.015
    epochs: int = 30
    seed: int = 0
    shuffle: bool = True


@dataclass
class TrainResult:
    model: CrfModel
    epoch_losses: list[float]


def train(model: CrfModel, data: list[TrainItem], config: TrainConfig) -> TrainResult:
    """Shuffled SGD over full or partial labelings; deterministic given seed."""
    if not data:
        raise ValueError("empty training data")
    out = model.copy()
    rng = np.random.default_rng(config.seed)
    losses: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(len(data)) if config.shuffle else np.arange(len(data))
        total = 0.0
        for i in order:
            seq, target = data[i]
            if isinstance(target, PartialLabeling):
                loss, grad = _partial_grad(out, seq, target)
            else:
                loss, grad = _full_grad(out, seq, target)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss!r} on sequence {seq.source_id!r}; "
                    f"lr={config.learning_rate}"
                )
            grad.apply(out, config.learning_rate)
            total += loss
        losses.append(total / len(data))
    return TrainResult(model=out, epoch_losses=losses)


SNAPSHOT_VERSION = 1


def save_model(model: CrfModel, path) -> None:
    """Versioned snapshot: scheme, feature config, weights, transitions."""
    meta = {
        "version": SNAPSHOT_VERSION,
        "entity_types": list(model.scheme.entity_types),
        "feature_config": {
            "hash_bits": model.emission_scorer.config.hash_bits,
            "embedding_components": model.emission_scorer.config.embedding_components,
            "use_embedding_components": model.emission_scorer.config.use_embedding_components,
        },
        "mask_invalid": model.mask_invalid,
    }
    np.savez(
        path,
        meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
        weights=model.emission_scorer.weights,
        transitions=model.transitions,
    )


def load_model(path, embeddings: EmbeddingTable | None = None) -> CrfModel:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported model snapshot version {meta.get('version')!r}")
        scheme = LabelScheme(tuple(meta["entity_types"]))
        config = FeatureConfig(**meta["feature_config"])
        scorer = LinearEmissionScorer(
            scheme.num_labels, config, embeddings, data["weights"].copy()
        )
        return CrfModel(
            scheme=scheme,
            emission_scorer=scorer,
            transitions=data["transitions"].copy(),
            mask_invalid=meta["mask_invalid"],
        )
