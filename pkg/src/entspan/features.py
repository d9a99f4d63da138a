"""Hashed feature extraction for the linear emission scorer.

Per-token templates: word identity, lowercased word, prefixes and suffixes
of length 1-3, word shape, presence in the attached embedding table, and
optionally the leading embedding components as real-valued features. Each
(feature, label) pair is hashed into a fixed 2**hash_bits weight space.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .corpus import EmbeddingTable

# 64-bit golden-ratio constant; label index y addresses slot (base + y*MIX).
_MIX = 0x9E3779B97F4A7C15
_M64 = (1 << 64) - 1


def stable_hash(s: str) -> int:
    """Process-independent 64-bit hash (python's str hash is salted)."""
    return int.from_bytes(hashlib.blake2b(s.encode("utf-8"), digest_size=8).digest(), "little")


def word_shape(token: str) -> str:
    return "".join(
        "X" if c.isupper() else "x" if c.islower() else "d" if c.isdigit() else c
        for c in token
    )


@dataclass(frozen=True)
class FeatureConfig:
    hash_bits: int = 20
    embedding_components: int = 5
    use_embedding_components: bool = True


@dataclass
class SequenceFeatures:
    """Flattened per-position feature hashes for one sequence.

    bases[k] is the 64-bit hash of the k-th feature, values[k] its real
    value (1.0 for indicators), and offsets[t] the index where position t's
    features begin in the flat arrays.
    """

    bases: np.ndarray
    values: np.ndarray
    offsets: np.ndarray
    length: int


class Featurizer:
    """Extracts and caches hashed token features.

    Token features depend only on the surface string, so the cache is keyed
    by token and shared across all sequences.
    """

    def __init__(self, config: FeatureConfig, embeddings: EmbeddingTable | None = None):
        self.config = config
        self.embeddings = embeddings
        self._token_cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def _token_features(self, token: str) -> tuple[np.ndarray, np.ndarray]:
        cached = self._token_cache.get(token)
        if cached is not None:
            return cached
        feats = [f"w={token}", f"lw={token.lower()}"]
        for n in (1, 2, 3):
            if len(token) >= n:
                feats.append(f"p{n}={token[:n]}")
                feats.append(f"s{n}={token[-n:]}")
        feats.append(f"sh={word_shape(token)}")
        values = [1.0] * len(feats)
        if self.embeddings is not None and token in self.embeddings:
            feats.append("inemb")
            values.append(1.0)
            if self.config.use_embedding_components:
                vec = self.embeddings[token]
                k = min(self.config.embedding_components, len(vec))
                for i in range(k):
                    feats.append(f"e{i}")
                    values.append(float(vec[i]))
        bases = np.array([stable_hash(f) for f in feats], dtype=np.uint64)
        out = (bases, np.array(values, dtype=np.float64))
        self._token_cache[token] = out
        return out

    def featurize(self, tokens: list[str]) -> SequenceFeatures:
        per_tok = [self._token_features(t) for t in tokens]
        offsets = np.zeros(len(tokens), dtype=np.int64)
        total = 0
        for t, (b, _) in enumerate(per_tok):
            offsets[t] = total
            total += len(b)
        bases = np.concatenate([b for b, _ in per_tok])
        values = np.concatenate([v for _, v in per_tok])
        return SequenceFeatures(bases=bases, values=values, offsets=offsets, length=len(tokens))


class LinearEmissionScorer:
    """Featurized linear emission model over a hashed weight vector.

    Any object with the same emissions / gradient_updates / weights surface
    can stand in as the emission scorer of a CRF model.
    """

    def __init__(
        self,
        num_labels: int,
        config: FeatureConfig | None = None,
        embeddings: EmbeddingTable | None = None,
        weights: np.ndarray | None = None,
    ):
        self.config = config or FeatureConfig()
        self.num_labels = num_labels
        self.featurizer = Featurizer(self.config, embeddings)
        size = 1 << self.config.hash_bits
        if weights is None:
            weights = np.zeros(size, dtype=np.float64)
        if len(weights) != size:
            raise ValueError(f"weight vector length {len(weights)} != 2**{self.config.hash_bits}")
        self.weights = weights
        mask = np.uint64(size - 1)
        self._label_mix = (np.arange(num_labels, dtype=np.uint64) * np.uint64(_MIX)) & np.uint64(_M64)
        self._mask = mask

    def indices(self, feats: SequenceFeatures) -> np.ndarray:
        """(K, L) weight indices for every feature/label pair."""
        return ((feats.bases[:, None] + self._label_mix[None, :]) & self._mask).astype(np.int64)

    def emissions(self, feats: SequenceFeatures) -> np.ndarray:
        """(T, L) emission log-potentials."""
        idx = self.indices(feats)
        contrib = self.weights[idx] * feats.values[:, None]
        return np.add.reduceat(contrib, feats.offsets)

    def gradient_updates(
        self, feats: SequenceFeatures, coef: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Sparse weight gradient for per-position/label coefficients.

        coef is (T, L); the loss gradient w.r.t. weight w[i] is the sum over
        feature/label pairs hashing to i of coef[t, y] * value. Returns flat
        (indices, values); duplicate indices are accumulated by the caller.
        """
        idx = self.indices(feats)
        pos = np.repeat(np.arange(feats.length), np.diff(np.append(feats.offsets, len(feats.bases))))
        vals = feats.values[:, None] * coef[pos]
        return idx.ravel(), vals.ravel()

    def copy(self) -> "LinearEmissionScorer":
        clone = LinearEmissionScorer(
            self.num_labels, self.config, self.featurizer.embeddings, self.weights.copy()
        )
        clone.featurizer = self.featurizer  # token cache is read-shared
        return clone
