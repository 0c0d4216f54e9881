"""Skip-gram (negative sampling) token embeddings and average-pooled user vectors."""

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass

import numba
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import SOURCE, TARGET
from .exceptions import ConfigError, DataError
from .geocode import token_for_event

logger = logging.getLogger(__name__)

_NEG_TABLE_SIZE = 1_000_000


@dataclass
class TokenSequence:
    owner: str
    tokens: list
    domain: str = SOURCE


@dataclass
class UserVector:
    user: str
    vec: np.ndarray
    embeddable: bool = True


def build_sequences(events, travel_filter=None):
    """Group events into per-user token sequences, ordered by timestamp.

    Source-domain events whose item fails ``travel_filter`` are dropped; a
    surviving event with a location contributes its geohash-5 token right
    after the item token. Target-domain events contribute item tokens only.
    Source sequences come first, then target sequences, each sorted by user.
    """
    per_user = {SOURCE: defaultdict(list), TARGET: defaultdict(list)}
    for order, e in enumerate(events):
        if e.domain == SOURCE and travel_filter is not None and not travel_filter(e.item):
            continue
        per_user[e.domain][e.user].append((e.timestamp, order, e))

    out = []
    for domain in (SOURCE, TARGET):
        for user in sorted(per_user[domain]):
            tokens = []
            for _, _, e in sorted(per_user[domain][user], key=lambda t: t[:2]):
                tokens.append(e.item)
                if domain == SOURCE and e.location is not None:
                    tokens.append(token_for_event(e.location))
            if tokens:
                out.append(TokenSequence(user, tokens, domain))
    return out


class EmbeddingTable:
    """Token -> vector map. ``vectors`` rows follow ``tokens`` order."""

    def __init__(self, tokens, vectors, counts=None):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(tokens):
            raise DataError("vectors must be a (n_tokens, dim) array")
        if not np.all(np.isfinite(vectors)):
            raise DataError("embedding vectors contain non-finite values")
        self.tokens = list(tokens)
        self.vectors = vectors
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataError("duplicate tokens in embedding table")
        self.counts = dict(counts) if counts is not None else None

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __getitem__(self, token):
        return self.vectors[self.index[token]]

    def get(self, token, default=None):
        i = self.index.get(token)
        return default if i is None else self.vectors[i]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"dim={self.dim} vocab={len(self)}\n")
            for tok, row in zip(self.tokens, self.vectors):
                fh.write(tok + " " + " ".join(repr(float(x)) for x in row) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            try:
                meta = dict(h.split("=", 1) for h in header)
                dim, n = int(meta["dim"]), int(meta["vocab"])
            except (ValueError, KeyError):
                raise DataError(f"{path}: bad embedding header {header}") from None
            tokens, rows = [], []
            for line in fh:
                parts = line.split()
                if len(parts) != dim + 1:
                    raise DataError(f"{path}: row for {parts[:1]} has {len(parts) - 1} values, expected {dim}")
                tokens.append(parts[0])
                rows.append([float(x) for x in parts[1:]])
        if len(tokens) != n:
            raise DataError(f"{path}: header says {n} tokens, found {len(tokens)}")
        return cls(tokens, np.array(rows, dtype=np.float64).reshape(n, dim))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def sgns_batch(center, outputs, labels):
    """Negative-sampling loss and gradients for a batch.

    center: (B, d) input vectors; outputs: (B, m, d) output vectors (the
    context in slot 0, negatives after); labels: (B, m) with 1 for the true
    context and 0 for negatives. Loss per row is
    ``-sum(log sigmoid(+-c.o))``. Returns (loss per row, dL/dcenter, dL/doutputs).
    """
    scores = np.einsum("bd,bmd->bm", center, outputs)
    sign = 2.0 * labels - 1.0
    loss = -_log_sigmoid(sign * scores).sum(axis=1)
    # d/ds of -log sigmoid(sign*s) = sigmoid(s) - label
    coef = 1.0 / (1.0 + np.exp(-scores)) - labels
    d_center = np.einsum("bm,bmd->bd", coef, outputs)
    d_outputs = coef[:, :, None] * center[:, None, :]
    return loss, d_center, d_outputs


def sgns_loss_grad(center, context, negatives):
    """Single (center, context, negatives) triple; thin wrapper over ``sgns_batch``."""
    outputs = np.vstack([np.atleast_2d(context), np.atleast_2d(negatives)])[None]
    labels = np.zeros(outputs.shape[:2])
    labels[0, 0] = 1.0
    loss, dc, do = sgns_batch(np.asarray(center, dtype=np.float64)[None], outputs, labels)
    return float(loss[0]), dc[0], do[0, 0], do[0, 1:]


def _context_pairs(encoded, window):
    """All (center, context) index pairs within ``window`` of each other."""
    if not encoded:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    flat = np.concatenate(encoded)
    seq_id = np.concatenate([np.full(len(s), i) for i, s in enumerate(encoded)])
    centers, contexts = [], []
    for off in range(1, window + 1):
        same = seq_id[:-off] == seq_id[off:]
        left, right = flat[:-off][same], flat[off:][same]
        centers += [left, right]
        contexts += [right, left]
    return np.concatenate(centers), np.concatenate(contexts)


@numba.njit(cache=True)
def _sgd_epoch(w_in, w_out, centers, contexts, negs, lr0, offset, total):
    """One pass of sequential SGD over the pairs; returns the summed pre-update loss.

    Same arithmetic as ``sgns_batch`` applied one pair at a time: outputs are
    updated as soon as their contribution to the center gradient is taken,
    the center after all of them.
    """
    d = w_in.shape[1]
    k = negs.shape[1]
    grad_c = np.empty(d)
    total_loss = 0.0
    for p in range(centers.shape[0]):
        lr = lr0 * max(1e-4, 1.0 - (offset + p) / total)
        c = centers[p]
        grad_c[:] = 0.0
        for j in range(k + 1):
            if j == 0:
                o, label = contexts[p], 1.0
            else:
                o, label = negs[p, j - 1], 0.0
            f = 0.0
            for t in range(d):
                f += w_in[c, t] * w_out[o, t]
            s = f if label == 1.0 else -f
            # -log sigmoid(s), overflow-safe
            total_loss += np.log1p(np.exp(-abs(s))) + max(-s, 0.0)
            g = 1.0 / (1.0 + np.exp(-f)) - label
            for t in range(d):
                grad_c[t] += g * w_out[o, t]
                w_out[o, t] -= lr * g * w_in[c, t]
        for t in range(d):
            w_in[c, t] -= lr * grad_c[t]
    return total_loss


class SkipGramEmbedder(BaseEstimator, TransformerMixin):
    """Skip-gram with negative sampling over token sequences.

    Plain sequential SGD over (center, context) pairs visited in a seeded
    random order, learning rate decaying linearly to ``1e-4 * learning_rate``.
    ``transform`` average-pools each sequence.

    Parameters
    ----------
    dim : int
        Embedding width.
    window : int
        Max distance between center and context token.
    negatives : int
        Negatives per pair, drawn from unigram counts raised to 3/4.
    """

    def __init__(self, dim=32, window=5, negatives=5, epochs=5, learning_rate=0.025,
                 min_count=1, seed=0):
        self.dim = dim
        self.window = window
        self.negatives = negatives
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.min_count = min_count
        self.seed = seed

    def _validate_params(self):
        for name in ("dim", "window", "epochs", "min_count"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.negatives < 0 or self.learning_rate < 0:
            raise ConfigError("negatives and learning_rate must be non-negative")

    def fit(self, sequences, y=None):
        self._validate_params()
        counts = Counter(t for s in sequences for t in s.tokens)
        vocab = sorted(t for t, c in counts.items() if c >= self.min_count)
        if len(vocab) < 2:
            raise ConfigError(f"effective vocabulary has {len(vocab)} token(s); need at least 2")
        index = {t: i for i, t in enumerate(vocab)}
        encoded = [np.array([index[t] for t in s.tokens if t in index], dtype=np.int64)
                   for s in sequences]
        encoded = [e for e in encoded if len(e) >= 2]
        centers, contexts = _context_pairs(encoded, self.window)
        if len(centers) == 0:
            raise ConfigError("corpus yields no (center, context) pairs")

        rng = np.random.default_rng(self.seed)
        n, d = len(vocab), self.dim
        w_in = (rng.random((n, d)) - 0.5) / d
        w_out = np.zeros((n, d))
        freq = np.array([counts[t] for t in vocab], dtype=np.float64) ** 0.75
        cdf = np.cumsum(freq / freq.sum())
        cdf[-1] = 1.0
        # unigram^0.75 lookup table, as in word2vec
        table = np.searchsorted(cdf, (np.arange(_NEG_TABLE_SIZE) + 0.5) / _NEG_TABLE_SIZE)

        n_pairs, k = len(centers), self.negatives
        self.loss_history_ = []
        for epoch in range(self.epochs):
            order = rng.permutation(n_pairs)
            negs = table[rng.integers(0, _NEG_TABLE_SIZE, size=(n_pairs, k))]
            offset = epoch * n_pairs
            loss = _sgd_epoch(w_in, w_out, centers[order], contexts[order], negs,
                              float(self.learning_rate), offset, n_pairs * self.epochs)
            self.loss_history_.append(loss / n_pairs)
            logger.debug("sgns epoch %d loss %.6f", epoch, self.loss_history_[-1])

        self.table_ = EmbeddingTable(vocab, w_in, {t: counts[t] for t in vocab})
        return self

    def transform(self, sequences):
        check_is_fitted(self, "table_")
        return np.vstack([user_vector(s, self.table_).vec for s in sequences]) if sequences \
            else np.empty((0, self.dim))


def train_skipgram(sequences, cfg=None, **kwargs):
    """Fit SGNS embeddings; ``cfg`` is a dict of ``SkipGramEmbedder`` params."""
    params = dict(cfg or {})
    params.update(kwargs)
    return SkipGramEmbedder(**params).fit(sequences).table_


def user_vector(seq, table):
    """Mean of the in-vocabulary token vectors; zero vector if none are known."""
    rows = [table.index[t] for t in seq.tokens if t in table.index]
    if not rows:
        return UserVector(seq.owner, np.zeros(table.dim), embeddable=False)
    return UserVector(seq.owner, table.vectors[rows].mean(axis=0), embeddable=True)
