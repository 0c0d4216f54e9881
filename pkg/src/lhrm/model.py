"""Attention twin-tower scorer.

Each side pools its group with bilinear attention keyed on the target
member (the last, always unmasked row), concatenates the pooled vector
with encoded attributes and runs an MLP tower. The click probability is
the sigmoid of the dot product of the two tower outputs.

Gradients are derived by hand; group member vectors are fixed inputs.
"""

import copy
import hashlib
import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .embedding import user_vector
from .evaluation import RankedList
from .exceptions import ConfigError, DataError, ShapeError, ValidationError
from .relations import user_group_from_candidates

logger = logging.getLogger(__name__)

LOGIT_CLIP = 30.0
PROB_EPS = 1e-12
CHECKPOINT_MAGIC = "lhrm-checkpoint"
CHECKPOINT_VERSION = 1


# --------------------------------------------------------------------------
# parameters

@dataclass
class ModelParams:
    W_user: np.ndarray
    W_item: np.ndarray
    user_mlp: list  # [(weight (in, out), bias (out,)), ...]
    item_mlp: list

    def arrays(self):
        """Every trainable array, in a fixed order (views, not copies)."""
        out = [self.W_user, self.W_item]
        for W, b in self.user_mlp + self.item_mlp:
            out += [W, b]
        return out

    def names(self):
        names = ["W_user", "W_item"]
        for side, layers in (("user_mlp", self.user_mlp), ("item_mlp", self.item_mlp)):
            for i in range(len(layers)):
                names += [f"{side}.{i}.weight", f"{side}.{i}.bias"]
        return names

    def copy(self):
        return copy.deepcopy(self)

    def zeros_like(self):
        return ModelParams(np.zeros_like(self.W_user), np.zeros_like(self.W_item),
                           [(np.zeros_like(W), np.zeros_like(b)) for W, b in self.user_mlp],
                           [(np.zeros_like(W), np.zeros_like(b)) for W, b in self.item_mlp])

    @property
    def user_embed_dim(self):
        return self.W_user.shape[0]

    @property
    def item_embed_dim(self):
        return self.W_item.shape[0]

    @property
    def latent_dim(self):
        return self.user_mlp[-1][0].shape[1]

    def validate(self, n_user_attrs=None, n_item_attrs=None):
        for name, W in (("W_user", self.W_user), ("W_item", self.W_item)):
            if W.ndim != 2 or W.shape[0] != W.shape[1]:
                raise ShapeError(f"{name} must be square, got {W.shape}")
        for side, layers, d, extra in (("user", self.user_mlp, self.user_embed_dim, n_user_attrs),
                                       ("item", self.item_mlp, self.item_embed_dim, n_item_attrs)):
            if not layers:
                raise ShapeError(f"{side} tower has no layers")
            width = layers[0][0].shape[0]
            if extra is not None and width != d + extra:
                raise ShapeError(f"{side} tower input {width} != {d} + {extra}")
            for W, b in layers:
                if W.shape[0] != width or b.shape != (W.shape[1],):
                    raise ShapeError(f"{side} tower layer shapes do not chain")
                width = W.shape[1]
        if self.user_mlp[-1][0].shape[1] != self.item_mlp[-1][0].shape[1]:
            raise ShapeError("user and item towers must end at the same width")
        if not all(np.all(np.isfinite(a)) for a in self.arrays()):
            raise DataError("non-finite parameter values")

    @classmethod
    def initialize(cls, user_embed_dim, item_embed_dim, n_user_attrs, n_item_attrs,
                   hidden=(64, 32), latent_dim=32, seed=0, attention_scale=0.1):
        rng = np.random.default_rng(seed)

        def tower(n_in):
            layers, widths = [], [n_in, *hidden, latent_dim]
            for a, b in zip(widths[:-1], widths[1:]):
                limit = np.sqrt(6.0 / (a + b))
                layers.append((rng.uniform(-limit, limit, (a, b)), np.zeros(b)))
            return layers

        W_user = rng.normal(0.0, attention_scale, (user_embed_dim, user_embed_dim))
        W_item = rng.normal(0.0, attention_scale, (item_embed_dim, item_embed_dim))
        return cls(W_user, W_item, tower(user_embed_dim + n_user_attrs),
                   tower(item_embed_dim + n_item_attrs))


# --------------------------------------------------------------------------
# batched primitives

def _check_group_batch(E, mask, W):
    if E.ndim != 3 or mask.shape != E.shape[:2]:
        raise ShapeError(f"group batch {E.shape} / mask {mask.shape} mismatch")
    if W.shape != (E.shape[2], E.shape[2]):
        raise ShapeError(f"attention matrix {W.shape} does not match member dim {E.shape[2]}")
    if not np.all(mask[:, -1]):
        raise ShapeError("the target (last) group slot must not be padding")


def attention_batch(E, mask, W):
    """Pool each group with target-keyed bilinear attention.

    E: (B, L, d) member vectors, target in the last slot; mask: (B, L) with
    True for real members. Returns pooled vectors (B, d) and weights (B, L);
    padding weights are exactly zero.
    """
    _check_group_batch(E, mask, W)
    keyed = E[:, -1, :] @ W
    scores = np.matmul(E, keyed[:, :, None])[:, :, 0]
    scores = np.where(mask, scores, -np.inf)
    scores = scores - scores.max(axis=1, keepdims=True)
    w = np.where(mask, np.exp(scores), 0.0)
    alpha = w / w.sum(axis=1, keepdims=True)
    pooled = np.matmul(alpha[:, None, :], E)[:, 0, :]
    return pooled, alpha


def attention_backward(E, alpha, d_pooled):
    """Gradient of the pooled output w.r.t. the attention matrix."""
    d_alpha = np.matmul(E, d_pooled[:, :, None])[:, :, 0]
    d_scores = alpha * (d_alpha - (alpha * d_alpha).sum(axis=1, keepdims=True))
    weighted = np.matmul(d_scores[:, None, :], E)[:, 0, :]
    return E[:, -1, :].T @ weighted


def mlp_forward(x, layers):
    """ReLU hidden layers, identity output. Returns output and per-layer cache."""
    cache = []
    h = x
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        cache.append((h, z))
        h = np.maximum(z, 0.0) if i < len(layers) - 1 else z
    return h, cache


def mlp_backward(d_out, layers, cache):
    grads = [None] * len(layers)
    dh = d_out
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        h_in, z = cache[i]
        dz = dh * (z > 0) if i < len(layers) - 1 else dh
        grads[i] = (h_in.T @ dz, dz.sum(axis=0))
        dh = dz @ W.T
    return grads, dh


def sigmoid(z):
    z = np.clip(z, -LOGIT_CLIP, LOGIT_CLIP)
    return 1.0 / (1.0 + np.exp(-z))


def loss(y, y_hat):
    """Logistic loss, probability clamped to [1e-12, 1 - 1e-12] first."""
    p = np.clip(y_hat, PROB_EPS, 1.0 - PROB_EPS)
    out = -y * np.log(p) - (1 - y) * np.log(1 - p)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class Batch:
    user_members: np.ndarray  # (B, L, d_u)
    user_mask: np.ndarray
    item_members: np.ndarray  # (B, L, d_i)
    item_mask: np.ndarray
    user_attrs: np.ndarray  # (B, p_u)
    item_attrs: np.ndarray  # (B, p_i)

    def __len__(self):
        return self.user_members.shape[0]


def user_tower(E, mask, attrs, params):
    pooled, alpha = attention_batch(E, mask, params.W_user)
    s, cache = mlp_forward(np.concatenate([pooled, attrs], axis=1), params.user_mlp)
    return s, (alpha, cache)


def item_tower(E, mask, attrs, params):
    pooled, alpha = attention_batch(E, mask, params.W_item)
    s, cache = mlp_forward(np.concatenate([pooled, attrs], axis=1), params.item_mlp)
    return s, (alpha, cache)


def forward_batch(batch, params):
    """Returns (s_u, s_i, y_hat, cache) for every row of ``batch``."""
    s_u, u_cache = user_tower(batch.user_members, batch.user_mask, batch.user_attrs, params)
    s_i, i_cache = item_tower(batch.item_members, batch.item_mask, batch.item_attrs, params)
    logits = (s_u * s_i).sum(axis=1)
    return s_u, s_i, sigmoid(logits), (logits, u_cache, i_cache)


def backward_batch(batch, params, y, reduce="mean"):
    """Loss and gradient (as a ``ModelParams``) of the summed or mean batch loss.

    The gradient is that of the unclamped logistic loss inside the logit
    clip and zero outside it.
    """
    y = np.asarray(y, dtype=np.float64)
    s_u, s_i, y_hat, (logits, (alpha_u, cache_u), (alpha_i, cache_i)) = forward_batch(batch, params)
    losses = loss(y, y_hat)
    scale = 1.0 / len(y) if reduce == "mean" else 1.0
    d_logit = (y_hat - y) * (np.abs(logits) < LOGIT_CLIP) * scale

    grads_u, dv_u = mlp_backward(d_logit[:, None] * s_i, params.user_mlp, cache_u)
    grads_i, dv_i = mlp_backward(d_logit[:, None] * s_u, params.item_mlp, cache_i)
    d_user = params.user_embed_dim
    d_item = params.item_embed_dim
    dW_user = attention_backward(batch.user_members, alpha_u, dv_u[:, :d_user])
    dW_item = attention_backward(batch.item_members, alpha_i, dv_i[:, :d_item])
    total = float(np.mean(losses)) if reduce == "mean" else float(np.sum(losses))
    return total, ModelParams(dW_user, dW_item, grads_u, grads_i)


# --------------------------------------------------------------------------
# single-sample API

@dataclass
class TrainingSample:
    user_group: object
    item_group: object
    user_attrs: np.ndarray
    item_attrs: np.ndarray
    label: int = 0

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValidationError(f"label must be 0 or 1, got {self.label!r}")


def _as_batch(samples):
    return Batch(np.stack([s.user_group.vectors for s in samples]),
                 np.stack([s.user_group.mask for s in samples]),
                 np.stack([s.item_group.vectors for s in samples]),
                 np.stack([s.item_group.mask for s in samples]),
                 np.stack([np.asarray(s.user_attrs, dtype=np.float64) for s in samples]),
                 np.stack([np.asarray(s.item_attrs, dtype=np.float64) for s in samples]))


def attention(group, W_a):
    """Attention-pooled vector of one group."""
    pooled, _ = attention_batch(group.vectors[None], group.mask[None], np.asarray(W_a))
    return pooled[0]


def attention_weights(group, W_a):
    _, alpha = attention_batch(group.vectors[None], group.mask[None], np.asarray(W_a))
    return alpha[0]


def forward(sample, params):
    s_u, s_i, y_hat, _ = forward_batch(_as_batch([sample]), params)
    return s_u[0], s_i[0], float(y_hat[0])


def backward(sample, params):
    """Gradient of the sample's logistic loss w.r.t. every parameter."""
    _, grads = backward_batch(_as_batch([sample]), params, [sample.label], reduce="sum")
    return grads


def fuse_popularity(y_hat, pop):
    """Popularity-weighted score."""
    if np.any(np.asarray(pop) < 0):
        raise ValidationError(f"popularity must be non-negative, got {pop!r}")
    return y_hat * pop


# --------------------------------------------------------------------------
# sample storage

class SampleSet:
    """Training rows stored as indices into shared vector banks.

    ``user_idx`` / ``item_idx`` are (N, L) with -1 for padding; the banks
    get a trailing zero row that padding indices resolve to.
    """

    def __init__(self, user_bank, user_idx, item_bank, item_idx, user_attrs, item_attrs):
        self.user_bank = np.vstack([np.asarray(user_bank, dtype=np.float64),
                                    np.zeros((1, np.shape(user_bank)[1]))])
        self.item_bank = np.vstack([np.asarray(item_bank, dtype=np.float64),
                                    np.zeros((1, np.shape(item_bank)[1]))])
        self.user_idx = np.asarray(user_idx, dtype=np.int64)
        self.item_idx = np.asarray(item_idx, dtype=np.int64)
        self.user_attrs = np.asarray(user_attrs, dtype=np.float64)
        self.item_attrs = np.asarray(item_attrs, dtype=np.float64)
        n = len(self.user_idx)
        if not (len(self.item_idx) == len(self.user_attrs) == len(self.item_attrs) == n):
            raise ShapeError("sample set components have different lengths")

    def __len__(self):
        return len(self.user_idx)

    def batch(self, sel=slice(None)):
        ui, ii = self.user_idx[sel], self.item_idx[sel]
        return Batch(self.user_bank[ui], ui >= 0, self.item_bank[ii], ii >= 0,
                     self.user_attrs[sel], self.item_attrs[sel])

    @classmethod
    def from_samples(cls, samples):
        b = _as_batch(samples)
        n, lu, du = b.user_members.shape
        _, li, di = b.item_members.shape
        uidx = np.where(b.user_mask, np.arange(n * lu).reshape(n, lu), -1)
        iidx = np.where(b.item_mask, np.arange(n * li).reshape(n, li), -1)
        return cls(b.user_members.reshape(n * lu, du), uidx, b.item_members.reshape(n * li, di),
                   iidx, b.user_attrs, b.item_attrs)


# --------------------------------------------------------------------------
# estimators

class AttributeEncoder(BaseEstimator, TransformerMixin):
    """One-hot categorical fields (frozen vocabulary plus an OOV slot) and
    min-max scaled numeric fields, from a list of dict records."""

    def __init__(self, categorical=(), numeric=()):
        self.categorical = categorical
        self.numeric = numeric

    def fit(self, records, y=None):
        self.vocab_ = {f: sorted({str(r[f]) for r in records}) for f in self.categorical}
        self.ranges_ = {}
        for f in self.numeric:
            vals = [float(r[f]) for r in records]
            self.ranges_[f] = (min(vals), max(vals)) if vals else (0.0, 0.0)
        return self

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "vocab_")
        names = []
        for f in self.categorical:
            names += [f"{f}={v}" for v in self.vocab_[f]] + [f"{f}=<oov>"]
        return np.array(names + list(self.numeric), dtype=object)

    @property
    def width(self):
        return len(self.get_feature_names_out())

    def transform(self, records):
        check_is_fitted(self, "vocab_")
        out = np.zeros((len(records), self.width))
        col = 0
        for f in self.categorical:
            lookup = {v: j for j, v in enumerate(self.vocab_[f])}
            oov = len(lookup)
            for r_i, r in enumerate(records):
                out[r_i, col + lookup.get(str(r[f]), oov)] = 1.0
            col += oov + 1
        for f in self.numeric:
            lo, hi = self.ranges_[f]
            span = hi - lo
            for r_i, r in enumerate(records):
                out[r_i, col] = (float(r[f]) - lo) / span if span > 0 else 0.0
            col += 1
        return out

    def to_dict(self):
        check_is_fitted(self, "vocab_")
        return {"categorical": list(self.categorical), "numeric": list(self.numeric),
                "vocab": self.vocab_, "ranges": {k: list(v) for k, v in self.ranges_.items()}}

    @classmethod
    def from_dict(cls, d):
        enc = cls(tuple(d["categorical"]), tuple(d["numeric"]))
        enc.vocab_ = {k: list(v) for k, v in d["vocab"].items()}
        enc.ranges_ = {k: tuple(v) for k, v in d["ranges"].items()}
        return enc

    def schema_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params.arrays(), grads.arrays(), self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params.arrays(), grads.arrays()):
            p -= self.lr * g


class LHRMScorer(BaseEstimator, ClassifierMixin):
    """Twin-tower click scorer trained with mini-batch logistic loss.

    ``fit`` takes a ``SampleSet`` (or list of ``TrainingSample``) and binary
    labels. With a validation set, the parameters of the epoch with the
    lowest validation loss are kept; otherwise those of the last epoch.

    Parameters
    ----------
    latent_dim : int
        Width of both tower outputs.
    hidden : tuple of int
        Hidden layer widths (ReLU), same for both towers.
    optimizer : {"adam", "sgd"}
    """

    def __init__(self, latent_dim=32, hidden=(64, 32), epochs=10, batch_size=256,
                 learning_rate=1e-3, optimizer="adam", attention_scale=0.1, seed=0):
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.attention_scale = attention_scale
        self.seed = seed

    def _init_params(self, X):
        return ModelParams.initialize(X.user_bank.shape[1], X.item_bank.shape[1],
                                      X.user_attrs.shape[1], X.item_attrs.shape[1],
                                      hidden=tuple(self.hidden), latent_dim=self.latent_dim,
                                      seed=self.seed, attention_scale=self.attention_scale)

    def fit(self, X, y, validation=None, init_params=None):
        if not isinstance(X, SampleSet):
            X = SampleSet.from_samples(X)
        y = np.asarray(y, dtype=np.float64)
        if len(X) == 0 or len(y) != len(X):
            raise DataError("need a non-empty sample set with one label per sample")
        if not np.isin(y, (0.0, 1.0)).all():
            raise DataError("labels must be 0 or 1")
        if len(np.unique(y)) < 2:
            warnings.warn("training labels contain a single class", RuntimeWarning, stacklevel=2)
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

        params = init_params.copy() if init_params is not None else self._init_params(X)
        params.validate(X.user_attrs.shape[1], X.item_attrs.shape[1])
        opt = (_Adam if self.optimizer == "adam" else _SGD)(params, self.learning_rate)
        rng = np.random.default_rng(self.seed)

        if validation is not None:
            Xv, yv = validation
            if not isinstance(Xv, SampleSet):
                Xv = SampleSet.from_samples(Xv)
            yv = np.asarray(yv, dtype=np.float64)

        self.history_ = []
        best, best_loss, self.best_epoch_ = params.copy(), np.inf, 0
        for epoch in range(1, self.epochs + 1):
            order = rng.permutation(len(X))
            total = 0.0
            for start in range(0, len(X), self.batch_size):
                sel = order[start:start + self.batch_size]
                batch_loss, grads = backward_batch(X.batch(sel), params, y[sel])
                opt.step(params, grads)
                total += batch_loss * len(sel)
            train_loss = total / len(X)
            val_loss = _mean_loss(Xv, yv, params) if validation is not None else None
            self.history_.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
            logger.info("epoch %d train_loss=%.6f val_loss=%s", epoch, train_loss,
                        "-" if val_loss is None else f"{val_loss:.6f}")
            # without validation, the latest epoch always wins
            crit = val_loss if val_loss is not None else -epoch
            if crit < best_loss:
                best, best_loss, self.best_epoch_ = params.copy(), crit, epoch
        self.params_ = best
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        if not isinstance(X, SampleSet):
            X = SampleSet.from_samples(X)
        _, _, p, _ = forward_batch(X.batch(), self.params_)
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)


def _mean_loss(X, y, params, chunk=4096):
    total = 0.0
    for s in range(0, len(X), chunk):
        _, _, p, _ = forward_batch(X.batch(slice(s, s + chunk)), params)
        total += float(np.sum(loss(y[s:s + chunk], p)))
    return total / len(X)


def train(samples, cfg=None, labels=None):
    """Fit on ``TrainingSample`` objects; returns the selected ``ModelParams``.

    ``cfg`` holds ``LHRMScorer`` params plus an optional ``validation`` list
    of samples.
    """
    cfg = dict(cfg or {})
    validation = cfg.pop("validation", None)
    if labels is None:
        labels = [s.label for s in samples]
    if validation is not None and not isinstance(validation, tuple):
        validation = (validation, [s.label for s in validation])
    return LHRMScorer(**cfg).fit(samples, labels, validation=validation).params_


# --------------------------------------------------------------------------
# cold start

@dataclass
class CandidateItem:
    item: str
    group: object  # ItemGroup
    attrs: np.ndarray
    popularity: float


@dataclass
class NewUser:
    user: str
    sequence: object  # TokenSequence (source domain)
    attrs: np.ndarray


def item_latents(catalog, params, chunk=2048):
    """Item tower outputs for every catalog entry, (n_items, latent_dim)."""
    out = []
    for s in range(0, len(catalog), chunk):
        part = catalog[s:s + chunk]
        E = np.stack([c.group.vectors for c in part])
        mask = np.stack([c.group.mask for c in part])
        attrs = np.stack([np.asarray(c.attrs, dtype=np.float64) for c in part])
        s_i, _ = item_tower(E, mask, attrs, params)
        out.append(s_i)
    return np.vstack(out) if out else np.empty((0, params.latent_dim))


def _rank(user, items, scores, k, fallback=False):
    items = list(items)
    order = np.lexsort((np.argsort(np.argsort(np.array(items, dtype=object))), -scores))[:k]
    return RankedList(user, [items[i] for i in order], [float(scores[i]) for i in order],
                      fallback=fallback)


def popularity_ranking(user, catalog, k):
    pops = np.array([c.popularity for c in catalog], dtype=np.float64)
    return _rank(user, [c.item for c in catalog], pops, k, fallback=True)


def cold_start_recommend(new_user, catalog, params, table, cluster_model, user_vectors, k,
                         group_len=10, latents=None):
    """Top-k catalog items for a user with no target-domain history.

    The user's pooled source-domain vector picks the nearest cluster; its
    members form the user group. Each item is scored by
    ``sigmoid(s_user . s_item) * popularity``; ties break by item ID. A user
    with no in-vocabulary tokens gets the popularity ranking, flagged as a
    fallback.
    """
    uv = user_vector(new_user.sequence, table)
    if not uv.embeddable:
        return popularity_ranking(new_user.user, catalog, k)
    cluster = cluster_model.predict(uv.vec)
    group = user_group_from_candidates(new_user.user, uv.vec, cluster_model.members(cluster),
                                       user_vectors, group_len)
    attrs = np.asarray(new_user.attrs, dtype=np.float64)[None]
    s_u, _ = user_tower(group.vectors[None], group.mask[None], attrs, params)
    if latents is None:
        latents = item_latents(catalog, params)
    y_hat = sigmoid(latents @ s_u[0])
    pops = np.array([c.popularity for c in catalog], dtype=np.float64)
    return _rank(new_user.user, [c.item for c in catalog], fuse_popularity(y_hat, pops), k)


# --------------------------------------------------------------------------
# checkpoints

def _write_matrix(fh, name, arr):
    arr = np.atleast_2d(arr)
    fh.write(f"matrix {name} {arr.shape[0]} {arr.shape[1]}\n")
    for row in arr:
        fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def save_checkpoint(path, params, config=None, schema=None):
    """Versioned text checkpoint; floats use shortest round-trip repr."""
    config = config or {}
    schema = schema or {}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n")
        fh.write(f"dims user_embed={params.user_embed_dim} item_embed={params.item_embed_dim} "
                 f"user_layers={len(params.user_mlp)} item_layers={len(params.item_mlp)} "
                 f"latent={params.latent_dim}\n")
        fh.write("schema " + " ".join(f"{k}={schema[k]}" for k in sorted(schema)) + "\n")
        fh.write("config " + " ".join(f"{k}={config[k]}" for k in sorted(config)) + "\n")
        for name, arr in zip(params.names(), params.arrays()):
            _write_matrix(fh, name, arr)
        fh.write("end\n")


def _kv(tokens):
    return dict(t.split("=", 1) for t in tokens)


def load_checkpoint(path):
    """Returns ``(params, meta)`` where meta has ``schema`` and ``config`` dicts."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0] != f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}":
        raise DataError(f"{path}: not a v{CHECKPOINT_VERSION} checkpoint")
    try:
        dims = _kv(lines[1].split()[1:])
        schema = _kv(lines[2].split()[1:])
        config = _kv(lines[3].split()[1:])
        pos = 4
        arrays = {}
        while lines[pos] != "end":
            _, name, r, c = lines[pos].split()
            r, c = int(r), int(c)
            rows = [[float(x) for x in lines[pos + 1 + i].split()] for i in range(r)]
            arrays[name] = np.array(rows, dtype=np.float64).reshape(r, c)
            pos += r + 1
    except (IndexError, ValueError) as exc:
        raise DataError(f"{path}: malformed checkpoint ({exc})") from exc

    def layers(side, n):
        return [(arrays[f"{side}.{i}.weight"], arrays[f"{side}.{i}.bias"].reshape(-1))
                for i in range(n)]

    try:
        params = ModelParams(arrays["W_user"], arrays["W_item"],
                             layers("user_mlp", int(dims["user_layers"])),
                             layers("item_mlp", int(dims["item_layers"])))
    except KeyError as exc:
        raise DataError(f"{path}: checkpoint missing {exc.args[0]}") from None
    params.validate()
    return params, {"schema": schema, "config": config, "dims": dims}
