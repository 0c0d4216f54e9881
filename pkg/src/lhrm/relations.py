"""User groups (k-means over pooled user vectors) and topic-filtered item groups."""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigError, DataError, LookupFailure

DEFAULT_GROUP_LEN = 10
DEFAULT_N_RECALL = 20


def _sq_distances(X, C, chunk=2048):
    # direct differences rather than the |x|^2-2xc+|c|^2 expansion, so ties resolve exactly
    out = np.empty((X.shape[0], C.shape[0]))
    for s in range(0, X.shape[0], chunk):
        diff = X[s:s + chunk, None, :] - C[None, :, :]
        out[s:s + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _kmeans_pp(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    closest = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        # k <= distinct points guarantees total > 0 here
        r = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(closest), r, side="right"))
        idx = min(idx, n - 1)
        while closest[idx] == 0.0:
            idx = (idx + 1) % n
        centers.append(X[idx])
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


class KMeans(BaseEstimator, ClusterMixin):
    """Lloyd's algorithm with k-means++ seeding.

    Stops after ``max_iter`` iterations or once assignments stop changing.
    An emptied cluster keeps its previous centroid. ``wcss_history_`` holds
    the within-cluster sum of squares after the seeding assignment and after
    every iteration.
    """

    def __init__(self, n_clusters=50, max_iter=100, seed=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        k = int(self.n_clusters)
        if k < 1 or int(self.max_iter) < 1:
            raise ConfigError("n_clusters and max_iter must be >= 1")
        n_distinct = np.unique(X, axis=0).shape[0]
        if k > n_distinct:
            raise ConfigError(f"k={k} exceeds the number of distinct vectors ({n_distinct})")

        rng = np.random.default_rng(self.seed)
        centers = _kmeans_pp(X, k, rng)
        d2 = _sq_distances(X, centers)
        labels = d2.argmin(axis=1)
        history = [float(d2[np.arange(len(X)), labels].sum())]
        n_iter = 0
        for n_iter in range(1, int(self.max_iter) + 1):
            for c in range(k):
                members = labels == c
                if members.any():
                    centers[c] = X[members].mean(axis=0)
            d2 = _sq_distances(X, centers)
            new_labels = d2.argmin(axis=1)
            history.append(float(d2[np.arange(len(X)), new_labels].sum()))
            stable = np.array_equal(new_labels, labels)
            labels = new_labels
            if stable:
                break

        self.cluster_centers_ = centers
        self.labels_ = labels
        self.inertia_ = history[-1]
        self.wcss_history_ = history
        self.n_iter_ = n_iter
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return _sq_distances(X, self.cluster_centers_).argmin(axis=1)


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignment: dict
    wcss_history: list = field(default_factory=list)

    def __post_init__(self):
        self._members = None

    def members(self, cluster):
        if self._members is None:
            groups = {c: [] for c in range(self.k)}
            for user in sorted(self.assignment):
                groups[self.assignment[user]].append(user)
            self._members = groups
        return self._members[cluster]

    def predict(self, vec):
        vec = np.asarray(vec, dtype=np.float64)[None, :]
        return int(_sq_distances(vec, self.centroids).argmin(axis=1)[0])

    def save(self, path):
        k, d = self.centroids.shape
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"k={k} dim={d} users={len(self.assignment)}\n")
            for row in self.centroids:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")
            for user in sorted(self.assignment):
                fh.write(f"{user}\t{self.assignment[user]}\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            meta = dict(h.split("=", 1) for h in fh.readline().split())
            k, d, n = int(meta["k"]), int(meta["dim"]), int(meta["users"])
            centroids = np.array([[float(x) for x in fh.readline().split()] for _ in range(k)])
            assignment = {}
            for line in fh:
                user, idx = line.rstrip("\n").split("\t")
                assignment[user] = int(idx)
        if centroids.shape != (k, d) or len(assignment) != n:
            raise DataError(f"{path}: cluster file is truncated or malformed")
        return cls(k, centroids, assignment)


def kmeans(vectors, k, max_iters=100, seed=0):
    """Cluster ``UserVector`` objects; returns a ``ClusterModel`` keyed by user."""
    users = [v.user for v in vectors]
    X = np.vstack([v.vec for v in vectors]) if vectors else np.empty((0, 1))
    if len(users) == 0:
        raise ConfigError("no vectors to cluster")
    est = KMeans(n_clusters=k, max_iter=max_iters, seed=seed).fit(X)
    return ClusterModel(k, est.cluster_centers_, dict(zip(users, est.labels_.tolist())),
                        est.wcss_history_)


@dataclass
class Group:
    """Ordered group of members, target last, front-padded with zero rows.

    ``vectors`` has shape (L, d); ``mask`` marks non-padding rows.
    """

    target: str
    members: list
    vectors: np.ndarray
    mask: np.ndarray

    @property
    def pad_count(self):
        return int((~self.mask).sum())

    @property
    def max_len(self):
        return len(self.mask)

    def to_record(self):
        return f"{self.target}\t{','.join(self.members)}\t{self.pad_count}"


class UserGroup(Group):
    pass


class ItemGroup(Group):
    pass


def _assemble(cls, target, members, lookup, L, dim):
    vecs = np.zeros((L, dim))
    mask = np.zeros(L, dtype=bool)
    pad = L - len(members)
    for j, m in enumerate(members):
        vecs[pad + j] = lookup(m)
    mask[pad:] = True
    return cls(target, list(members), vecs, mask)


def _nearest_friends(target_vec, candidates, vectors, n):
    if n <= 0 or not candidates:
        return []
    cand = sorted(candidates)
    X = np.vstack([vectors[c] for c in cand])
    diff = X - target_vec
    dist = np.einsum("ij,ij->i", diff, diff)
    order = np.lexsort((np.arange(len(cand)), dist))
    return [cand[i] for i in order[:n]]


def build_user_group(target, model, vectors, L=DEFAULT_GROUP_LEN, seed=None):
    """Target's cluster-mates nearest to it (up to L-1), then the target.

    ``seed`` is accepted for interface symmetry; selection is deterministic.
    """
    if target not in model.assignment:
        raise LookupFailure(f"user {target!r} is not assigned in the cluster model")
    if target not in vectors:
        raise LookupFailure(f"no vector for user {target!r}")
    cluster = model.assignment[target]
    friends = [u for u in model.members(cluster) if u != target]
    return user_group_from_candidates(target, vectors[target], friends, vectors, L)


def user_group_from_candidates(target, target_vec, candidates, vectors, L=DEFAULT_GROUP_LEN):
    """Group for a target (possibly not in any cluster model) over explicit candidates."""
    if L < 1:
        raise ConfigError("group length must be >= 1")
    target_vec = np.asarray(target_vec, dtype=np.float64)
    friends = _nearest_friends(target_vec, [c for c in candidates if c != target], vectors, L - 1)
    lookup = lambda u: target_vec if u == target else vectors[u]  # noqa: E731
    return _assemble(UserGroup, target, friends + [target], lookup, L, len(target_vec))


class _CosineIndex:
    def __init__(self, table):
        norms = np.linalg.norm(table.vectors, axis=1, keepdims=True)
        self.unit = np.divide(table.vectors, norms, out=np.zeros_like(table.vectors), where=norms > 0)
        self.id_rank = np.argsort(np.argsort(np.array(table.tokens, dtype=object)))
        self.recalled = {}


def _cosine_index(table):
    idx = getattr(table, "_cosine_index", None)
    if idx is None:
        idx = _CosineIndex(table)
        table._cosine_index = idx
    return idx


def cosine_to(table, item):
    """Cosine similarity of ``item`` to every token of ``table`` (table order)."""
    idx = _cosine_index(table)
    return idx.unit @ idx.unit[table.index[item]]


def i2i_recall(target_item, table, n=DEFAULT_N_RECALL):
    """The ``n`` items most cosine-similar to ``target_item``, excluding itself."""
    if target_item not in table:
        raise LookupFailure(f"item {target_item!r} not in embedding table")
    if n <= 0:
        return []
    idx = _cosine_index(table)
    key = (target_item, n)
    if key not in idx.recalled:
        sims = cosine_to(table, target_item)
        self_row = table.index[target_item]
        order = np.lexsort((idx.id_rank, -sims))
        idx.recalled[key] = [table.tokens[r] for r in order if r != self_row][:n]
    return list(idx.recalled[key])


class InteractionMatrix:
    """Binary user-item relation; a click anywhere makes the pair positive."""

    def __init__(self, pairs=None):
        self.labels = {}
        self._clicked = {}
        self._union_cache = {}
        for (u, i), y in (pairs or {}).items():
            self.set(u, i, y)

    def set(self, user, item, label):
        if label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {label!r}")
        self.labels[(user, item)] = max(label, self.labels.get((user, item), 0))
        if self.labels[(user, item)] == 1:
            self._clicked.setdefault(user, set()).add(item)
            self._union_cache.clear()

    @classmethod
    def from_events(cls, events):
        m = cls()
        for e in events:
            m.set(e.user, e.item, 1 if e.action == "click" else 0)
        return m

    def clicked_by(self, user):
        return self._clicked.get(user, set())

    def clicked_by_any(self, users):
        key = tuple(users)
        out = self._union_cache.get(key)
        if out is None:
            out = frozenset().union(*(self._clicked.get(u, ()) for u in key))
            self._union_cache[key] = out
        return out

    def __len__(self):
        return len(self.labels)


def build_item_group(target_item, group, interactions, table, topic_of,
                     L=DEFAULT_GROUP_LEN, n_recall=DEFAULT_N_RECALL):
    """i2i recall plus items clicked by the user group, filtered to the target's topic.

    Survivors are ranked by cosine similarity to the target item (ties by
    ID); the top L-1 are kept and the target is appended last.
    """
    if target_item not in table:
        raise DataError(f"target item {target_item!r} has no embedding vector")
    topic = topic_of(target_item)
    if not topic:
        raise DataError(f"target item {target_item!r} has no topic")

    candidates = set(i2i_recall(target_item, table, n_recall))
    if group is not None:
        candidates |= interactions.clicked_by_any(group.members)
    candidates.discard(target_item)
    rows = table.index
    kept = [c for c in candidates if c in rows and topic_of(c) == topic]

    chosen = []
    if kept and L > 1:
        sims = cosine_to(table, target_item)
        chosen = sorted(kept, key=lambda c: (-sims[rows[c]], c))[:L - 1]
    return _assemble(ItemGroup, target_item, chosen + [target_item], table.__getitem__, L, table.dim)


def write_groups(path, groups):
    with open(path, "w", encoding="utf-8") as fh:
        for g in groups:
            fh.write(g.to_record() + "\n")


def read_group_records(path):
    """Parse group records into ``(target, members, pad_count)`` tuples."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}: malformed group record {line!r}")
            members = parts[1].split(",") if parts[1] else []
            if not members or members[-1] != parts[0]:
                raise DataError(f"{path}: group for {parts[0]!r} must end with its target")
            out.append((parts[0], members, int(parts[2])))
    return out


def group_from_record(record, lookup, L, dim, cls=Group):
    target, members, pad = record
    if pad != L - len(members):
        raise DataError(f"group for {target!r}: pad count {pad} inconsistent with L={L}")
    return _assemble(cls, target, members, lookup, L, dim)
