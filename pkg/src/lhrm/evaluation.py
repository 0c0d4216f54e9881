"""Ranking metrics (HR@k, NDCG@k, relevance-conditioned hit rate) and the
non-personalized Hot / MaxCov baselines."""

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataError, EvaluationError, ValidationError

DEFAULT_KS = (30, 50, 100, 200)

SAME_DESTINATION_AND_CATEGORY = "same_destination_and_category"
SAME_DESTINATION = "same_destination"
SAME_CATEGORY = "same_category"
CONDITIONS = (SAME_DESTINATION_AND_CATEGORY, SAME_DESTINATION, SAME_CATEGORY)


@dataclass
class RankedList:
    user: str
    items: list
    scores: list
    fallback: bool = False

    def __post_init__(self):
        if len(self.items) != len(self.scores):
            raise ValidationError("items and scores must have equal length")
        if len(set(self.items)) != len(self.items):
            raise ValidationError(f"ranked list for {self.user!r} has duplicate items")
        if any(b > a for a, b in zip(self.scores, self.scores[1:])):
            raise ValidationError(f"scores for {self.user!r} are not non-increasing")

    def top(self, k):
        return self.items[:k]


@dataclass
class EvalCase:
    user: str
    target_items: set
    # item -> (destination, category)
    target_attrs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.target_items = set(self.target_items)
        if not self.target_items:
            raise ValidationError(f"eval case for {self.user!r} has no targets")


def _list_for(case, lists):
    try:
        return lists[case.user]
    except KeyError:
        raise EvaluationError(f"no ranked list for user {case.user!r}") from None


def hr_at_k(cases, lists, k, average="micro"):
    """Hit rate at k.

    ``average="micro"`` counts hits over all (case, target) pairs;
    ``"macro"`` averages per-case hit fractions.
    """
    if average not in ("micro", "macro"):
        raise ValidationError(f"unknown averaging {average!r}")
    hits = total = 0
    per_case = []
    for case in cases:
        top = set(_list_for(case, lists).top(k))
        h = len(case.target_items & top)
        hits += h
        total += len(case.target_items)
        per_case.append(h / len(case.target_items))
    if total == 0:
        return 0.0
    return hits / total if average == "micro" else sum(per_case) / len(per_case)


def _dcg(positions):
    return sum(1.0 / math.log2(p + 1) for p in positions)


def ndcg_at_k(cases, lists, k, ideal="full"):
    """Binary-relevance NDCG at k, averaged over cases.

    ``ideal="full"`` normalizes by the DCG of all of a case's targets ranked
    first, which keeps NDCG non-decreasing in k. ``"truncated"`` cuts the
    ideal ranking at k as well, the more common textbook variant.
    """
    if ideal not in ("full", "truncated"):
        raise ValidationError(f"unknown ideal {ideal!r}")
    vals = []
    for case in cases:
        top = _list_for(case, lists).top(k)
        hits = [p for p, item in enumerate(top, 1) if item in case.target_items]
        n_ideal = len(case.target_items) if ideal == "full" else min(len(case.target_items), k)
        ideal_dcg = _dcg(range(1, n_ideal + 1))
        vals.append(_dcg(hits) / ideal_dcg)
    return sum(vals) / len(vals) if vals else 0.0


def _matches(condition, rec_attrs, tgt_attrs):
    dest_ok = rec_attrs[0] == tgt_attrs[0]
    cat_ok = rec_attrs[1] == tgt_attrs[1]
    if condition == SAME_DESTINATION_AND_CATEGORY:
        return dest_ok and cat_ok
    if condition == SAME_DESTINATION:
        return dest_ok
    if condition == SAME_CATEGORY:
        return cat_ok
    raise ValidationError(f"unknown condition {condition!r}")


def conditioned_hr(cases, lists, k, condition, item_attrs):
    """Fraction of cases with at least one top-k item relevant to some target.

    ``item_attrs`` maps item -> (destination, category) and must cover every
    recommended item and every target.
    """
    if condition not in CONDITIONS:
        raise ValidationError(f"unknown condition {condition!r}")
    if not cases:
        return 0.0
    hit_cases = 0
    for case in cases:
        try:
            targets = [case.target_attrs.get(t) or item_attrs[t] for t in case.target_items]
            recs = [(r, item_attrs[r]) for r in _list_for(case, lists).top(k)]
        except KeyError as exc:
            raise EvaluationError(f"missing destination/category for item {exc.args[0]!r}") from None
        if any(r in case.target_items or any(_matches(condition, ra, ta) for ta in targets)
               for r, ra in recs):
            hit_cases += 1
    return hit_cases / len(cases)


def _click_counts(train_interactions):
    counts = Counter()
    users = defaultdict(set)
    for user, item in train_interactions:
        counts[item] += 1
        users[item].add(user)
    if not counts:
        raise DataError("baselines need at least one training click")
    return counts, users


def _hot_order(counts, catalog):
    return sorted(catalog, key=lambda i: (-counts.get(i, 0), i))


class HotRecommender(BaseEstimator):
    """Rank every user the same way: by training-window click count."""

    def fit(self, train_interactions, catalog):
        counts, _ = _click_counts(train_interactions)
        self.counts_ = dict(counts)
        self.order_ = _hot_order(counts, sorted(set(catalog)))
        return self

    def recommend(self, k, user=""):
        check_is_fitted(self, "order_")
        items = self.order_[:k]
        return RankedList(user, items, [float(self.counts_.get(i, 0)) for i in items])


class MaxCoverageRecommender(BaseEstimator):
    """Greedy maximum coverage of training users.

    Each pick is the item clicked by the most not-yet-covered users (ties by
    click count, then ID). Once every user is covered the remaining slots
    follow Hot order. A reconstruction of the Max-Coverage idea, not a
    verbatim port.
    """

    def fit(self, train_interactions, catalog):
        counts, users = _click_counts(train_interactions)
        catalog = sorted(set(catalog))
        uncovered = set().union(*users.values())
        remaining = set(catalog)
        order, gains = [], []
        while uncovered and remaining:
            best = min(remaining, key=lambda i: (-len(users.get(i, set()) & uncovered),
                                                 -counts.get(i, 0), i))
            gain = len(users.get(best, set()) & uncovered)
            if gain == 0:
                break
            order.append(best)
            gains.append(gain)
            uncovered -= users[best]
            remaining.discard(best)
        rest = [i for i in _hot_order(counts, catalog) if i in remaining]
        self.counts_ = dict(counts)
        self.order_ = order + rest
        self.n_greedy_ = len(order)
        # score = rank-derived value so scores are non-increasing by construction
        n = len(self.order_)
        self.scores_ = [float(n - r) for r in range(n)]
        return self

    def recommend(self, k, user=""):
        check_is_fitted(self, "order_")
        return RankedList(user, self.order_[:k], self.scores_[:k])


def baseline_hot(train_interactions, catalog, k):
    return HotRecommender().fit(train_interactions, catalog).recommend(k)


def baseline_maxcov(train_interactions, catalog, k):
    return MaxCoverageRecommender().fit(train_interactions, catalog).recommend(k)


def evaluate(cases, lists, ks=DEFAULT_KS, item_attrs=None, average="micro"):
    """All metrics for one model as an ordered dict of name -> value."""
    out = {}
    for k in ks:
        out[f"HR@{k}"] = hr_at_k(cases, lists, k, average=average)
    for k in ks:
        out[f"NDCG@{k}"] = ndcg_at_k(cases, lists, k)
    if item_attrs is not None:
        for cond in CONDITIONS:
            for k in ks:
                out[f"{cond}@{k}"] = conditioned_hr(cases, lists, k, cond, item_attrs)
    return out


def format_table(results, ks=DEFAULT_KS, digits=4):
    """Aligned text table: one row per model, HR@k columns then NDCG@k columns."""
    cols = [f"HR@{k}" for k in ks] + [f"NDCG@{k}" for k in ks]
    name_w = max([5] + [len(m) for m in results])
    col_w = max(max(len(c) for c in cols), digits + 2)
    lines = [" " * name_w + " | " + " ".join(c.rjust(col_w) for c in cols)]
    lines.append("-" * len(lines[0]))
    for model, metrics in results.items():
        lines.append(model.ljust(name_w) + " | " +
                     " ".join(f"{metrics[c]:.{digits}f}".rjust(col_w) for c in cols))
    return "\n".join(lines) + "\n"


def format_conditioned_table(results, ks=DEFAULT_KS, digits=4):
    blocks = []
    for cond in CONDITIONS:
        rows = {m: {f"HR@{k}": v[f"{cond}@{k}"] for k in ks} for m, v in results.items()
                if f"{cond}@{ks[0]}" in v}
        if not rows:
            continue
        name_w = max([5] + [len(m) for m in rows])
        cols = [f"HR@{k}" for k in ks]
        col_w = max(max(len(c) for c in cols), digits + 2)
        head = " " * name_w + " | " + " ".join(c.rjust(col_w) for c in cols)
        lines = [f"[{cond}]", head, "-" * len(head)]
        for m, metrics in rows.items():
            lines.append(m.ljust(name_w) + " | " +
                         " ".join(f"{metrics[c]:.{digits}f}".rjust(col_w) for c in cols))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n" if blocks else ""


def format_kv(results, digits=6):
    lines = []
    for model, metrics in results.items():
        for name, value in metrics.items():
            lines.append(f"{model}.{name}={value:.{digits}f}")
    return "\n".join(lines) + "\n"


def parse_kv(text):
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, value = line.split("=", 1)
        model, metric = key.split(".", 1)
        out.setdefault(model, {})[metric] = float(value)
    return out
