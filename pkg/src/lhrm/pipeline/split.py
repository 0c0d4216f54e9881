"""Time-based train/validation split for warm users; cold cohort as the test set."""

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..data import CLICK, IMPRESSION, SOURCE, TARGET
from ..evaluation import EvalCase
from ..exceptions import ConfigError, DataError
from .synthetic import DAY

logger = logging.getLogger(__name__)


@dataclass
class SplitConfig:
    window_days: int = 30
    validation_fraction: float = 0.2
    # impressions kept per click in each split; 0 keeps every impression
    train_negative_ratio: float = 0.0
    validation_negative_ratio: float = 0.0
    seed: int = 0


@dataclass
class DatasetSplit:
    source_events: list
    train: list
    validation: list
    test: list  # EvalCase
    warm_users: list
    cold_users: list
    excluded_users: list = field(default_factory=list)
    cutoff: int = 0
    window_end: int = 0


def _cap_negatives(events, ratio, rng):
    if ratio <= 0:
        return events
    clicks = [e for e in events if e.action == CLICK]
    imps = [e for e in events if e.action == IMPRESSION]
    keep = int(round(len(clicks) * ratio))
    if keep < len(imps):
        sel = set(rng.choice(len(imps), size=keep, replace=False).tolist())
        imps = [e for j, e in enumerate(imps) if j in sel]
    out = clicks + imps
    out.sort(key=lambda e: (e.user, e.timestamp, e.domain, e.item, e.action))
    return out


def split_dataset(events, catalog, split_cfg=None):
    """Split target-domain events.

    Warm users (any target-domain event inside the training window) are split
    by time: events before ``(1 - validation_fraction) * window`` train, the
    rest validate. Users with target-domain clicks only after the window form
    the cold test cohort; their clicks become ``EvalCase`` targets. A user with
    target events on both sides of the window boundary is excluded from test.
    """
    cfg = split_cfg or SplitConfig()
    if not 0.0 <= cfg.validation_fraction < 1.0:
        raise ConfigError("validation_fraction must be in [0, 1)")
    window_end = cfg.window_days * DAY
    cutoff = int(window_end * (1.0 - cfg.validation_fraction))
    attrs = {c.item: (c.destination, c.category) for c in catalog}

    in_window = defaultdict(list)
    after = defaultdict(list)
    source = []
    for e in events:
        if e.domain == SOURCE:
            if e.timestamp < window_end:
                source.append(e)
        elif e.timestamp < window_end:
            in_window[e.user].append(e)
        else:
            after[e.user].append(e)

    excluded = sorted(u for u in after if u in in_window)
    if excluded:
        logger.warning("%d users have target-domain history and are excluded from test: %s",
                       len(excluded), ", ".join(excluded[:5]) + (" ..." if len(excluded) > 5 else ""))

    test, cold = [], []
    for user in sorted(after):
        if user in in_window:
            continue
        targets = {e.item for e in after[user] if e.action == CLICK}
        if not targets:
            continue
        missing = [t for t in targets if t not in attrs]
        if missing:
            raise DataError(f"test targets missing from catalog: {missing[:3]}")
        cold.append(user)
        test.append(EvalCase(user, targets, {t: attrs[t] for t in targets}))
    if not test:
        raise ConfigError("empty cold cohort: no user has target-domain clicks only after the window")

    train, validation = [], []
    for user in sorted(in_window):
        for e in in_window[user]:
            (train if e.timestamp < cutoff else validation).append(e)
    rng = np.random.default_rng(cfg.seed)
    train = _cap_negatives(train, cfg.train_negative_ratio, rng)
    validation = _cap_negatives(validation, cfg.validation_negative_ratio, rng)

    split = DatasetSplit(source, train, validation, test, sorted(in_window), cold, excluded,
                         cutoff, window_end)
    _check_disjoint(split)
    return split


def _check_disjoint(split):
    key = lambda e: (e.user, e.item, e.timestamp)  # noqa: E731
    tr = {key(e) for e in split.train}
    va = {key(e) for e in split.validation}
    if tr & va:
        raise DataError("train and validation overlap")
    cold = set(split.cold_users)
    if any(e.user in cold for e in split.train + split.validation if e.domain == TARGET):
        raise DataError("a test user has target-domain training events")
