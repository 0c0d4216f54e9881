"""Synthetic two-domain behavior logs with planted location -> topic preferences.

Users live in geographic cells; every cell prefers one travel topic. With
probability ``preference_strength`` a travel event (source domain) or a
click (target domain) is drawn from the cell's preferred topic, otherwise
from the whole pool. Within a pool, target items are drawn with Zipf
popularity weights. A cold cohort gets source-domain history plus
target-domain clicks in a test window after the training window only.
"""

from dataclasses import dataclass

import numpy as np

from ..data import (CLICK, IMPRESSION, SOURCE, TARGET, BehaviorEvent, ItemCatalogEntry,
                    UserProfile)
from ..exceptions import ConfigError
from ..geocode import GeoPoint

DAY = 86400

AGE_BUCKETS = ("18-24", "25-34", "35-44", "45-54", "55+")
GENDERS = ("f", "m")
CATEGORIES = ("hotel", "flight", "ticket", "tour", "rail", "cruise", "visa", "car")


@dataclass
class GeneratorConfig:
    n_users: int = 5000
    n_geo_cells: int = 50
    n_source_items: int = 2000
    n_target_items: int = 500
    n_topics: int = 10
    preference_strength: float = 0.8
    seed: int = 0
    cold_fraction: float = 0.1
    travel_fraction: float = 0.6
    location_rate: float = 0.9
    source_events_mean: float = 12.0
    target_clicks_mean: float = 4.0
    impressions_per_click: float = 1.5
    test_clicks_mean: float = 3.0
    n_destinations: int = 25
    n_categories: int = 5
    zipf_exponent: float = 1.0
    window_days: int = 30
    test_days: int = 7

    def validate(self):
        counts = ("n_users", "n_geo_cells", "n_source_items", "n_target_items", "n_topics",
                  "n_destinations", "n_categories", "window_days", "test_days")
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_target_items < self.n_topics:
            raise ConfigError("need at least one target item per topic")
        if self.n_categories > len(CATEGORIES):
            raise ConfigError(f"at most {len(CATEGORIES)} categories supported")
        for name in ("preference_strength", "cold_fraction", "travel_fraction", "location_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if round(self.n_users * self.cold_fraction) >= self.n_users:
            raise ConfigError("cold_fraction leaves no warm users")


def _cell_centers(n, rng):
    # distinct ~5 km cells scattered over a mainland-China-sized box
    lat = rng.uniform(20.0, 45.0, n)
    lon = rng.uniform(100.0, 122.0, n)
    return np.column_stack([lat, lon])


def _zipf_weights(n, s, rng):
    ranks = rng.permutation(n) + 1
    return 1.0 / ranks.astype(np.float64) ** s


def generate_synthetic(cfg=None, **overrides):
    """Generate ``(events, catalog, users)``; deterministic given ``cfg.seed``."""
    cfg = cfg or GeneratorConfig()
    if overrides:
        cfg = GeneratorConfig(**{**cfg.__dict__, **overrides})
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    window = cfg.window_days * DAY
    test_end = window + cfg.test_days * DAY

    centers = _cell_centers(cfg.n_geo_cells, rng)
    cell_topic = rng.integers(0, cfg.n_topics, cfg.n_geo_cells)

    # source catalog
    src_travel = rng.random(cfg.n_source_items) < cfg.travel_fraction
    if not src_travel.any():
        src_travel[0] = True
    src_topic = rng.integers(0, cfg.n_topics, cfg.n_source_items)
    src_ids = [f"s{j:05d}" for j in range(cfg.n_source_items)]
    travel_idx = np.flatnonzero(src_travel)
    other_idx = np.flatnonzero(~src_travel)
    travel_by_topic = [travel_idx[src_topic[travel_idx] == t] for t in range(cfg.n_topics)]

    # target catalog: round-robin topics so every topic is populated
    tgt_topic = rng.permutation(np.arange(cfg.n_target_items) % cfg.n_topics)
    tgt_dest = rng.integers(0, cfg.n_destinations, cfg.n_target_items)
    tgt_cat = rng.integers(0, cfg.n_categories, cfg.n_target_items)
    tgt_price = np.round(rng.lognormal(6.0, 0.8, cfg.n_target_items), 2)
    tgt_ids = [f"t{j:04d}" for j in range(cfg.n_target_items)]
    weights = _zipf_weights(cfg.n_target_items, cfg.zipf_exponent, rng)
    p_all = weights / weights.sum()
    by_topic = [np.flatnonzero(tgt_topic == t) for t in range(cfg.n_topics)]
    p_topic = [weights[ix] / weights[ix].sum() for ix in by_topic]

    n_cold = int(round(cfg.n_users * cfg.cold_fraction))
    order = rng.permutation(cfg.n_users)
    cold = np.zeros(cfg.n_users, dtype=bool)
    cold[order[:n_cold]] = True
    home = rng.integers(0, cfg.n_geo_cells, cfg.n_users)

    def pick_target(pref):
        if rng.random() < cfg.preference_strength:
            return by_topic[pref][rng.choice(len(by_topic[pref]), p=p_topic[pref])]
        return rng.choice(cfg.n_target_items, p=p_all)

    users, events = [], []
    for u in range(cfg.n_users):
        uid = f"u{u:05d}"
        cell = home[u]
        pref = cell_topic[cell]
        users.append(UserProfile(uid, AGE_BUCKETS[rng.integers(len(AGE_BUCKETS))],
                                 GENDERS[rng.integers(len(GENDERS))], int(cell)))

        n_src = 1 + rng.poisson(cfg.source_events_mean)
        for _ in range(n_src):
            if rng.random() < cfg.travel_fraction or len(other_idx) == 0:
                pool = travel_by_topic[pref]
                if rng.random() < cfg.preference_strength and len(pool):
                    j = pool[rng.integers(len(pool))]
                else:
                    j = travel_idx[rng.integers(len(travel_idx))]
            else:
                j = other_idx[rng.integers(len(other_idx))]
            loc = None
            if rng.random() < cfg.location_rate:
                lat, lon = centers[cell] + rng.normal(0.0, 0.004, 2)
                loc = GeoPoint(float(np.clip(lat, -90, 90)), float(np.clip(lon, -180, 180)))
            events.append(BehaviorEvent(uid, src_ids[j], SOURCE, CLICK,
                                        int(rng.integers(0, window)), loc))

        if cold[u]:
            for _ in range(1 + rng.poisson(cfg.test_clicks_mean)):
                events.append(BehaviorEvent(uid, tgt_ids[pick_target(pref)], TARGET, CLICK,
                                            int(rng.integers(window, test_end))))
        else:
            n_clicks = 1 + rng.poisson(cfg.target_clicks_mean)
            for _ in range(n_clicks):
                events.append(BehaviorEvent(uid, tgt_ids[pick_target(pref)], TARGET, CLICK,
                                            int(rng.integers(0, window))))
            for _ in range(rng.poisson(n_clicks * cfg.impressions_per_click)):
                events.append(BehaviorEvent(uid, tgt_ids[rng.integers(cfg.n_target_items)],
                                            TARGET, IMPRESSION, int(rng.integers(0, window))))

    events.sort(key=lambda e: (e.user, e.timestamp, e.domain, e.item, e.action))

    clicks = np.zeros(cfg.n_target_items)
    index = {t: j for j, t in enumerate(tgt_ids)}
    for e in events:
        if e.domain == TARGET and e.action == CLICK and e.timestamp < window:
            clicks[index[e.item]] += 1
    pop = clicks / clicks.max() if clicks.max() > 0 else clicks

    catalog = [ItemCatalogEntry(src_ids[j], SOURCE, category="travel" if src_travel[j] else "other",
                                topic=f"topic{src_topic[j]:02d}" if src_travel[j] else "",
                                travel_related=bool(src_travel[j]))
               for j in range(cfg.n_source_items)]
    catalog += [ItemCatalogEntry(tgt_ids[j], TARGET, category=CATEGORIES[tgt_cat[j]],
                                 destination=f"dest{tgt_dest[j]:02d}",
                                 topic=f"topic{tgt_topic[j]:02d}", travel_related=True,
                                 price=float(tgt_price[j]), popularity=float(pop[j]))
                for j in range(cfg.n_target_items)]
    return events, catalog, users


def topic_mutual_information(events, users, catalog, domain=TARGET):
    """Empirical mutual information (nats) between a clicker's home cell and
    the clicked item's topic."""
    home = {u.user: u.home_cell for u in users}
    topic = {c.item: c.topic for c in catalog}
    pairs = [(home[e.user], topic[e.item]) for e in events
             if e.domain == domain and e.action == CLICK and topic.get(e.item)]
    if not pairs:
        return 0.0
    cells = sorted({p[0] for p in pairs})
    topics = sorted({p[1] for p in pairs})
    ci = {c: i for i, c in enumerate(cells)}
    ti = {t: i for i, t in enumerate(topics)}
    joint = np.zeros((len(cells), len(topics)))
    for c, t in pairs:
        joint[ci[c], ti[t]] += 1
    joint /= joint.sum()
    pc = joint.sum(axis=1, keepdims=True)
    pt = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float((joint[nz] * np.log(joint[nz] / (pc @ pt)[nz])).sum())
