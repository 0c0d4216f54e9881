"""Stage-by-stage orchestration. Every stage reads its inputs from and writes
its outputs to the run directory, so stages can be run separately."""

import json
import logging
import time
from pathlib import Path

import numpy as np

from ..data import CLICK, SOURCE, TARGET, read_catalog, read_events, read_users, write_catalog, \
    write_events, write_users
from ..embedding import EmbeddingTable, SkipGramEmbedder, TokenSequence, build_sequences, user_vector
from ..evaluation import (HotRecommender, MaxCoverageRecommender, RankedList, evaluate,
                          format_conditioned_table, format_kv, format_table)
from ..exceptions import DataError, LHRMError, StageError
from ..model import (AttributeEncoder, CandidateItem, LHRMScorer, NewUser, SampleSet,
                     cold_start_recommend, item_latents, load_checkpoint, save_checkpoint)
from ..relations import (ClusterModel, InteractionMatrix, ItemGroup, UserGroup, build_item_group,
                         build_user_group, group_from_record, kmeans, read_group_records,
                         write_groups)
from .split import split_dataset
from .synthetic import generate_synthetic

logger = logging.getLogger(__name__)

STAGES = ("gen-data", "pretrain", "cluster", "build-groups", "train", "recommend", "eval")

USER_CATEGORICAL = ("age_bucket", "gender")
ITEM_CATEGORICAL = ("topic", "category", "destination")
ITEM_NUMERIC = ("price",)


class RunDir:
    """File layout of one run."""

    def __init__(self, root):
        self.root = Path(root)

    def __getattr__(self, name):
        names = {
            "events": "events.tsv", "catalog": "catalog.tsv", "users": "users.tsv",
            "source_table": "source_embeddings.txt", "target_table": "target_embeddings.txt",
            "sgns_log": "sgns_loss.tsv", "user_vectors": "user_vectors.txt",
            "clusters": "clusters.txt", "user_groups": "user_groups.tsv",
            "item_groups": "item_groups.tsv", "encoders": "encoders.json",
            "report": "metrics.txt", "report_kv": "metrics.kv", "config": "config.txt",
        }
        if name in names:
            return self.root / names[name]
        raise AttributeError(name)

    def checkpoint(self, dim):
        return self.root / f"checkpoint-{dim}.txt"

    def train_log(self, dim):
        return self.root / f"train_log-{dim}.tsv"

    def recs(self, model):
        return self.root / f"recs-{model}.tsv"


def model_names(cfg, models=None):
    """Report row names in table order: baselines first, then LHRM per width."""
    models = tuple(models or cfg.models)
    names = []
    if "hot" in models:
        names.append("Hot")
    if "maxcov" in models:
        names.append("MaxCov")
    if "lhrm" in models:
        names += [f"LHRM-{d}" for d in cfg.latent_dims]
    return names


# --------------------------------------------------------------------------
# shared loaders

def _load_data(rd):
    for p in (rd.events, rd.catalog, rd.users):
        if not p.exists():
            raise DataError(f"missing {p.name}; run gen-data first")
    return read_events(rd.events), read_catalog(rd.catalog), read_users(rd.users)


def _travel_filter(catalog):
    travel = {c.item for c in catalog if c.domain == SOURCE and c.travel_related}
    return travel.__contains__


def _source_sequences(split, catalog):
    return {s.owner: s for s in build_sequences(split.source_events, _travel_filter(catalog))}


def _user_records(users):
    return {u.user: {"age_bucket": u.age_bucket, "gender": u.gender} for u in users}


def _item_records(catalog):
    return {c.item: {"topic": c.topic, "category": c.category, "destination": c.destination,
                     "price": c.price} for c in catalog if c.domain == TARGET}


def _load_encoders(rd):
    with open(rd.encoders, encoding="utf-8") as fh:
        d = json.load(fh)
    return AttributeEncoder.from_dict(d["user"]), AttributeEncoder.from_dict(d["item"])


def _train_clicks(split):
    return [(e.user, e.item) for e in split.train + split.validation if e.action == CLICK]


# --------------------------------------------------------------------------
# stages

def stage_gen_data(cfg, rd):
    rd.root.mkdir(parents=True, exist_ok=True)
    events, catalog, users = generate_synthetic(cfg.generator())
    write_events(rd.events, events)
    write_catalog(rd.catalog, catalog)
    write_users(rd.users, users)
    logger.info("generated %d events, %d catalog items, %d users", len(events), len(catalog), len(users))


def stage_pretrain(cfg, rd):
    events, catalog, _ = _load_data(rd)
    split = split_dataset(events, catalog, cfg.splitter())
    src_seqs = list(_source_sequences(split, catalog).values())
    tgt_seqs = build_sequences([e for e in split.train if e.action == CLICK])
    src = SkipGramEmbedder(**cfg.sgns(0)).fit(src_seqs)
    tgt = SkipGramEmbedder(**cfg.sgns(1)).fit(tgt_seqs)
    src.table_.save(rd.source_table)
    tgt.table_.save(rd.target_table)
    with open(rd.sgns_log, "w", encoding="utf-8") as fh:
        fh.write("table\tepoch\tloss\n")
        for name, est in (("source", src), ("target", tgt)):
            for i, v in enumerate(est.loss_history_, 1):
                fh.write(f"{name}\t{i}\t{v:.10f}\n")


def stage_cluster(cfg, rd):
    events, catalog, _ = _load_data(rd)
    split = split_dataset(events, catalog, cfg.splitter())
    table = EmbeddingTable.load(rd.source_table)
    seqs = _source_sequences(split, catalog)
    vectors = [user_vector(seqs[u], table) for u in sorted(seqs)]
    vectors = [v for v in vectors if v.embeddable]
    EmbeddingTable([v.user for v in vectors], np.vstack([v.vec for v in vectors])).save(rd.user_vectors)

    warm = set(split.warm_users)
    warm_vecs = [v for v in vectors if v.user in warm]
    missing = len(warm) - len(warm_vecs)
    if missing:
        logger.warning("%d warm users have no source-domain vector and are not clustered", missing)
    model = kmeans(warm_vecs, cfg.n_clusters, cfg.kmeans_max_iter, cfg.seed)
    model.save(rd.clusters)
    logger.info("k-means: %d clusters, %d iterations, WCSS %.4f", model.k,
                len(model.wcss_history) - 1, model.wcss_history[-1])


def stage_build_groups(cfg, rd):
    events, catalog, _ = _load_data(rd)
    user_vecs = EmbeddingTable.load(rd.user_vectors)
    model = ClusterModel.load(rd.clusters)
    target_table = EmbeddingTable.load(rd.target_table)
    groups = [build_user_group(u, model, user_vecs, cfg.group_len) for u in sorted(model.assignment)]
    write_groups(rd.user_groups, groups)

    topic = {c.item: c.topic for c in catalog if c.domain == TARGET}
    items = [c.item for c in catalog if c.domain == TARGET]
    missing = [i for i in items if i not in target_table]
    if missing:
        logger.warning("%d target items have no embedding and get no item group", len(missing))
    item_groups = [build_item_group(i, None, InteractionMatrix(), target_table, topic.get,
                                    cfg.group_len, cfg.n_recall)
                   for i in items if i in target_table]
    write_groups(rd.item_groups, item_groups)


def _user_group_index(rd, cfg, user_vecs):
    """user -> row of member indices into ``user_vecs.vectors`` (-1 padding)."""
    out = {}
    for target, members, pad in read_group_records(rd.user_groups):
        if pad != cfg.group_len - len(members):
            raise DataError(f"user group for {target!r} does not match group_len={cfg.group_len}")
        out[target] = np.array([-1] * pad + [user_vecs.index[m] for m in members], dtype=np.int64)
    return out


def build_sample_set(events, user_rows, user_vecs, target_table, interactions, topic_of,
                     user_attrs, item_attrs, cfg):
    """Assemble training rows for target-domain events of grouped users."""
    u_idx, i_idx, xu, xi, y = [], [], [], [], []
    skipped = 0
    for e in events:
        if e.user not in user_rows or e.item not in target_table:
            skipped += 1
            continue
        rows = user_rows[e.user]
        # only member IDs matter for item-group candidates
        group = UserGroup(e.user, [user_vecs.tokens[r] for r in rows if r >= 0], None, rows >= 0)
        ig = build_item_group(e.item, group, interactions, target_table, topic_of,
                              cfg.group_len, cfg.n_recall)
        pad = cfg.group_len - len(ig.members)
        u_idx.append(rows)
        i_idx.append([-1] * pad + [target_table.index[m] for m in ig.members])
        xu.append(user_attrs[e.user])
        xi.append(item_attrs[e.item])
        y.append(1 if e.action == CLICK else 0)
    if skipped:
        logger.info("skipped %d events without a user group or item vector", skipped)
    if not y:
        raise DataError("no usable training samples")
    return SampleSet(user_vecs.vectors, u_idx, target_table.vectors, i_idx, xu, xi), np.array(y)


def stage_train(cfg, rd):
    events, catalog, users = _load_data(rd)
    split = split_dataset(events, catalog, cfg.splitter())
    user_vecs = EmbeddingTable.load(rd.user_vectors)
    target_table = EmbeddingTable.load(rd.target_table)
    user_rows = _user_group_index(rd, cfg, user_vecs)

    urec = _user_records(users)
    irec = _item_records(catalog)
    warm = [u for u in split.warm_users if u in urec]
    user_enc = AttributeEncoder(USER_CATEGORICAL).fit([urec[u] for u in warm])
    items = sorted(irec)
    item_enc = AttributeEncoder(ITEM_CATEGORICAL, ITEM_NUMERIC).fit([irec[i] for i in items])
    with open(rd.encoders, "w", encoding="utf-8") as fh:
        json.dump({"user": user_enc.to_dict(), "item": item_enc.to_dict()}, fh, sort_keys=True, indent=1)
        fh.write("\n")
    ux = dict(zip(sorted(urec), user_enc.transform([urec[u] for u in sorted(urec)])))
    ix = dict(zip(items, item_enc.transform([irec[i] for i in items])))

    topic = {c.item: c.topic for c in catalog if c.domain == TARGET}
    interactions = InteractionMatrix.from_events(split.train)
    X, y = build_sample_set(split.train, user_rows, user_vecs, target_table, interactions,
                            topic.get, ux, ix, cfg)
    validation = None
    if split.validation:
        validation = build_sample_set(split.validation, user_rows, user_vecs, target_table,
                                      interactions, topic.get, ux, ix, cfg)
    logger.info("training on %d samples (%.1f%% positive), validating on %d",
                len(y), 100 * y.mean(), 0 if validation is None else len(validation[1]))

    schema = {"user": user_enc.schema_hash(), "item": item_enc.schema_hash()}
    for dim in cfg.latent_dims:
        est = LHRMScorer(latent_dim=dim, hidden=cfg.hidden, epochs=cfg.epochs,
                         batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
                         optimizer=cfg.optimizer, seed=cfg.seed)
        est.fit(X, y, validation=validation)
        config = {"latent_dim": dim, "hidden": ",".join(map(str, cfg.hidden)),
                  "epochs": cfg.epochs, "batch_size": cfg.batch_size,
                  "learning_rate": cfg.learning_rate, "optimizer": cfg.optimizer,
                  "seed": cfg.seed, "best_epoch": est.best_epoch_}
        save_checkpoint(rd.checkpoint(dim), est.params_, config, schema)
        with open(rd.train_log(dim), "w", encoding="utf-8") as fh:
            fh.write("epoch\ttrain_loss\tval_loss\n")
            for h in est.history_:
                val = "" if h["val_loss"] is None else f"{h['val_loss']:.10f}"
                fh.write(f"{h['epoch']}\t{h['train_loss']:.10f}\t{val}\n")


def _write_recs(path, lists):
    with open(path, "w", encoding="utf-8") as fh:
        for rl in lists:
            body = ",".join(f"{i}:{s!r}" for i, s in zip(rl.items, rl.scores))
            fh.write(f"{rl.user}\t{int(rl.fallback)}\t{body}\n")


def read_recs(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            user, fallback, body = line.rstrip("\n").split("\t")
            pairs = [p.rsplit(":", 1) for p in body.split(",")] if body else []
            out[user] = RankedList(user, [p[0] for p in pairs], [float(p[1]) for p in pairs],
                                   fallback=fallback == "1")
    return out


def stage_recommend(cfg, rd, models=None):
    models = tuple(models or cfg.models)
    events, catalog, users = _load_data(rd)
    split = split_dataset(events, catalog, cfg.splitter())
    k = max(cfg.eval_k)
    targets = sorted(c.item for c in catalog if c.domain == TARGET)

    if "hot" in models or "maxcov" in models:
        clicks = _train_clicks(split)
        for name, cls in (("hot", HotRecommender), ("maxcov", MaxCoverageRecommender)):
            if name in models:
                rec = cls().fit(clicks, targets)
                _write_recs(rd.recs(name), [rec.recommend(k, user=u) for u in split.cold_users])

    if "lhrm" not in models:
        return
    source_table = EmbeddingTable.load(rd.source_table)
    target_table = EmbeddingTable.load(rd.target_table)
    user_vecs = EmbeddingTable.load(rd.user_vectors)
    cluster_model = ClusterModel.load(rd.clusters)
    user_enc, item_enc = _load_encoders(rd)
    pop = {c.item: c.popularity for c in catalog if c.domain == TARGET}
    irec = _item_records(catalog)

    records = read_group_records(rd.item_groups)
    item_attrs = item_enc.transform([irec[r[0]] for r in records])
    candidates = [CandidateItem(r[0], group_from_record(r, target_table.__getitem__, cfg.group_len,
                                                        target_table.dim, ItemGroup),
                                attrs, pop[r[0]])
                  for r, attrs in zip(records, item_attrs)]
    seqs = _source_sequences(split, catalog)
    urec = _user_records(users)

    for dim in cfg.latent_dims:
        params, meta = load_checkpoint(rd.checkpoint(dim))
        if meta["schema"].get("user") != user_enc.schema_hash() or \
                meta["schema"].get("item") != item_enc.schema_hash():
            raise DataError(f"checkpoint-{dim} was trained with different attribute encoders")
        latents = item_latents(candidates, params)
        lists = []
        for u in split.cold_users:
            seq = seqs.get(u) or TokenSequence(u, [], SOURCE)
            new_user = NewUser(u, seq, user_enc.transform([urec[u]])[0])
            lists.append(cold_start_recommend(new_user, candidates, params, source_table,
                                              cluster_model, user_vecs, k, cfg.group_len, latents))
        n_fb = sum(rl.fallback for rl in lists)
        if n_fb:
            logger.warning("LHRM-%d: %d cold users fell back to popularity ranking", dim, n_fb)
        _write_recs(rd.recs(f"lhrm-{dim}"), lists)


def _rec_file_for(name):
    return {"Hot": "hot", "MaxCov": "maxcov"}.get(name, name.lower())


def stage_eval(cfg, rd, models=None):
    events, catalog, _ = _load_data(rd)
    split = split_dataset(events, catalog, cfg.splitter())
    item_attrs = {c.item: (c.destination, c.category) for c in catalog if c.domain == TARGET}
    results = {}
    for name in model_names(cfg, models):
        path = rd.recs(_rec_file_for(name))
        if not path.exists():
            raise DataError(f"missing {path.name}; run recommend for {name}")
        results[name] = evaluate(split.test, read_recs(path), cfg.eval_k, item_attrs,
                                 average=cfg.hr_average)
    header = (f"# cold-start users: {len(split.test)}  positive pairs: "
              f"{sum(len(c.target_items) for c in split.test)}  HR averaging: {cfg.hr_average}\n")
    text = header + "\n" + format_table(results, cfg.eval_k) + "\n" + \
        "# relevance-conditioned hit rate (fraction of users)\n\n" + \
        format_conditioned_table(results, cfg.eval_k)
    rd.report.write_text(text, encoding="utf-8")
    rd.report_kv.write_text(format_kv(results), encoding="utf-8")
    return results


STAGE_FUNCS = {
    "gen-data": stage_gen_data,
    "pretrain": stage_pretrain,
    "cluster": stage_cluster,
    "build-groups": stage_build_groups,
    "train": stage_train,
    "recommend": stage_recommend,
    "eval": stage_eval,
}


def run_stage(name, cfg, models=None):
    """Run one stage, wrapping any failure in ``StageError``."""
    rd = RunDir(cfg.out)
    rd.root.mkdir(parents=True, exist_ok=True)
    fn = STAGE_FUNCS[name]
    t0 = time.perf_counter()
    try:
        result = fn(cfg, rd, models) if name in ("recommend", "eval") else fn(cfg, rd)
    except LHRMError as exc:
        raise StageError(name, exc) from exc
    except (OSError, ValueError, KeyError) as exc:
        raise StageError(name, DataError(str(exc))) from exc
    except Exception as exc:  # noqa: BLE001
        raise StageError(name, exc) from exc
    logger.info("stage %s done in %.1fs", name, time.perf_counter() - t0)
    return result


def run_end_to_end(cfg, models=None):
    """Every stage in order; returns the metrics dict written to ``metrics.kv``."""
    rd = RunDir(cfg.out)
    rd.root.mkdir(parents=True, exist_ok=True)
    cfg.save(rd.config)
    result = None
    for name in STAGES:
        result = run_stage(name, cfg, models)
    return result

