import numpy as np
import pytest

from lhrm.data import SOURCE, TARGET, BehaviorEvent
from lhrm.embedding import (EmbeddingTable, SkipGramEmbedder, TokenSequence, _sgd_epoch,
                            build_sequences, sgns_batch, sgns_loss_grad, train_skipgram,
                            user_vector)
from lhrm.exceptions import ConfigError, DataError
from lhrm.geocode import GeoPoint, token_for_event

SHANGHAI = GeoPoint(31.1932993, 121.4396019)
PARIS = GeoPoint(48.8566, 2.3522)


def _ev(user, item, ts, domain=SOURCE, loc=None, action="click"):
    return BehaviorEvent(user, item, domain, action, ts, loc)


class TestBuildSequences:
    def test_three_user_fixture(self):
        events = [
            _ev("u2", "b", 5, loc=PARIS),
            _ev("u1", "a", 2),
            _ev("u1", "c", 1, loc=SHANGHAI),
            _ev("u3", "t1", 3, domain=TARGET),
            _ev("u2", "a", 1),
            _ev("u3", "t0", 1, domain=TARGET),
        ]
        seqs = build_sequences(events)
        got = [(s.owner, s.domain, s.tokens) for s in seqs]
        assert got == [
            ("u1", SOURCE, ["c", "wtw37", "a"]),
            ("u2", SOURCE, ["a", "b", token_for_event(PARIS)]),
            ("u3", TARGET, ["t0", "t1"]),
        ]

    def test_shared_location_repeats_token(self):
        seqs = build_sequences([_ev("u", "itemA", 1, loc=SHANGHAI), _ev("u", "itemB", 2, loc=SHANGHAI)])
        assert seqs[0].tokens == ["itemA", "wtw37", "itemB", "wtw37"]

    def test_timestamp_ties_keep_input_order(self):
        events = [_ev("u", "x", 1), _ev("u", "y", 1), _ev("u", "z", 0)]
        assert build_sequences(events)[0].tokens == ["z", "x", "y"]

    def test_travel_filter_drops_source_only(self):
        events = [_ev("u", "keep", 1, loc=SHANGHAI), _ev("u", "drop", 2, loc=PARIS),
                  _ev("v", "drop", 1, domain=TARGET)]
        seqs = build_sequences(events, travel_filter=lambda item: item != "drop")
        assert [s.tokens for s in seqs] == [["keep", "wtw37"], ["drop"]]

    def test_user_with_only_filtered_events_has_no_sequence(self):
        seqs = build_sequences([_ev("u", "drop", 1)], travel_filter=lambda i: False)
        assert seqs == []


class TestSGNSGradient:
    @pytest.mark.parametrize("seed", range(10))
    def test_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        d, k = 6, 5
        c, o, negs = rng.normal(size=d), rng.normal(size=d), rng.normal(size=(k, d))
        _, gc, go, gn = sgns_loss_grad(c, o, negs)
        h = 1e-5

        def f(c_, o_, n_):
            return sgns_loss_grad(c_, o_, n_)[0]

        def check(analytic, which, shape):
            base = [c, o, negs]
            flat = base[which].ravel()
            num = np.empty(flat.size)
            for i in range(flat.size):
                plus, minus = flat.copy(), flat.copy()
                plus[i] += h
                minus[i] -= h
                args_p = list(base)
                args_m = list(base)
                args_p[which] = plus.reshape(shape)
                args_m[which] = minus.reshape(shape)
                num[i] = (f(*args_p) - f(*args_m)) / (2 * h)
            a = analytic.ravel()
            rel = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-6)
            assert rel.max() < 1e-4

        check(gc, 0, c.shape)
        check(go, 1, o.shape)
        check(gn, 2, negs.shape)

    def test_loss_closed_form(self):
        c = np.array([1.0, 0.0])
        o = np.array([2.0, 0.0])
        n = np.array([[0.0, 0.0]])
        loss = sgns_loss_grad(c, o, n)[0]
        assert loss == pytest.approx(np.log1p(np.exp(-2.0)) + np.log(2.0), abs=1e-12)

    def test_kernel_step_matches_batch_gradient(self):
        rng = np.random.default_rng(3)
        n, d = 8, 4
        w_in, w_out = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        c, ctx, negs = 2, 5, np.array([[0, 1, 7]])
        lr = 0.1
        _, dc, dout = sgns_batch(w_in[[c]], w_out[[[ctx, 0, 1, 7]]], np.array([[1.0, 0, 0, 0]]))
        exp_in, exp_out = w_in.copy(), w_out.copy()
        exp_in[c] -= lr * dc[0]
        exp_out[[ctx, 0, 1, 7]] -= lr * dout[0]
        # total large enough that the decayed rate equals lr to machine precision
        _sgd_epoch(w_in, w_out, np.array([c]), np.array([ctx]), negs, lr, 0, 10 ** 15)
        np.testing.assert_allclose(w_in, exp_in, atol=1e-12)
        np.testing.assert_allclose(w_out, exp_out, atol=1e-12)


def _planted_corpus(n=200, seed=0):
    """X and Y share every sequence; Z lives in disjoint sequences with its own fillers."""
    rng = np.random.default_rng(seed)
    pool_a = [f"a{i}" for i in range(20)]
    pool_b = [f"b{i}" for i in range(20)]
    seqs = []
    for i in range(n):
        if i % 2 == 0:
            toks = list(rng.choice(pool_a, size=6))
            pos = int(rng.integers(0, 7))
            toks[pos:pos] = ["X", "Y"] if rng.random() < 0.5 else ["Y", "X"]
        else:
            toks = list(rng.choice(pool_b, size=7))
            toks.insert(int(rng.integers(0, 8)), "Z")
        seqs.append(TokenSequence(f"u{i}", toks))
    return seqs


def _cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


class TestSkipGram:
    def test_planted_cooccurrence(self):
        seqs = _planted_corpus()
        table = train_skipgram(seqs, dim=16, window=2, negatives=5, epochs=5, seed=0)
        assert _cos(table["X"], table["Y"]) > _cos(table["X"], table["Z"])

    def test_loss_nonincreasing_first_epochs(self):
        est = SkipGramEmbedder(dim=16, window=2, epochs=3, seed=1).fit(_planted_corpus())
        h = est.loss_history_
        assert len(h) == 3
        assert all(h[i + 1] <= h[i] + 1e-6 for i in range(2))

    def test_deterministic_bitwise(self):
        a = train_skipgram(_planted_corpus(), dim=8, epochs=2, seed=7)
        b = train_skipgram(_planted_corpus(), dim=8, epochs=2, seed=7)
        assert a.tokens == b.tokens
        assert np.array_equal(a.vectors, b.vectors)

    def test_seed_changes_vectors(self):
        a = train_skipgram(_planted_corpus(), dim=8, epochs=1, seed=1)
        b = train_skipgram(_planted_corpus(), dim=8, epochs=1, seed=2)
        assert not np.array_equal(a.vectors, b.vectors)

    def test_single_token_vocabulary_rejected(self):
        with pytest.raises(ConfigError):
            train_skipgram([TokenSequence("u", ["a", "a", "a"])], dim=4)

    def test_min_count_can_empty_vocabulary(self):
        with pytest.raises(ConfigError):
            train_skipgram([TokenSequence("u", ["a", "b"])], dim=4, min_count=2)

    @pytest.mark.parametrize("bad", [dict(dim=0), dict(window=0), dict(epochs=0),
                                     dict(negatives=-1)])
    def test_bad_params(self, bad):
        with pytest.raises(ConfigError):
            SkipGramEmbedder(**bad).fit(_planted_corpus(10))

    def test_sklearn_params_and_transform(self):
        est = SkipGramEmbedder(dim=5, epochs=1)
        assert est.get_params()["dim"] == 5
        seqs = _planted_corpus(20)
        X = est.fit(seqs).transform(seqs)
        assert X.shape == (20, 5)
        np.testing.assert_allclose(X[0], user_vector(seqs[0], est.table_).vec)


class TestUserVector:
    def _table(self):
        return EmbeddingTable(["a", "b", "g"], np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 3.0]]))

    def test_mean_of_known_tokens(self):
        uv = user_vector(TokenSequence("u", ["a", "b", "g"]), self._table())
        np.testing.assert_allclose(uv.vec, [4.0 / 3.0, 5.0 / 3.0], atol=1e-12)
        assert uv.embeddable

    def test_unknown_tokens_skipped(self):
        uv = user_vector(TokenSequence("u", ["a", "zzz", "b"]), self._table())
        np.testing.assert_allclose(uv.vec, [0.5, 1.0], atol=1e-12)

    def test_single_token_equals_row(self):
        t = self._table()
        np.testing.assert_array_equal(user_vector(TokenSequence("u", ["g"]), t).vec, t["g"])

    def test_opposite_vectors_cancel(self):
        t = EmbeddingTable(["v", "w"], [[1.5, -2.0], [-1.5, 2.0]])
        np.testing.assert_array_equal(user_vector(TokenSequence("u", ["v", "w"]), t).vec, [0, 0])

    def test_no_known_tokens(self):
        uv = user_vector(TokenSequence("u", ["q"]), self._table())
        assert not uv.embeddable
        np.testing.assert_array_equal(uv.vec, [0.0, 0.0])

    def test_permutation_invariant(self):
        t = self._table()
        a = user_vector(TokenSequence("u", ["a", "b", "g", "a"]), t).vec
        b = user_vector(TokenSequence("u", ["g", "a", "a", "b"]), t).vec
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestEmbeddingTable:
    def test_save_load_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        t = EmbeddingTable(["x", "wtw37", "t0001"], rng.normal(size=(3, 7)) / 3)
        t.save(tmp_path / "e.txt")
        back = EmbeddingTable.load(tmp_path / "e.txt")
        assert back.tokens == t.tokens
        assert np.array_equal(back.vectors, t.vectors)
        back.save(tmp_path / "e2.txt")
        assert (tmp_path / "e.txt").read_bytes() == (tmp_path / "e2.txt").read_bytes()

    def test_lookup(self):
        t = EmbeddingTable(["a", "b"], [[1.0], [2.0]])
        assert "a" in t and "c" not in t
        assert t["b"][0] == 2.0
        assert t.get("c") is None
        with pytest.raises(KeyError):
            t["c"]

    def test_rejects_bad_input(self, tmp_path):
        with pytest.raises(DataError):
            EmbeddingTable(["a", "a"], [[1.0], [2.0]])
        with pytest.raises(DataError):
            EmbeddingTable(["a"], [[np.nan]])
        (tmp_path / "bad.txt").write_text("dim=2 vocab=1\na 1.0\n")
        with pytest.raises(DataError):
            EmbeddingTable.load(tmp_path / "bad.txt")
