import warnings

import numpy as np
import pytest

from dasksvd.coding import Dictionary
from dasksvd.discriminant import ClassStats, dcaf, score_atoms
from dasksvd.errors import ConfigError, DataError, InsufficientDataError
from dasksvd.ksvd import KsvdConfig
from dasksvd.mlp import featurize
from dasksvd.selection import (
    DasKsvdConfig,
    MdasSelection,
    ResampleState,
    SelectionConfig,
    SelectionWarning,
    StructuredDictionary,
    das_ksvd,
    get_atoms,
    load_artifact,
    mdas,
    mdcs,
    rank_for_class,
    sample_data,
)
from dasksvd.signal import SegmentMatrix


def labelled(rng, counts, n=8):
    labels = [c for c, k in counts.items() for _ in range(k)]
    return SegmentMatrix(rng.standard_normal((n, len(labels))), labels, tuple(counts))


def planted_classes(seed, n_per=300, n=8, shared=5):
    """One exclusive atom per class plus ``shared`` atoms every class uses."""
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((n, 3 + shared))
    D /= np.linalg.norm(D, axis=0)
    cols, labels = [], []
    for c, lab in enumerate("NAH"):
        for _ in range(n_per):
            s = rng.integers(3, 3 + shared)
            cols.append(D[:, c] * rng.choice([-1, 1]) * rng.uniform(1, 2) + D[:, s] * rng.standard_normal())
            labels.append(lab)
    return D, SegmentMatrix(np.column_stack(cols), labels)


def fixed_learner(D):
    return lambda X, step: D


def small_das(**kw):
    base = dict(iterations=3, samples_per_class=20,
                ksvd=KsvdConfig(redundancy_factor=1.5, sparsity=2, max_sweeps=3))
    base.update(kw)
    return DasKsvdConfig(**base)


class TestSampleData:
    def test_first_iteration_unmodified(self, rng):
        X = labelled(rng, {"N": 10, "A": 10, "H": 10})
        Y, nxt = sample_data(X, 4, ResampleState.uniform(X.n, tau2=0.5))
        np.testing.assert_array_equal(Y.values, X.values[:, Y.origin])
        assert nxt.iteration == 1
        assert Y.class_counts == {"N": 4, "A": 4, "H": 4}

    def test_renormalisation_example(self, rng):
        X = SegmentMatrix(rng.standard_normal((8, 4)), ["N"] * 4, ("N",))
        Y, nxt = sample_data(X, 2, ResampleState.uniform(4, tau1=0.5))
        drawn = set(Y.origin.tolist())
        expected = [1 / 6 if i in drawn else 1 / 3 for i in range(4)]
        np.testing.assert_allclose(nxt.p, expected, atol=1e-15)

    def test_noise_scale(self, rng):
        X = labelled(rng, {"N": 400, "A": 400}, n=256)
        Y, _ = sample_data(X, 400, ResampleState(np.full(800, 1 / 800), iteration=3, tau2=0.1))
        diff = Y.values - X.values[:, Y.origin]
        ratio = diff.std(axis=0) / X.values[:, Y.origin].std(axis=0, ddof=1)
        assert np.median(ratio) == pytest.approx(0.3, rel=0.05)

    def test_zero_tau2_never_perturbs(self, rng):
        X = labelled(rng, {"N": 10, "A": 10})
        state = ResampleState.uniform(X.n, tau2=0.0)
        for _ in range(5):
            Y, state = sample_data(X, 5, state)
            np.testing.assert_array_equal(Y.values, X.values[:, Y.origin])

    def test_distribution_stays_valid(self, rng):
        X = labelled(rng, {"N": 12, "A": 9})
        state = ResampleState.uniform(X.n, tau1=0.3)
        for _ in range(10):
            Y, state = sample_data(X, 6, state)
            assert state.p.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(state.p >= 0)
            assert len(set(Y.origin.tolist())) == 12

    def test_zero_tau1_resets(self, rng):
        X = SegmentMatrix(rng.standard_normal((8, 3)), ["N"] * 3, ("N",))
        _, nxt = sample_data(X, 3, ResampleState.uniform(3, tau1=0.0))
        np.testing.assert_allclose(nxt.p, 1 / 3)

    def test_deterministic(self, rng):
        X = labelled(rng, {"N": 10, "A": 10})
        state = ResampleState(np.full(20, 0.05), iteration=2, seed=7)
        a, _ = sample_data(X, 5, state)
        b, _ = sample_data(X, 5, state)
        np.testing.assert_array_equal(a.values, b.values)

    def test_class_too_small(self, rng):
        X = labelled(rng, {"N": 10, "A": 3})
        with pytest.raises(InsufficientDataError):
            sample_data(X, 4, ResampleState.uniform(X.n))

    def test_state_size_checked(self, rng):
        X = labelled(rng, {"N": 10, "A": 10})
        with pytest.raises(DataError):
            sample_data(X, 4, ResampleState.uniform(5))


def hand_stats(p):
    p = np.asarray(p, dtype=float)
    return ClassStats(p, (p > 0).astype(float), np.ones_like(p), np.full(p.shape[0], 10),
                      np.rint(p * 10).astype(int), tuple("NAH"[: p.shape[0]]))


class TestGetAtoms:
    def test_dcaf_sort_oracle(self):
        p = np.array([[0.9, 0.1, 0.6, 0.5, 0.0, 0.3],
                      [0.1, 0.8, 0.2, 0.5, 0.7, 0.35]])
        stats = hand_stats(p)
        d = dcaf(stats)
        winner = score_atoms(stats).winner
        picks, fb = get_atoms(stats, d, winner, 2)
        for c in range(2):
            own = [j for j in range(6) if winner[j] == c and d[j] > 0]
            assert picks[c] == sorted(own, key=lambda j: (-d[j], j))[:2]
        assert fb == 0

    def test_rank_ties_by_index(self):
        order = rank_for_class(np.array([0.5, 0.2, 0.5, 0.0, 0.5]), np.array([0, 0, 0, 0, 1]), 0)
        assert order.tolist() == [0, 2, 1]

    def test_fallback_warns_and_counts(self):
        p = np.array([[0.9, 0.8, 0.7], [0.1, 0.5, 0.2]])
        stats = hand_stats(p)
        s = score_atoms(stats)
        with pytest.warns(SelectionWarning):
            picks, fb = get_atoms(stats, s.m_combined, s.winner, 1)
        assert fb == 1
        # least-bad margin p[A] - p[N]: -0.8, -0.3, -0.5
        assert picks[1] == [1] and picks[0] == [0]

    def test_duplicate_guard(self):
        atoms = np.eye(3)[:, [0, 0, 1]]
        p = np.array([[0.9, 0.8, 0.7], [0.0, 0.0, 0.0]])
        stats = hand_stats(p)
        s = score_atoms(stats)
        saved = [[np.eye(3)[:, 0]], []]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SelectionWarning)
            picks, _ = get_atoms(stats, s.m_combined, s.winner, 1, atoms, saved)
        assert picks[0] == [2]


class TestDasKsvd:
    def test_defaults(self):
        cfg = DasKsvdConfig()
        assert (cfg.iterations, cfg.samples_per_class, cfg.tau1, cfg.tau2) == (20, 500, 0.5, 0.1)
        assert (cfg.alpha, cfg.beta) == (0.33, 0.17)

    def test_structure(self, rng):
        X = labelled(rng, {"N": 40, "A": 40, "H": 40})
        S = das_ksvd(X, small_das())
        assert S.n_atoms == 9
        assert S.atoms_per_class() == {"N": 3, "A": 3, "H": 3}
        assert S.class_of_atom.tolist() == ["N"] * 3 + ["A"] * 3 + ["H"] * 3
        assert S.iteration_of_atom.tolist() == [0, 1, 2] * 3
        np.testing.assert_allclose(np.linalg.norm(S.dictionary.atoms, axis=0), 1.0)

    def test_deterministic(self, rng):
        X = labelled(rng, {"N": 40, "A": 40, "H": 40})
        a, b = das_ksvd(X, small_das(seed=5)), das_ksvd(X, small_das(seed=5))
        np.testing.assert_array_equal(a.dictionary.atoms, b.dictionary.atoms)
        np.testing.assert_array_equal(a.iteration_of_atom, b.iteration_of_atom)

    def test_planted_exclusive_atoms(self):
        # recovery depends on KSVD finding the planted atoms; assert a rate
        hits = 0
        for seed in range(10):
            D, X = planted_classes(seed)
            cfg = DasKsvdConfig(iterations=1, samples_per_class=200, seed=seed,
                                ksvd=KsvdConfig(redundancy_factor=1.0, sparsity=2, max_sweeps=30, seed=seed))
            S = das_ksvd(X, cfg)
            corr = [abs(S.sub_dictionary(lab).atoms[:, 0] @ D[:, c]) for c, lab in enumerate("NAH")]
            hits += min(corr) >= 0.9
        assert hits >= 7

    def test_matches_mdcs_with_fixed_dictionary(self, rng):
        X = labelled(rng, {"N": 30, "A": 30, "H": 30})
        D = Dictionary.from_columns(rng.standard_normal((8, 16)))
        cfg = small_das(iterations=1, samples_per_class=30)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SelectionWarning)
            a = das_ksvd(X, cfg, fixed_learner(D))
            b = mdcs(X, SelectionConfig(per_class=1, ksvd=cfg.ksvd), fixed_learner(D))
        np.testing.assert_array_equal(a.dictionary.atoms, b.dictionary.atoms)

    def test_needs_two_classes(self, rng):
        X = SegmentMatrix(rng.standard_normal((8, 30)), ["N"] * 30, ("N",))
        with pytest.raises(ConfigError):
            das_ksvd(X, small_das())

    @pytest.mark.parametrize("kw", [{"iterations": 0}, {"tau1": 1.0}, {"tau2": -0.1}, {"alpha": 0.9}])
    def test_bad_config(self, kw):
        with pytest.raises(ConfigError):
            small_das(**kw).validate()


class TestMdcsMdas:
    @pytest.fixture
    def data(self, rng):
        X = labelled(rng, {"N": 40, "A": 40, "H": 40})
        cfg = SelectionConfig(per_class=3, ksvd=KsvdConfig(redundancy_factor=2.0, sparsity=2, max_sweeps=5))
        return X, cfg

    def test_mdcs_shape(self, data):
        X, cfg = data
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SelectionWarning)
            S = mdcs(X, cfg)
        assert S.n_atoms == 9 and S.method == "mdcs-mc"
        assert S.atoms_per_class() == {"N": 3, "A": 3, "H": 3}

    def test_mdas_ranking_equals_mdcs(self, data):
        X, cfg = data
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SelectionWarning)
            a = mdcs(X, cfg)
            b = mdas(X, cfg)
        D, rows = b
        assert len(set(rows.tolist())) == 9
        np.testing.assert_allclose(a.dictionary.atoms, D.unit_l2()[:, rows])
        assert b.class_of_row.tolist() == a.class_of_atom.tolist()

    def test_dcaf_needs_binary(self, data):
        X, cfg = data
        with pytest.raises(ConfigError):
            mdcs(X, SelectionConfig(per_class=1, measure="dcaf", ksvd=cfg.ksvd))

    def test_binary_method_name(self, rng):
        X = labelled(rng, {"N": 40, "A+H": 40})
        cfg = SelectionConfig(per_class=2, measure="dcaf", ksvd=KsvdConfig(sparsity=2, max_sweeps=3))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SelectionWarning)
            assert mdcs(X, cfg).method == "mdcs-bc"
            assert mdas(X, cfg).method == "mdas-bc"

    def test_full_and_pruned_codes_differ(self):
        # the full dictionary prefers the diagonal atom, which is not selected
        D = Dictionary.from_columns(np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]]))
        x = np.array([[1.0], [1.0]])
        full = featurize(x, MdasSelection(D, np.array([0, 2]), np.array(["N", "A"]), ("N", "A")), 1)
        pruned = featurize(x, D.select([0, 2]), 1)
        np.testing.assert_array_equal(full, [[0.0, 0.0]])
        assert not np.array_equal(full, pruned)


class TestArtifacts:
    def test_structured_round_trip(self, tmp_path, rng):
        X = labelled(rng, {"N": 40, "A": 40, "H": 40})
        S = das_ksvd(X, small_das(seed=3))
        S.save(tmp_path)
        back = load_artifact(tmp_path)
        assert isinstance(back, StructuredDictionary)
        np.testing.assert_array_equal(back.dictionary.atoms, S.dictionary.atoms)
        np.testing.assert_array_equal(back.class_of_atom, S.class_of_atom)
        np.testing.assert_array_equal(back.iteration_of_atom, S.iteration_of_atom)
        assert back.config["seed"] == 3

    def test_mdas_round_trip(self, tmp_path, rng):
        D = Dictionary.from_columns(rng.standard_normal((8, 10)))
        sel = MdasSelection(D, np.array([4, 1]), np.array(["N", "A"]), ("N", "A"))
        sel.save(tmp_path)
        back = load_artifact(tmp_path)
        np.testing.assert_array_equal(back.selected_rows, [4, 1])
        np.testing.assert_array_equal(back.dictionary.atoms, D.atoms)

    def test_missing(self, tmp_path):
        with pytest.raises(DataError):
            load_artifact(tmp_path)
