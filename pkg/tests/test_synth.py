import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dasksvd.errors import SpecError
from dasksvd.signal import annotation_path_for, read_record
from dasksvd.synth import CohortSpec, generate, generate_record, place_events, read_cohort, write_cohort


def spec(**kw):
    base = dict(n_records=4, duration_hours=1.0)
    base.update(kw)
    return CohortSpec(**base)


class TestGenerate:
    def test_rate_zero(self):
        item = generate(spec(n_records=1, ahi_bands=((0, 0),)))[0]
        assert item.true_ahi == 0.0 and item.record.events == ()
        assert abs(item.record.samples.mean() - 96.0) < 0.1

    def test_fifteen_per_hour(self):
        item = generate(spec(n_records=1, duration_hours=8, ahi_bands=((15, 15),)))[0]
        assert len(item.record.events) == 120
        assert item.true_ahi == 15.0

    def test_events_valid(self):
        for item in generate(spec(n_records=6, ahi_bands=((40, 50),))):
            ev = item.record.events
            assert all(e.duration >= 10 for e in ev)
            assert all(a.end_sec <= b.start_sec for a, b in zip(ev, ev[1:]))
            assert {e.label for e in ev} <= {"A", "H"}

    def test_clean_range(self, rng):
        rec, _ = generate_record(spec(noise_std=0.0, apnea_depth=60, hypopnea_depth=50), "r", 40.0, rng)
        assert rec.samples.min() >= 50.0 and rec.samples.max() <= 100.0

    def test_noisy_range(self):
        for item in generate(spec(noise_std=30.0)):
            s = item.record.samples
            assert s.min() >= 0.0 and s.max() <= 100.0

    def test_deterministic(self):
        a, b = generate(spec(seed=3)), generate(spec(seed=3))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.record.samples, y.record.samples)
            assert x.record.events == y.record.events and x.split == y.split
        c = generate(spec(seed=4))
        assert not np.array_equal(a[0].record.samples, c[0].record.samples)

    def test_bands_cycled(self):
        cohort = generate(spec(n_records=8))
        for i, item in enumerate(cohort):
            lo, hi = spec().ahi_bands[i % 4]
            assert lo - 0.5 / 1.0 <= item.true_ahi <= hi + 0.5

    def test_split(self):
        cohort = generate(spec(n_records=10, train_fraction=0.7))
        assert sum(item.split == "train" for item in cohort) == 7

    def test_missing_samples(self):
        s = generate(spec(n_records=1, missing_fraction=0.1))[0].record.samples
        assert 0.05 < np.isnan(s).mean() < 0.15


class TestPlaceEvents:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 40), st.integers(0, 2**32 - 1))
    def test_non_overlapping(self, n, seed):
        rng = np.random.default_rng(seed)
        dur = rng.integers(10, 41, size=n)
        starts = place_events(n, 3600, dur, 20, rng)
        ends = starts + dur
        assert np.all(starts >= 0) and np.all(ends <= 3600)
        assert np.all(starts[1:] >= ends[:-1] + 20)

    def test_infeasible(self, rng):
        with pytest.raises(SpecError):
            place_events(100, 3600, np.full(100, 40), 20, rng)

    def test_infeasible_cohort(self):
        with pytest.raises(SpecError):
            generate(spec(n_records=1, ahi_bands=((100, 100),)))


class TestSpec:
    @pytest.mark.parametrize("kw", [
        {"event_duration": (5, 20)},
        {"hypopnea_depth": 7.0},
        {"apnea_depth": 0.0},
        {"n_records": 0},
        {"apnea_jitter": 1.0},
        {"train_fraction": 0.0},
        {"ahi_bands": ((5, 1),)},
    ])
    def test_invalid(self, kw):
        with pytest.raises(SpecError):
            spec(**kw).validate()

    def test_json_round_trip(self):
        s = spec(seed=9, ahi_bands=((1, 2), (3, 4)))
        assert CohortSpec.from_json(s.to_json()) == s

    def test_unknown_field(self):
        with pytest.raises(SpecError):
            CohortSpec.from_json({"n_record": 3})


class TestFiles:
    def test_round_trip(self, tmp_path):
        cohort = generate(spec(n_records=3, missing_fraction=0.01))
        write_cohort(cohort, tmp_path)
        table = read_cohort(tmp_path / "cohort.csv")
        for item in cohort:
            path = tmp_path / "records" / f"{item.record.id}.csv"
            back = read_record(path, annotation_path_for(path))
            np.testing.assert_array_equal(back.samples, item.record.samples)
            assert back.events == item.record.events
            assert table[item.record.id] == (1.0, item.true_ahi, item.split)
