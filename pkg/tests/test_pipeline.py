from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest

from icuae import ConfigError, DataError
from icuae.pipeline import (
    CARE_UNITS,
    NUM_FEATURES,
    NormalizationStats,
    PatientMatrix,
    RawEvent,
    StayMeta,
    apply_cohort_filters,
    bucket_hourly,
    compute_stats,
    denormalize,
    filter_breakdown,
    impute,
    load_events,
    load_manifest,
    load_split,
    normalize,
    prepare_dataset,
    save_dataset,
    split_stratified,
    true_hour_count,
    window_and_pad,
)

DATA = Path(__file__).parent / "data"
GOLDEN_EVENTS = DATA / "golden_events.csv"
GOLDEN_STAYS = DATA / "golden_stays.csv"


def meta(stay_id=1, age=40.0, unit="MICU", hours=100.0, first=True, died=False):
    return StayMeta(stay_id=stay_id, age=age, care_unit=unit, stay_hours=hours,
                    first_icu_stay=first, in_hospital_mortality=died)


def flat_stats(mean=0.0, low=0.0, high=1.0):
    return NormalizationStats(
        population_mean=np.full(NUM_FEATURES, float(mean)),
        low=np.full(NUM_FEATURES, float(low)),
        high=np.full(NUM_FEATURES, float(high)))


class TestLoadEvents:
    def test_golden_round_trip(self):
        events, stays = load_events(GOLDEN_EVENTS, GOLDEN_STAYS)
        assert events[0] == RawEvent(1, 0, 1.4, 10.0)
        assert events[3] == RawEvent(1, 1, 5.0, 8.0)
        assert events[-1] == RawEvent(3, 2, 1999.9, 9.0)
        assert len(events) == 18
        assert stays[0] == StayMeta(1, 16.5, "MICU", 14.0, True, False)
        assert stays[4] == StayMeta(5, 30.0, "TSICU", 500.0, False, True)

    def test_empty_events_ok(self, tmp_path):
        p = tmp_path / "events.csv"
        p.write_text("stay_id,feature_id,time_offset_hours,value\n")
        events, _ = load_events(p, GOLDEN_STAYS)
        assert events == []

    def test_feature_out_of_range_names_line(self, tmp_path):
        p = tmp_path / "events.csv"
        p.write_text("stay_id,feature_id,time_offset_hours,value\n"
                     "1,0,1.0,5.0\n"
                     "1,30,2.0,5.0\n")
        with pytest.raises(DataError, match="line 3"):
            load_events(p, GOLDEN_STAYS)

    def test_non_numeric_value_names_line(self, tmp_path):
        p = tmp_path / "events.csv"
        p.write_text("stay_id,feature_id,time_offset_hours,value\n"
                     "1,0,1.0,oops\n")
        with pytest.raises(DataError, match="line 2"):
            load_events(p, GOLDEN_STAYS)

    def test_unknown_care_unit_rejected(self, tmp_path):
        p = tmp_path / "stays.csv"
        p.write_text("stay_id,age,care_unit,stay_hours,first_icu_stay,"
                     "in_hospital_mortality\n"
                     "1,40.0,WARD,100.0,1,0\n")
        with pytest.raises(DataError, match="care unit"):
            load_events(GOLDEN_EVENTS, p)

    def test_duplicate_stay_rejected(self, tmp_path):
        p = tmp_path / "stays.csv"
        p.write_text("stay_id,age,care_unit,stay_hours,first_icu_stay,"
                     "in_hospital_mortality\n"
                     "1,40.0,MICU,100.0,1,0\n"
                     "1,41.0,CCU,90.0,1,0\n")
        with pytest.raises(DataError, match="line 3.*duplicate"):
            load_events(GOLDEN_EVENTS, p)

    def test_wrong_columns_rejected(self, tmp_path):
        p = tmp_path / "events.csv"
        p.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(DataError, match="columns"):
            load_events(p, GOLDEN_STAYS)


class TestCohortFilters:
    def test_age_boundary(self):
        kept = apply_cohort_filters([meta(age=15.0), meta(age=16.0)])
        assert [s.age for s in kept] == [16.0]

    def test_stay_hours_inclusive(self):
        kept = apply_cohort_filters([
            meta(hours=11.9), meta(hours=12.0), meta(hours=2000.0),
            meta(hours=2000.1)])
        assert [s.stay_hours for s in kept] == [12.0, 2000.0]

    def test_second_stay_excluded(self):
        assert apply_cohort_filters([meta(first=False)]) == []

    def test_golden_fixture_kept_set(self):
        _, stays = load_events(GOLDEN_EVENTS, GOLDEN_STAYS)
        kept = apply_cohort_filters(stays)
        assert [s.stay_id for s in kept] == [1, 2, 3]

    def test_breakdown_counts(self):
        _, stays = load_events(GOLDEN_EVENTS, GOLDEN_STAYS)
        b = filter_breakdown(stays)
        assert b["total"] == 5
        assert b["dropped_age"] == 1
        assert b["dropped_not_first_stay"] == 1
        assert b["kept"] == 3


class TestBucketing:
    def golden_stay1(self):
        events, stays = load_events(GOLDEN_EVENTS, GOLDEN_STAYS)
        stay1 = [e for e in events if e.stay_id == 1]
        return bucket_hourly(stay1, true_hour_count(14.0))

    def test_round_half_up(self):
        m = self.golden_stay1()
        assert m.grid[1, 0] == 10.0  # t=1.4 rounds down
        assert m.observed_mask[1, 0]

    def test_collision_average(self):
        m = self.golden_stay1()
        # t=1.6 and t=1.5 both land on hour 2: (20 + 30) / 2
        assert m.grid[2, 0] == 25.0

    def test_unobserved_cells_masked(self):
        m = self.golden_stay1()
        assert not m.observed_mask[0, 0]
        assert np.isnan(m.grid[0, 0])
        assert m.observed_mask.sum() == 3  # hours 1,2 on f0 and hour 5 on f1

    def test_late_event_clamped_to_last_hour(self):
        events, _ = load_events(GOLDEN_EVENTS, GOLDEN_STAYS)
        stay3 = [e for e in events if e.stay_id == 3]
        m = bucket_hourly(stay3, true_hour_count(2000.0))
        assert m.true_hours == 2000
        assert m.grid[0, 2] == 7.0  # t=0.2
        assert m.grid[1999, 2] == 9.0  # t=1999.9 rounds past the end

    def test_observed_values_equal_event_means(self):
        # brute force re-average from the raw records
        events, _ = load_events(GOLDEN_EVENTS, GOLDEN_STAYS)
        stay1 = [e for e in events if e.stay_id == 1]
        m = bucket_hourly(stay1, 14)
        for h in range(14):
            for f in range(NUM_FEATURES):
                contributing = [e.value for e in stay1 if e.feature_id == f
                                and min(int(np.floor(e.time_offset + 0.5)), 13) == h]
                if contributing:
                    npt.assert_allclose(m.grid[h, f], np.mean(contributing))
                else:
                    assert not m.observed_mask[h, f]

    def test_mixed_stays_rejected(self):
        events = [RawEvent(1, 0, 0.0, 1.0), RawEvent(2, 0, 0.0, 1.0)]
        with pytest.raises(DataError):
            bucket_hourly(events, 4)


class TestImpute:
    def test_backfill_then_population_mean(self):
        # feature observed only at hour 5: hours 0-4 backfilled, 6+ mean
        events = [RawEvent(1, 0, 5.0, 42.0)]
        m = bucket_hourly(events, 10)
        stats = flat_stats(mean=7.0)
        out = impute(m, stats)
        npt.assert_array_equal(out.grid[:6, 0], np.full(6, 42.0))
        npt.assert_array_equal(out.grid[6:, 0], np.full(4, 7.0))

    def test_fully_observed_unchanged(self):
        events = [RawEvent(2, 0, float(h), 100.0 + h) for h in range(12)]
        m = bucket_hourly(events, 12)
        out = impute(m, flat_stats(mean=0.0))
        npt.assert_array_equal(out.grid[:, 0], 100.0 + np.arange(12))

    def test_never_observed_takes_population_mean(self):
        events = [RawEvent(1, 0, 0.0, 1.0)]
        m = bucket_hourly(events, 5)
        out = impute(m, flat_stats(mean=3.5))
        npt.assert_array_equal(out.grid[:, 1], np.full(5, 3.5))

    def test_forward_fill_option(self):
        events = [RawEvent(1, 0, 5.0, 42.0)]
        m = bucket_hourly(events, 10)
        out = impute(m, flat_stats(mean=7.0), fill="forward")
        npt.assert_array_equal(out.grid[:5, 0], np.full(5, 7.0))
        npt.assert_array_equal(out.grid[5:, 0], np.full(5, 42.0))

    def test_mask_preserved_and_dense(self):
        events = [RawEvent(1, 0, 1.0, 2.0)]
        m = bucket_hourly(events, 4)
        out = impute(m, flat_stats(mean=0.0))
        npt.assert_array_equal(out.observed_mask, m.observed_mask)
        assert np.all(np.isfinite(out.grid))

    def test_bad_fill_mode(self):
        events = [RawEvent(1, 0, 1.0, 2.0)]
        with pytest.raises(ConfigError):
            impute(bucket_hourly(events, 4), flat_stats(), fill="sideways")


class TestComputeStats:
    def observed_everywhere(self, col0):
        grid = np.ones((len(col0), NUM_FEATURES))
        grid[:, 0] = col0
        return PatientMatrix(stay_id=1, grid=grid,
                             observed_mask=np.ones_like(grid, dtype=bool),
                             true_hours=len(col0))

    def test_single_stay_mean(self):
        stats = compute_stats([self.observed_everywhere([2.0, 4.0])])
        assert stats.population_mean[0] == 3.0

    def test_masked_mean_excludes_imputed(self):
        m = self.observed_everywhere([2.0, 4.0, 100.0])
        m.observed_mask[2, 0] = False  # the 100 must not count
        stats = compute_stats([m])
        assert stats.population_mean[0] == 3.0

    def test_degenerate_range_widened(self):
        stats = compute_stats([self.observed_everywhere([5.0, 5.0])])
        assert stats.low[0] == 4.5
        assert stats.high[0] == 5.5
        # remaining features are constant 1.0
        assert stats.low[1] == 0.5 and stats.high[1] == 1.5

    def test_never_observed_feature_rejected(self):
        m = self.observed_everywhere([1.0, 2.0])
        m.observed_mask[:, 7] = False
        with pytest.raises(ConfigError, match="7"):
            compute_stats([m])

    def test_empty_train_rejected(self):
        with pytest.raises(ConfigError):
            compute_stats([])


class TestNormalize:
    def stats_10_20(self):
        s = flat_stats(mean=15.0, low=10.0, high=20.0)
        return s

    def grid_matrix(self, values):
        grid = np.full((len(values), NUM_FEATURES), 15.0)
        grid[:, 0] = values
        return PatientMatrix(stay_id=1, grid=grid,
                             observed_mask=np.ones_like(grid, dtype=bool),
                             true_hours=len(values))

    def test_endpoints(self):
        out = normalize(self.grid_matrix([10.0, 20.0]), self.stats_10_20())
        assert out.grid[0, 0] == 0.0
        assert out.grid[1, 0] == 1.0

    def test_clamping(self):
        out = normalize(self.grid_matrix([25.0, 5.0]), self.stats_10_20())
        assert out.grid[0, 0] == 1.0
        assert out.grid[1, 0] == 0.0

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        values = rng.uniform(8.0, 22.0, size=6)
        out = normalize(self.grid_matrix(values), self.stats_10_20())
        back = denormalize(out.grid, self.stats_10_20())
        npt.assert_allclose(back[:, 0], np.clip(values, 10.0, 20.0),
                            rtol=0, atol=1e-12)

    def test_all_cells_in_unit_interval(self):
        rng = np.random.default_rng(4)
        values = rng.uniform(-100.0, 100.0, size=20)
        out = normalize(self.grid_matrix(values), self.stats_10_20())
        assert np.all(out.grid >= 0.0) and np.all(out.grid <= 1.0)


class TestSplit:
    def cohort(self, n=1000, deaths=100):
        return ([meta(stay_id=i, died=True) for i in range(deaths)]
                + [meta(stay_id=i, died=False) for i in range(deaths, n)])

    def test_stratified_counts(self):
        split = split_stratified(self.cohort(), seed=11)
        by_name = {name: [] for name in ("train", "validation", "test")}
        for stay_id, name in split.assignment.items():
            by_name[name].append(stay_id)
        train_deaths = sum(1 for i in by_name["train"] if i < 100)
        assert abs(train_deaths - 70) <= 1
        assert abs(len(by_name["train"]) - 700) <= 2
        assert abs((len(by_name["train"]) - train_deaths) - 630) <= 1

    def test_partition(self):
        split = split_stratified(self.cohort(200, 30), seed=5)
        assert len(split.assignment) == 200
        ids = (split.ids_for("train") + split.ids_for("validation")
               + split.ids_for("test"))
        assert sorted(ids) == list(range(200))

    def test_deterministic(self):
        a = split_stratified(self.cohort(300, 40), seed=9)
        b = split_stratified(self.cohort(300, 40), seed=9)
        assert a.assignment == b.assignment

    def test_seed_changes_assignment(self):
        a = split_stratified(self.cohort(300, 40), seed=9)
        b = split_stratified(self.cohort(300, 40), seed=10)
        assert a.assignment != b.assignment

    def test_mortality_rate_within_two_points(self):
        cohort = self.cohort(1000, 120)
        split = split_stratified(cohort, seed=13)
        flags = {s.stay_id: s.in_hospital_mortality for s in cohort}
        for name in ("train", "validation", "test"):
            ids = split.ids_for(name)
            rate = sum(flags[i] for i in ids) / len(ids)
            assert abs(rate - 0.12) <= 0.02

    def test_tiny_stratum_warns(self):
        cohort = [meta(stay_id=1, died=True)] + \
            [meta(stay_id=i, died=False) for i in range(2, 30)]
        with pytest.warns(UserWarning, match="stratum"):
            split_stratified(cohort, seed=1)


class TestWindowing:
    def normalized_matrix(self, hours):
        rng = np.random.default_rng(hours)
        grid = rng.random((hours, NUM_FEATURES))
        return PatientMatrix(stay_id=1, grid=grid,
                             observed_mask=np.ones_like(grid, dtype=bool),
                             true_hours=hours)

    def test_short_stay_padded(self):
        seq, flat = window_and_pad(self.normalized_matrix(12), 64)
        assert seq.shape == (64, NUM_FEATURES)
        npt.assert_array_equal(seq[12:], np.zeros((52, NUM_FEATURES)))
        assert flat.shape == (64 * 30,)

    def test_flat_width_interval_32(self):
        _, flat = window_and_pad(self.normalized_matrix(40), 32)
        assert flat.shape == (960,)

    def test_hour_major_layout(self):
        seq, flat = window_and_pad(self.normalized_matrix(8), 4)
        assert flat[37] == seq[1][7]
        npt.assert_array_equal(flat.reshape(4, 30), seq)

    def test_long_stay_truncated(self):
        m = self.normalized_matrix(100)
        seq, _ = window_and_pad(m, 16)
        npt.assert_array_equal(seq, m.grid[:16])


@pytest.fixture(scope="module")
def cohort_dir(tmp_path_factory):
    from icuae.synthetic import generate_synthetic_cohort
    out = tmp_path_factory.mktemp("cohort")
    generate_synthetic_cohort(60, seed=21, out_dir=out)
    return out


class TestPrepareAndContainer:

    def test_prepare_idempotent_hash(self, cohort_dir, tmp_path):
        hashes = []
        for sub in ("a", "b"):
            ds = prepare_dataset(cohort_dir / "events.csv",
                                 cohort_dir / "stays.csv",
                                 interval_hours=16, seed=3)
            hashes.append(save_dataset(ds, tmp_path / sub))
        assert hashes[0] == hashes[1]

    def test_no_leak_from_test_split(self, cohort_dir, tmp_path):
        import pandas as pd
        ds = prepare_dataset(cohort_dir / "events.csv",
                             cohort_dir / "stays.csv",
                             interval_hours=16, seed=3)
        victim = ds.splits["test"].stay_ids[0]
        events = pd.read_csv(cohort_dir / "events.csv")
        hit = events.index[events["stay_id"] == victim][0]
        events.loc[hit, "value"] = events.loc[hit, "value"] + 500.0
        tampered = tmp_path / "tampered.csv"
        events.to_csv(tampered, index=False, lineterminator="\n")
        ds2 = prepare_dataset(tampered, cohort_dir / "stays.csv",
                              interval_hours=16, seed=3)
        npt.assert_array_equal(ds.stats.population_mean,
                               ds2.stats.population_mean)
        npt.assert_array_equal(ds.stats.low, ds2.stats.low)
        npt.assert_array_equal(ds.stats.high, ds2.stats.high)

    def test_windows_in_unit_interval_no_gaps(self, cohort_dir):
        ds = prepare_dataset(cohort_dir / "events.csv",
                             cohort_dir / "stays.csv",
                             interval_hours=16, seed=3)
        for name in ("train", "validation", "test"):
            w = ds.splits[name].windows.windows
            assert np.all(np.isfinite(w))
            assert np.all((w >= 0.0) & (w <= 1.0))

    def test_save_load_round_trip(self, cohort_dir, tmp_path):
        ds = prepare_dataset(cohort_dir / "events.csv",
                             cohort_dir / "stays.csv",
                             interval_hours=16, seed=3)
        save_dataset(ds, tmp_path / "ds")
        loaded = load_split(tmp_path / "ds", "validation")
        npt.assert_array_equal(loaded.windows.windows,
                               ds.splits["validation"].windows.windows)
        npt.assert_array_equal(loaded.windows.true_hours,
                               ds.splits["validation"].windows.true_hours)
        assert loaded.stay_ids == ds.splits["validation"].stay_ids
        assert [s.care_unit for s in loaded.stays] == \
            [s.care_unit for s in ds.splits["validation"].stays]

    def test_unknown_event_stay_rejected(self, tmp_path):
        bad = tmp_path / "extra.csv"
        bad.write_text(GOLDEN_EVENTS.read_text() + "999999,0,1.0,5.0\n")
        with pytest.raises(DataError, match="unknown stay"):
            prepare_dataset(bad, GOLDEN_STAYS, interval_hours=4, seed=3)

    def test_care_unit_restriction(self, cohort_dir):
        ds = prepare_dataset(cohort_dir / "events.csv",
                             cohort_dir / "stays.csv",
                             interval_hours=16, seed=3, care_unit="MICU")
        for split in ds.splits.values():
            assert all(s.care_unit == "MICU" for s in split.stays)

    def test_bad_care_unit_rejected(self, cohort_dir):
        with pytest.raises(ConfigError):
            prepare_dataset(cohort_dir / "events.csv",
                            cohort_dir / "stays.csv",
                            interval_hours=16, seed=3, care_unit="WARD")

    def test_schema_recorded_in_manifest(self, cohort_dir, tmp_path):
        # The sibling features.csv is picked up without an explicit path.
        ds = prepare_dataset(cohort_dir / "events.csv",
                             cohort_dir / "stays.csv",
                             interval_hours=16, seed=3)
        assert len(ds.feature_names) == NUM_FEATURES
        assert ds.feature_names[0] == "heart_rate"
        assert ds.schema_hash is not None
        save_dataset(ds, tmp_path / "ds")
        manifest = load_manifest(tmp_path / "ds")
        assert manifest["feature_names"] == ds.feature_names
        assert manifest["schema_hash"] == ds.schema_hash

    def test_missing_schema_gets_placeholders(self, cohort_dir, tmp_path):
        for name in ("events.csv", "stays.csv"):
            (tmp_path / name).write_bytes((cohort_dir / name).read_bytes())
        ds = prepare_dataset(tmp_path / "events.csv", tmp_path / "stays.csv",
                             interval_hours=4, seed=3)
        assert ds.schema_hash is None
        assert ds.feature_names[7] == "feature_07"

    def test_malformed_schema_rejected(self, cohort_dir, tmp_path):
        bad = tmp_path / "features.csv"
        bad.write_text("0,heart_rate,bpm\n1,odd line\n")
        with pytest.raises(DataError, match="feature_id,name,unit"):
            prepare_dataset(cohort_dir / "events.csv",
                            cohort_dir / "stays.csv",
                            interval_hours=4, seed=3, schema_path=bad)

    def test_incomplete_schema_rejected(self, cohort_dir, tmp_path):
        bad = tmp_path / "features.csv"
        bad.write_text("0,heart_rate,bpm\n2,spo2,%\n")
        with pytest.raises(DataError, match="0..29"):
            prepare_dataset(cohort_dir / "events.csv",
                            cohort_dir / "stays.csv",
                            interval_hours=4, seed=3, schema_path=bad)
