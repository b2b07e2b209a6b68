"""Data model tests: label views, splits, synthetic generation, CSV."""

import numpy as np
import pytest

from dfcvr.data import (
    PAY_TS_MISSING,
    Dataset,
    Observed,
    Oracle,
    Retrain,
    Sample,
    SyntheticConfig,
    arrival_set,
    generate_synthetic,
    label_of,
    labels_of,
    load_csv,
    reversal_set,
    save_csv,
    temporal_split,
)
from dfcvr.errors import ConfigError, DataFormatError


def _dataset(clicks, pays, d=3, seed=0):
    rng = np.random.default_rng(seed)
    clicks = np.asarray(clicks, dtype=np.int64)
    pays = np.asarray(pays, dtype=np.int64)
    return Dataset(rng.standard_normal((clicks.size, d)), clicks, pays)


class TestSampleAndDataset:
    def test_pay_before_click_rejected(self):
        with pytest.raises(ValueError):
            Sample(features=np.zeros(3), click_ts=100, pay_ts=50)
        with pytest.raises(ValueError):
            _dataset([100], [50])

    def test_missing_pay_roundtrip_through_getitem(self):
        ds = _dataset([10, 20], [PAY_TS_MISSING, 25])
        assert ds[0].pay_ts is None
        assert ds[1].pay_ts == 25
        assert len(ds) == 2
        assert ds.feature_dim == 3

    def test_from_samples_matches_columns(self):
        ds = _dataset([10, 20, 30], [12, PAY_TS_MISSING, 40])
        rebuilt = Dataset.from_samples([ds[i] for i in range(len(ds))])
        np.testing.assert_array_equal(rebuilt.features, ds.features)
        np.testing.assert_array_equal(rebuilt.click_ts, ds.click_ts)
        np.testing.assert_array_equal(rebuilt.pay_ts, ds.pay_ts)

    def test_columns_are_read_only(self):
        ds = _dataset([10], [12])
        with pytest.raises(ValueError):
            ds.features[0, 0] = 1.0

    def test_non_finite_features_rejected(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[np.nan]]), np.array([1]), np.array([-1]))


class TestLabelViews:
    def test_no_conversion_is_negative_under_every_view(self):
        s = Sample(features=np.zeros(2), click_ts=100, pay_ts=None)
        for view in (Observed(300), Retrain(600), Oracle()):
            assert label_of(s, view) == 0

    def test_fake_negative_reverses_under_later_cutoff(self):
        s = Sample(features=np.zeros(2), click_ts=100, pay_ts=500)
        assert label_of(s, Observed(300)) == 0
        assert label_of(s, Retrain(600)) == 1

    def test_true_positive_everywhere(self):
        s = Sample(features=np.zeros(2), click_ts=100, pay_ts=200)
        assert label_of(s, Observed(300)) == 1
        assert label_of(s, Oracle()) == 1

    def test_cutoff_monotonicity_property(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            click = int(rng.integers(0, 1000))
            pay = (
                None
                if rng.random() < 0.4
                else click + int(rng.integers(0, 2000))
            )
            s = Sample(features=np.zeros(1), click_ts=click, pay_ts=pay)
            t1, t2 = sorted(rng.integers(1, 3000, size=2).tolist())
            l1 = label_of(s, Observed(t1))
            l2 = label_of(s, Observed(t2))
            assert l1 <= l2 <= label_of(s, Oracle())

    def test_vectorized_labels_match_scalar(self):
        ds = _dataset(
            [10, 20, 30, 40],
            [PAY_TS_MISSING, 25, 100, 41],
        )
        for view in (Observed(30), Retrain(90), Oracle()):
            vec = labels_of(ds, view)
            scalar = [label_of(ds[i], view) for i in range(len(ds))]
            np.testing.assert_array_equal(vec, np.array(scalar, dtype=float))


class TestTemporalSplit:
    def test_half_open_boundaries(self):
        # t=100, t_prime=300, d_test=50: valid [250,300), test [300,350)
        ds = _dataset(
            [99, 100, 250, 299, 300, 349, 350],
            [PAY_TS_MISSING] * 7,
        )
        train, valid, test = temporal_split(ds, 100, 300, 50)
        np.testing.assert_array_equal(train.click_ts, [99])
        np.testing.assert_array_equal(valid.click_ts, [250, 299])
        np.testing.assert_array_equal(test.click_ts, [300, 349])

    def test_empty_split_is_an_error(self):
        ds = _dataset([10, 20, 30], [PAY_TS_MISSING] * 3)
        with pytest.raises(ConfigError):
            temporal_split(ds, 100, 300, 50)

    def test_window_overlap_is_an_error(self):
        ds = _dataset([10, 260, 310], [PAY_TS_MISSING] * 3)
        with pytest.raises(ConfigError):
            temporal_split(ds, 280, 300, 50)

    def test_partition_property(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            clicks = rng.integers(0, 1000, size=300)
            ds = _dataset(clicks, np.full(300, PAY_TS_MISSING), seed=trial)
            t, t_prime, d_test = 400, 800, 100
            if not (
                (clicks < t).any()
                and ((clicks >= 700) & (clicks < 800)).any()
                and ((clicks >= 800) & (clicks < 900)).any()
            ):
                continue
            train, valid, test = temporal_split(ds, t, t_prime, d_test)
            n_covered = len(train) + len(valid) + len(test)
            in_gap = ((clicks >= t) & (clicks < t_prime - d_test)).sum()
            outside = (clicks >= t_prime + d_test).sum()
            assert n_covered + in_gap + outside == 300


class TestReversalSet:
    def test_empty_when_no_conversions_in_window(self):
        ds = _dataset([10, 20], [15, PAY_TS_MISSING])
        assert reversal_set(ds, 100, 200).size == 0

    def test_pay_at_t_included_pay_before_t_excluded(self):
        ds = _dataset([10, 20, 30], [100, 90, 150])
        j = reversal_set(ds, 100, 200)
        # pay at exactly t reverses; pay before t was a true positive
        np.testing.assert_array_equal(j, [0, 2])

    def test_pay_at_t_prime_excluded(self):
        ds = _dataset([10], [200])
        assert reversal_set(ds, 100, 200).size == 0

    def test_requires_ordered_window(self):
        ds = _dataset([10], [20])
        with pytest.raises(ConfigError):
            reversal_set(ds, 200, 100)

    def test_partitions_pre_cutoff_clicks(self):
        rng = np.random.default_rng(3)
        for trial in range(30):
            n = 200
            clicks = rng.integers(0, 500, size=n)
            has_pay = rng.random(n) < 0.6
            pays = np.where(
                has_pay,
                clicks + rng.integers(0, 800, size=n),
                PAY_TS_MISSING,
            )
            ds = _dataset(clicks, pays, seed=trial)
            t, t_prime = 300, 700
            j = set(reversal_set(ds, t, t_prime).tolist())
            pre = np.flatnonzero(clicks < t)
            true_pos = {
                int(i) for i in pre
                if pays[i] != PAY_TS_MISSING and pays[i] < t
            }
            still_neg = {
                int(i) for i in pre
                if pays[i] == PAY_TS_MISSING or pays[i] >= t_prime
            }
            assert j | true_pos | still_neg == set(pre.tolist())
            assert not (j & true_pos) and not (j & still_neg)
            assert not (true_pos & still_neg)


class TestArrivalSet:
    def test_window_membership_and_labels(self):
        ds = _dataset(
            [99, 100, 150, 199, 200],
            [PAY_TS_MISSING, 199, PAY_TS_MISSING, 500, 300],
        )
        arrived, labels = arrival_set(ds, 100, 200)
        np.testing.assert_array_equal(arrived.click_ts, [100, 150, 199])
        # labels observed at t_prime=200: pay 199 < 200 is positive
        np.testing.assert_array_equal(labels, [1.0, 0.0, 0.0])

    def test_empty_window(self):
        ds = _dataset([10], [PAY_TS_MISSING])
        arrived, labels = arrival_set(ds, 100, 200)
        assert len(arrived) == 0
        assert labels.size == 0


class TestGenerateSynthetic:
    def _config(self, **kwargs):
        base = dict(
            n=10_000,
            feature_dim=8,
            target_cvr=0.2227,
            delay_mean_tau=50_000.0,
            horizon=1_000_000,
            drift_angle_per_day=0.0,
            seed=11,
        )
        base.update(kwargs)
        return SyntheticConfig(**base)

    def test_empirical_cvr_near_target(self):
        ds = generate_synthetic(self._config(n=200_000))
        cvr = float(np.mean(ds.pay_ts != PAY_TS_MISSING))
        assert 0.20 <= cvr <= 0.245

    def test_delay_mean_within_five_percent(self):
        ds = generate_synthetic(self._config(n=150_000))
        conv = ds.pay_ts != PAY_TS_MISSING
        delays = (ds.pay_ts - ds.click_ts)[conv]
        assert abs(delays.mean() - 50_000.0) / 50_000.0 < 0.05

    def test_same_seed_reproduces_different_seed_differs(self):
        a = generate_synthetic(self._config())
        b = generate_synthetic(self._config())
        c = generate_synthetic(self._config(seed=12))
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.click_ts, b.click_ts)
        np.testing.assert_array_equal(a.pay_ts, b.pay_ts)
        assert not np.array_equal(a.features, c.features)

    def test_zero_drift_is_stationary_in_conversion_rate(self):
        # with no drift, early and late halves convert at the same rate
        ds = generate_synthetic(self._config(n=100_000))
        conv = ds.pay_ts != PAY_TS_MISSING
        early = conv[ds.click_ts < 500_000].mean()
        late = conv[ds.click_ts >= 500_000].mean()
        assert abs(early - late) < 0.01

    def test_invariants_hold(self):
        ds = generate_synthetic(self._config(n=5_000))
        conv = ds.pay_ts != PAY_TS_MISSING
        assert np.all(ds.pay_ts[conv] >= ds.click_ts[conv])
        assert ds.click_ts.min() >= 0
        assert ds.click_ts.max() < 1_000_000

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            self._config(target_cvr=1.5).validate()
        with pytest.raises(ConfigError):
            self._config(n=0).validate()
        with pytest.raises(ConfigError):
            self._config(delay_mean_tau=0.0).validate()


class TestCsvRoundTrip:
    def test_roundtrip_identity(self, tmp_path):
        ds = generate_synthetic(
            SyntheticConfig(
                n=500,
                feature_dim=4,
                target_cvr=0.3,
                delay_mean_tau=1000.0,
                horizon=10_000,
                seed=5,
            )
        )
        path = str(tmp_path / "data.csv")
        save_csv(ds, path)
        loaded = load_csv(path)
        np.testing.assert_array_equal(loaded.features, ds.features)
        np.testing.assert_array_equal(loaded.click_ts, ds.click_ts)
        np.testing.assert_array_equal(loaded.pay_ts, ds.pay_ts)

    def test_minus_one_means_missing(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("click_ts,pay_ts,f0\n5,-1,0.25\n7,9,1.5\n")
        ds = load_csv(str(path))
        assert ds[0].pay_ts is None
        assert ds[1].pay_ts == 9

    def test_wrong_column_count_names_line(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("click_ts,pay_ts,f0,f1\n5,-1,0.25,0.5\n7,9,1.5\n")
        with pytest.raises(DataFormatError, match=":3"):
            load_csv(str(path))

    def test_non_numeric_field_names_line(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("click_ts,pay_ts,f0\nfive,-1,0.25\n")
        with pytest.raises(DataFormatError, match=":2"):
            load_csv(str(path))

    def test_pay_before_click_names_line(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("click_ts,pay_ts,f0\n100,50,0.25\n")
        with pytest.raises(DataFormatError, match=":2"):
            load_csv(str(path))

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("click,pay,f0\n5,-1,0.25\n")
        with pytest.raises(DataFormatError, match=":1"):
            load_csv(str(path))
