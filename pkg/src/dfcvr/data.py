"""Click/conversion data model with delayed labels.

A sample is a click event: a feature vector, a click timestamp, and an
optional payment timestamp. Conversions arrive with a delay, so the label
of a sample depends on *when you look*: a click whose payment lands after
the training cutoff is observed as a negative even though it will convert.
Label views make that observation time explicit.

Timestamps are integer seconds. All time windows are half-open `[a, b)`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataFormatError, NumericalError

Timestamp = int

SECONDS_PER_DAY = 86_400

# Serialized sentinel for "no conversion observed in the log".
PAY_TS_MISSING = -1


@dataclass(eq=False)
class Sample:
    """One click event. ``pay_ts`` is None when no conversion was logged."""

    features: np.ndarray
    click_ts: Timestamp
    pay_ts: Timestamp | None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 1:
            raise ValueError("sample features must be a 1-d vector")
        if self.pay_ts is not None and self.pay_ts < self.click_ts:
            raise ValueError(
                f"pay_ts {self.pay_ts} precedes click_ts {self.click_ts}"
            )


class Dataset:
    """Columnar, read-only store of click events.

    A sample's position in the dataset is its identity: operations that
    report index sets (such as :func:`reversal_set`) refer to row positions
    here. ``pay_ts`` uses -1 internally for missing conversions.
    """

    def __init__(
        self,
        features: np.ndarray,
        click_ts: np.ndarray,
        pay_ts: np.ndarray,
    ) -> None:
        features = np.ascontiguousarray(features, dtype=np.float64)
        click_ts = np.ascontiguousarray(click_ts, dtype=np.int64)
        pay_ts = np.ascontiguousarray(pay_ts, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError("features must be a 2-d array (n, d)")
        n = features.shape[0]
        if click_ts.shape != (n,) or pay_ts.shape != (n,):
            raise ValueError("features, click_ts and pay_ts lengths differ")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite values")
        if n and click_ts.min() < 0:
            raise ValueError("click_ts must be non-negative")
        has_pay = pay_ts != PAY_TS_MISSING
        if np.any(pay_ts[~has_pay] != PAY_TS_MISSING):
            raise ValueError("missing pay_ts must use the -1 sentinel")
        if np.any(pay_ts[has_pay] < click_ts[has_pay]):
            raise ValueError("pay_ts precedes click_ts for some samples")
        for arr in (features, click_ts, pay_ts):
            arr.setflags(write=False)
        self._features = features
        self._click_ts = click_ts
        self._pay_ts = pay_ts

    @property
    def features(self) -> np.ndarray:
        return self._features

    @property
    def click_ts(self) -> np.ndarray:
        return self._click_ts

    @property
    def pay_ts(self) -> np.ndarray:
        return self._pay_ts

    @property
    def feature_dim(self) -> int:
        return self._features.shape[1]

    def __len__(self) -> int:
        return self._features.shape[0]

    def __getitem__(self, index: int) -> Sample:
        pay = int(self._pay_ts[index])
        return Sample(
            features=self._features[index].copy(),
            click_ts=int(self._click_ts[index]),
            pay_ts=None if pay == PAY_TS_MISSING else pay,
        )

    @classmethod
    def from_samples(cls, samples: list[Sample]) -> "Dataset":
        if not samples:
            raise ValueError("cannot build a dataset from zero samples")
        features = np.stack([s.features for s in samples])
        click_ts = np.array([s.click_ts for s in samples], dtype=np.int64)
        pay_ts = np.array(
            [PAY_TS_MISSING if s.pay_ts is None else s.pay_ts for s in samples],
            dtype=np.int64,
        )
        return cls(features, click_ts, pay_ts)

    def subset(self, indices: np.ndarray) -> "Dataset":
        """New dataset holding the selected rows, in the given order."""
        return Dataset(
            self._features[indices],
            self._click_ts[indices],
            self._pay_ts[indices],
        )


@dataclass(frozen=True)
class Observed:
    """Labels as visible at training time: positive iff payment before cutoff."""

    cutoff: Timestamp


@dataclass(frozen=True)
class Retrain:
    """Labels as visible at a later cutoff (typically the evaluation time)."""

    cutoff: Timestamp


@dataclass(frozen=True)
class Oracle:
    """Ground-truth labels: positive iff the click ever converts."""


LabelView = Observed | Retrain | Oracle


def label_of(sample: Sample, view: LabelView) -> int:
    """Label of one sample under a view. Returns 0 or 1."""
    if sample.pay_ts is None:
        return 0
    if isinstance(view, Oracle):
        return 1
    if isinstance(view, (Observed, Retrain)):
        return int(sample.pay_ts < view.cutoff)
    raise TypeError(f"unknown label view: {view!r}")


def labels_of(dataset: Dataset, view: LabelView) -> np.ndarray:
    """Vectorized labels for every row, as float64 zeros and ones."""
    has_pay = dataset.pay_ts != PAY_TS_MISSING
    if isinstance(view, Oracle):
        return has_pay.astype(np.float64)
    if isinstance(view, (Observed, Retrain)):
        return (has_pay & (dataset.pay_ts < view.cutoff)).astype(np.float64)
    raise TypeError(f"unknown label view: {view!r}")


def temporal_split(
    dataset: Dataset, t: Timestamp, t_prime: Timestamp, d_test: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Split by click time into train / validation / test windows.

    Train is ``[0, t)``, validation is ``[t_prime - d_test, t_prime)``,
    test is ``[t_prime, t_prime + d_test)``.
    """
    if d_test <= 0:
        raise ConfigError("d_test must be positive")
    if t > t_prime - d_test:
        raise ConfigError(
            f"training cutoff t={t} overlaps the validation window "
            f"[{t_prime - d_test}, {t_prime})"
        )
    clicks = dataset.click_ts
    parts = {
        "train": clicks < t,
        "valid": (clicks >= t_prime - d_test) & (clicks < t_prime),
        "test": (clicks >= t_prime) & (clicks < t_prime + d_test),
    }
    out = []
    for name, mask in parts.items():
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise ConfigError(f"{name} split is empty for the given windows")
        out.append(dataset.subset(idx))
    return out[0], out[1], out[2]


def reversal_set(
    dataset: Dataset, t: Timestamp, t_prime: Timestamp
) -> np.ndarray:
    """Indices of pre-``t`` clicks whose payment lands in ``[t, t_prime)``.

    These are exactly the samples labeled 0 under ``Observed(t)`` but 1
    under ``Retrain(t_prime)``: the fake negatives whose labels reverse.
    Returns a sorted int64 index array into ``dataset``.
    """
    if t >= t_prime:
        raise ConfigError(f"need t < t_prime, got t={t}, t_prime={t_prime}")
    mask = (
        (dataset.click_ts < t)
        & (dataset.pay_ts != PAY_TS_MISSING)
        & (dataset.pay_ts >= t)
        & (dataset.pay_ts < t_prime)
    )
    return np.flatnonzero(mask).astype(np.int64)


def arrival_set(
    dataset: Dataset, t: Timestamp, t_prime: Timestamp
) -> tuple[Dataset, np.ndarray]:
    """Clicks arriving in ``[t, t_prime)`` with labels observed at ``t_prime``.

    Returns the arrived samples and their ``Observed(t_prime)`` labels. The
    result may be empty when no clicks land in the window.
    """
    if t >= t_prime:
        raise ConfigError(f"need t < t_prime, got t={t}, t_prime={t_prime}")
    idx = np.flatnonzero(
        (dataset.click_ts >= t) & (dataset.click_ts < t_prime)
    )
    arrived = dataset.subset(idx)
    return arrived, labels_of(arrived, Observed(t_prime))


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings for a synthetic click log.

    ``drift_angle_per_day`` rotates the latent weight vector over time;
    zero gives a stationary environment. ``delay_mean_tau`` is the mean of
    the exponential conversion delay, in seconds.
    """

    n: int
    feature_dim: int
    target_cvr: float
    delay_mean_tau: float
    horizon: int
    drift_angle_per_day: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.n <= 0:
            raise ConfigError("n must be positive")
        if self.feature_dim <= 0:
            raise ConfigError("feature_dim must be positive")
        if not 0.0 < self.target_cvr < 1.0:
            raise ConfigError("target_cvr must lie strictly in (0, 1)")
        if self.delay_mean_tau <= 0:
            raise ConfigError("delay_mean_tau must be positive")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


def _rng(seed: int) -> np.random.Generator:
    # Counter-based generator: a fixed seed fixes the whole stream layout.
    return np.random.Generator(np.random.Philox(key=seed))


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Draw a synthetic click log with exponential conversion delays.

    Features are standard normal. The conversion probability is a sigmoid
    of a linear score whose weight vector slowly rotates when drift is
    enabled; the intercept is bisected so the mean probability matches
    ``target_cvr``. Identical configs produce identical datasets.
    """
    config.validate()
    rng = _rng(config.seed)
    n, d = config.n, config.feature_dim

    click_ts = rng.integers(0, config.horizon, size=n, dtype=np.int64)
    features = rng.standard_normal((n, d))

    # Latent direction plus an orthogonal partner spanning the drift plane.
    u1 = rng.standard_normal(d)
    u1 /= np.linalg.norm(u1)
    aux = rng.standard_normal(d)
    u2 = aux - (aux @ u1) * u1
    u2_norm = np.linalg.norm(u2)
    if u2_norm < 1e-12:
        raise NumericalError("degenerate drift plane; try another seed")
    u2 /= u2_norm

    angle = config.drift_angle_per_day * (click_ts / SECONDS_PER_DAY)
    # Per-sample rotated weight: w(t) = cos(a) u1 + sin(a) u2, unit norm.
    score = (features @ u1) * np.cos(angle) + (features @ u2) * np.sin(angle)

    def mean_cvr(intercept: float) -> float:
        return float(np.mean(1.0 / (1.0 + np.exp(-(score + intercept)))))

    lo, hi = -40.0, 40.0
    if not mean_cvr(lo) <= config.target_cvr <= mean_cvr(hi):
        raise NumericalError(
            f"target_cvr {config.target_cvr} not bracketed by intercept "
            f"range [{lo}, {hi}]"
        )
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if mean_cvr(mid) < config.target_cvr:
            lo = mid
        else:
            hi = mid
    intercept = 0.5 * (lo + hi)

    probs = 1.0 / (1.0 + np.exp(-(score + intercept)))
    converted = rng.random(n) < probs
    delays = np.rint(rng.exponential(config.delay_mean_tau, size=n))
    pay_ts = np.where(
        converted, click_ts + delays.astype(np.int64), PAY_TS_MISSING
    )
    return Dataset(features, click_ts, pay_ts)


def save_csv(dataset: Dataset, path: str) -> None:
    """Write ``click_ts,pay_ts,f0,...`` rows; floats keep full precision."""
    d = dataset.feature_dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["click_ts", "pay_ts"] + [f"f{i}" for i in range(d)])
        for i in range(len(dataset)):
            row = [int(dataset.click_ts[i]), int(dataset.pay_ts[i])]
            row += [repr(float(v)) for v in dataset.features[i]]
            writer.writerow(row)


def load_csv(path: str) -> Dataset:
    """Read a dataset written by :func:`save_csv`.

    Errors name the offending 1-based line number. Loading what save_csv
    wrote reproduces the dataset exactly.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}:1: file is empty") from None
        if len(header) < 3 or header[0] != "click_ts" or header[1] != "pay_ts":
            raise DataFormatError(
                f"{path}:1: header must start with click_ts,pay_ts and have "
                "at least one feature column"
            )
        d = len(header) - 2
        expected = [f"f{i}" for i in range(d)]
        if header[2:] != expected:
            raise DataFormatError(
                f"{path}:1: feature columns must be named f0..f{d - 1}"
            )
        clicks: list[int] = []
        pays: list[int] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 2:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {d + 2} columns, "
                    f"got {len(row)}"
                )
            try:
                click = int(row[0])
                pay = int(row[1])
                feats = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if click < 0:
                raise DataFormatError(
                    f"{path}:{lineno}: click_ts must be non-negative"
                )
            if pay != PAY_TS_MISSING and pay < click:
                raise DataFormatError(
                    f"{path}:{lineno}: pay_ts {pay} precedes click_ts {click}"
                )
            if pay < PAY_TS_MISSING:
                raise DataFormatError(
                    f"{path}:{lineno}: pay_ts must be -1 or >= click_ts"
                )
            if not all(np.isfinite(feats)):
                raise DataFormatError(
                    f"{path}:{lineno}: non-finite feature value"
                )
            clicks.append(click)
            pays.append(pay)
            rows.append(feats)
        if not rows:
            raise DataFormatError(f"{path}:1: no data rows")
    return Dataset(
        np.array(rows, dtype=np.float64),
        np.array(clicks, dtype=np.int64),
        np.array(pays, dtype=np.int64),
    )
