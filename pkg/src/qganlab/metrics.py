"""Sample-set metrics: Frechet distance, box-plot summaries, TV distance, bar checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EIG_CLIP = 1e-8


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        if cov.shape != (self.mean.shape[0],) * 2:
            raise ValueError("covariance shape does not match mean")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "covariance", 0.5 * (cov + cov.T))

    @classmethod
    def fit(cls, samples) -> "GaussianMoments":
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError("need at least 2 samples (rows) to fit moments")
        return cls(x.mean(axis=0), np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1]))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    vals = np.where(vals < EIG_CLIP, 0.0, vals)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: GaussianMoments, b: GaussianMoments) -> float:
    """Frechet (2-Wasserstein) distance between two Gaussians."""
    root_a = _psd_sqrt(a.covariance)
    middle = root_a @ b.covariance @ root_a
    vals = np.linalg.eigvalsh(0.5 * (middle + middle.T))
    cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = a.mean - b.mean
    scale = diff @ diff + np.trace(a.covariance) + np.trace(b.covariance)
    fd2 = scale - 2.0 * cross
    # cancellation leaves O(eps * scale) residue when the two fits coincide
    if fd2 <= 64 * np.finfo(float).eps * scale:
        return 0.0
    return float(np.sqrt(fd2))


def fd_score(real_samples, gen_samples) -> float:
    real = np.asarray(real_samples, dtype=np.float64)
    gen = np.asarray(gen_samples, dtype=np.float64)
    if real.ndim != 2 or gen.ndim != 2 or real.shape[1] != gen.shape[1]:
        raise ValueError("sample sets must be 2-D with equal dimension")
    return frechet_distance(GaussianMoments.fit(real), GaussianMoments.fit(gen))


@dataclass(frozen=True)
class BoxPlotStats:
    q1: float
    q2: float
    q3: float
    iqr: float
    lower_hinge: float
    upper_hinge: float
    lower_extreme: float
    upper_extreme: float
    outliers: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["outliers"] = list(self.outliers)
        return d


def box_stats(values) -> BoxPlotStats:
    """Quartiles by linear interpolation; extremes at 1.5 IQR beyond the hinges."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("box_stats needs at least one value")
    q1, q2, q3 = np.percentile(v, [25, 50, 75], method="linear")
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    outliers = tuple(float(x) for x in v if x < lo or x > hi)
    return BoxPlotStats(float(q1), float(q2), float(q3), float(iqr), float(q1), float(q3),
                        float(lo), float(hi), outliers)


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions need a common support")
    if abs(p.sum() - 1) > 1e-8 or abs(q.sum() - 1) > 1e-8:
        raise ValueError("distributions must be normalized within 1e-8")
    return float(0.5 * np.abs(p - q).sum())


@dataclass(frozen=True)
class BarReport:
    column_sums: np.ndarray
    row_first: np.ndarray
    row_sums: np.ndarray
    off_band_mass: float
    in_range_flag: bool


def bar_validity(image, m: int, tolerance: float = 0.0,
                 off_band_threshold: float = 0.0) -> BarReport:
    """Check a row-major m x m image against the bar construction rule.

    Valid when every row's first pixel lies in ``[0.4 - tol, 0.6 + tol]``, its
    second pixel complements it to 1 within ``tol``, and the mass outside the
    first two columns is at most ``off_band_threshold``.
    """
    x = np.asarray(image, dtype=np.float64).reshape(m, m)
    slack = 1e-9
    first = x[:, 0]
    row_pair = x[:, 0] + x[:, 1]
    off_band = float(x[:, 2:].sum()) if m > 2 else 0.0
    ok = (
        np.all(first >= 0.4 - tolerance - slack)
        and np.all(first <= 0.6 + tolerance + slack)
        and np.all(np.abs(row_pair - 1.0) <= tolerance + slack)
        and off_band <= off_band_threshold + slack
    )
    return BarReport(x.sum(axis=0), first, x.sum(axis=1), off_band, bool(ok))


def bar_valid_fraction(images, m: int, tolerance: float = 0.05,
                       off_band_threshold: float = 0.15) -> float:
    images = np.asarray(images)
    flags = [bar_validity(img, m, tolerance, off_band_threshold).in_range_flag for img in images]
    return float(np.mean(flags))
