"""AR(1) simulation and the estimators used to judge bootstrap quality.

The data-generating process is y_t = phi * y_{t-1} + eps_t with Gaussian
innovations. Paths start from the exact stationary law N(0, sigma^2/(1-phi^2))
so no burn-in is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Ar1Spec",
    "simulate_ar1",
    "simulate_ar1_batch",
    "acf",
    "acf_batch",
    "pacf",
    "pacf_batch",
    "ls_estimate",
    "ls_estimate_batch",
    "theoretical_refs",
    "write_path_csv",
    "read_path_csv",
]


@dataclass(frozen=True)
class Ar1Spec:
    phi: float
    length: int
    sigma: float = 1.0

    def __post_init__(self):
        if not abs(self.phi) < 1:
            raise ValueError(f"AR(1) requires |phi| < 1, got {self.phi}")
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @property
    def stationary_sd(self) -> float:
        return self.sigma / np.sqrt(1.0 - self.phi**2)


def simulate_ar1(spec: Ar1Spec, rng: np.random.Generator, y0: float | None = None) -> np.ndarray:
    """One stationary path; y0 overrides the stationary initial draw."""
    return simulate_ar1_batch(spec, 1, rng, y0)[0]


def simulate_ar1_batch(
    spec: Ar1Spec, n: int, rng: np.random.Generator, y0: float | None = None
) -> np.ndarray:
    """n independent paths as an (n, length) array.

    Draw order is fixed (initial values first, then all innovations row-major)
    so results depend only on the rng state.
    """
    out = np.empty((n, spec.length), dtype=np.float64)
    if y0 is None:
        out[:, 0] = rng.normal(0.0, spec.stationary_sd, size=n)
    else:
        out[:, 0] = y0
    if spec.length > 1:
        eps = rng.normal(0.0, spec.sigma, size=(n, spec.length - 1))
        for t in range(1, spec.length):
            out[:, t] = spec.phi * out[:, t - 1] + eps[:, t - 1]
    return out


def acf(path: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags 0..max_lag (biased divisor-T convention).

    The divisor-T estimator keeps the sequence nonnegative definite, which
    the Durbin-Levinson recursion in `pacf` relies on.
    """
    return acf_batch(np.asarray(path, dtype=np.float64)[None], max_lag)[0]


def acf_batch(paths: np.ndarray, max_lag: int) -> np.ndarray:
    """Row-wise ACF for an (n, T) array; returns (n, max_lag + 1)."""
    paths = np.asarray(paths, dtype=np.float64)
    n, length = paths.shape
    if max_lag >= length:
        raise ValueError(f"max_lag {max_lag} must be < path length {length}")
    y = paths - paths.mean(axis=1, keepdims=True)
    c0 = np.sum(y * y, axis=1)
    if np.any(c0 == 0):
        bad = int(np.nonzero(c0 == 0)[0][0])
        raise ValueError(f"constant path (zero variance) at row {bad}")
    out = np.empty((n, max_lag + 1), dtype=np.float64)
    out[:, 0] = 1.0
    for j in range(1, max_lag + 1):
        out[:, j] = np.sum(y[:, j:] * y[:, :-j], axis=1) / c0
    return out


def pacf(path: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample partial autocorrelations at lags 0..max_lag via Durbin-Levinson.

    Entry 0 is 1 by convention; entry 1 equals the lag-1 autocorrelation.
    """
    return pacf_batch(np.asarray(path, dtype=np.float64)[None], max_lag)[0]


def pacf_batch(paths: np.ndarray, max_lag: int) -> np.ndarray:
    """Row-wise PACF for an (n, T) array; returns (n, max_lag + 1).

    Runs the Durbin-Levinson recursion on all rows at once.
    """
    r = acf_batch(paths, max_lag)
    out = np.empty_like(r)
    out[:, 0] = 1.0
    if max_lag == 0:
        return out
    phi = r[:, 1:2].copy()
    out[:, 1] = r[:, 1]
    for k in range(2, max_lag + 1):
        num = r[:, k] - np.sum(phi * r[:, k - 1 : 0 : -1], axis=1)
        den = 1.0 - np.sum(phi * r[:, 1:k], axis=1)
        last = num / den
        phi = np.concatenate([phi - last[:, None] * phi[:, ::-1], last[:, None]], axis=1)
        out[:, k] = last
    return out


def ls_estimate(path: np.ndarray, intercept: bool = False) -> float:
    """Least-squares slope of y_t on y_{t-1}.

    The default has no intercept, matching the zero-mean DGP; intercept=True
    fits (1, y_{t-1}) instead for robustness checks.
    """
    y = np.asarray(path, dtype=np.float64)
    if y.size < 2:
        raise ValueError("need at least 2 observations")
    cur, lag = y[1:], y[:-1]
    if intercept:
        lag_c = lag - lag.mean()
        den = float(lag_c @ lag_c)
        if den == 0:
            raise ValueError("degenerate regressor (constant lagged values)")
        return float(lag_c @ (cur - cur.mean()) / den)
    den = float(lag @ lag)
    if den == 0:
        raise ValueError("degenerate regressor (all-zero lagged values)")
    return float(lag @ cur / den)


def ls_estimate_batch(paths: np.ndarray) -> np.ndarray:
    """Row-wise no-intercept slope estimates for an (n, T) array."""
    paths = np.asarray(paths, dtype=np.float64)
    cur, lag = paths[:, 1:], paths[:, :-1]
    den = np.sum(lag * lag, axis=1)
    if np.any(den == 0):
        bad = int(np.nonzero(den == 0)[0][0])
        raise ValueError(f"degenerate regressor at row {bad}")
    return np.sum(lag * cur, axis=1) / den


def theoretical_refs(phi: float, length: int, max_lag: int):
    """Closed-form references: ACF phi^j, PACF (1, phi, 0, ...), sd of the
    slope estimator sqrt((1 - phi^2) / T)."""
    if not abs(phi) < 1:
        raise ValueError(f"requires |phi| < 1, got {phi}")
    lags = np.arange(max_lag + 1)
    acf_curve = phi**lags
    pacf_curve = np.zeros(max_lag + 1)
    pacf_curve[0] = 1.0
    if max_lag >= 1:
        pacf_curve[1] = phi
    sd_phi = float(np.sqrt((1.0 - phi**2) / length))
    return acf_curve, pacf_curve, sd_phi


def write_path_csv(path: np.ndarray, file, column: str = "y", provenance: str | None = None) -> None:
    """Single-column CSV; an optional '#'-prefixed provenance line comes first."""
    with open(file, "w", encoding="utf-8") as fh:
        if provenance is not None:
            fh.write(f"# {provenance}\n")
        fh.write(f"{column}\n")
        for v in np.asarray(path, dtype=np.float64):
            fh.write(f"{float(v)!r}\n")


def read_path_csv(file) -> np.ndarray:
    with open(file, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().strip().split("\n") if not ln.startswith("#")]
    return np.array([float(v) for v in lines[1:]], dtype=np.float64)
