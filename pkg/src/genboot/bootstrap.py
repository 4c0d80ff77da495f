"""Bootstrap machinery: training blocks, generator resampling, and the
circular block bootstrap baseline.

The generator-based ("GB") path: slice the observed series into all maximal
overlapping blocks, train the GAN on batches of those blocks, then sample m
synthetic paths from the trained generator and feed per-path statistics to
`gb_statistics`. The circular block bootstrap provides the classical
comparison under identical variance and interval conventions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import gan

__all__ = [
    "BlockSet",
    "BootstrapConfig",
    "BootstrapResult",
    "make_blocks",
    "training_batch",
    "make_batch_supplier",
    "fit_generator",
    "gb_sample",
    "gb_statistics",
    "gb_bootstrap",
    "cbb_resample",
    "cbb_bootstrap",
    "write_estimates_csv",
    "write_summary_csv",
]

DEFAULT_LEVELS = (0.80, 0.90, 0.95, 0.99)


@dataclass(frozen=True)
class BootstrapConfig:
    block_length: int = 150  # b1, training block size
    sample_length: int | None = None  # b2; None means len(path) (complete sampling)
    n_samples: int = 10_000  # m
    levels: tuple = DEFAULT_LEVELS

    def __post_init__(self):
        if self.block_length < 1:
            raise ValueError("block_length must be >= 1")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if not all(0 < lv < 1 for lv in self.levels):
            raise ValueError("levels must lie in (0, 1)")


@dataclass(frozen=True)
class BlockSet:
    """All maximal overlapping windows of one source path."""

    source: np.ndarray
    block_length: int
    blocks: np.ndarray  # (n_blocks, block_length), row j starts at index j

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]


def make_blocks(path: np.ndarray, block_length: int) -> BlockSet:
    """Every contiguous window of the given length, in order of start index."""
    path = np.asarray(path, dtype=np.float64)
    if not 1 <= block_length < path.size:
        raise ValueError(
            f"block_length must be in [1, {path.size - 1}], got {block_length}"
        )
    return BlockSet(path, block_length, sliding_window_view(path, block_length))


def training_batch(blocks: BlockSet, n_b: int, rng: np.random.Generator) -> np.ndarray:
    """n_b blocks drawn uniformly without replacement within the batch."""
    if n_b > blocks.n_blocks:
        raise ValueError(
            f"batch size {n_b} exceeds the {blocks.n_blocks} available blocks"
        )
    idx = rng.choice(blocks.n_blocks, size=n_b, replace=False)
    return np.ascontiguousarray(blocks.blocks[idx])


def make_batch_supplier(path: np.ndarray, block_length: int, n_b: int):
    """Supplier of (n_b, block_length) real batches for gan.train."""
    blocks = make_blocks(path, block_length)

    def supply(rng):
        return training_batch(blocks, n_b, rng)

    return supply


def fit_generator(path: np.ndarray, cfg: gan.GanConfig, block_length: int, rng):
    """Train the GAN on overlapping blocks of one observed path."""
    supplier = make_batch_supplier(path, block_length, cfg.batch_size)
    return gan.train(cfg, supplier, block_length, rng)


def gb_sample(
    gen_params: dict,
    cfg: gan.GanConfig,
    sample_length: int,
    m: int,
    rng: np.random.Generator,
    chunk: int | None = None,
) -> np.ndarray:
    """m generated paths of the requested length, as an (m, sample_length) array.

    Each path consumes its own (sample_length + p) x noise_dim block of iid
    standard normal draws. Generation is chunked to bound memory; the noise
    stream is consumed in path order, so repeated calls with the same rng
    state and chunk size are bit-identical, and different chunk sizes agree
    to floating-point rounding (BLAS summation order varies with batch size).
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    p = gan.receptive_field(cfg.dilations, cfg.kernel_size)
    if m == 0:
        return np.empty((0, sample_length), dtype=np.float64)
    if chunk is None:
        per_path = (sample_length + p) * cfg.noise_dim * 8
        chunk = max(1, min(m, (1 << 26) // max(per_path, 1)))
    out = np.empty((m, sample_length), dtype=np.float64)
    done = 0
    while done < m:
        take = min(chunk, m - done)
        noise = rng.standard_normal((take, sample_length + p, cfg.noise_dim))
        out[done : done + take] = gan.generate_batch(gen_params, noise, cfg)
        done += take
    return out


@dataclass
class BootstrapResult:
    estimates: np.ndarray
    mean: float
    variance: float
    intervals: dict = field(default_factory=dict)  # level -> (lower, upper)


def gb_statistics(estimates, levels=DEFAULT_LEVELS) -> BootstrapResult:
    """Bootstrap mean, variance (1/m divisor), and percentile intervals.

    The interval at confidence level 1-alpha spans the empirical alpha/2 and
    1-alpha/2 quantiles, using linear interpolation between order statistics.
    All summaries are computed on the sorted values, which makes them exactly
    invariant under permutation of the input.
    """
    est = np.asarray(estimates, dtype=np.float64).ravel()
    if est.size < 2:
        raise ValueError(f"need at least 2 estimates, got {est.size}")
    s = np.sort(est)
    mean = float(s.mean())
    variance = float(np.mean((s - mean) ** 2))
    intervals = {}
    for level in levels:
        if not 0 < level < 1:
            raise ValueError(f"confidence level must be in (0, 1), got {level}")
        alpha = 1.0 - level
        lo, hi = np.quantile(s, [alpha / 2.0, 1.0 - alpha / 2.0], method="linear")
        intervals[float(level)] = (float(lo), float(hi))
    return BootstrapResult(est, mean, variance, intervals)


def _apply_statistic(samples: np.ndarray, statistic, batch_statistic):
    if batch_statistic is not None:
        return np.asarray(batch_statistic(samples), dtype=np.float64)
    vals = np.empty(samples.shape[0], dtype=np.float64)
    for i, row in enumerate(samples):
        try:
            vals[i] = statistic(row)
        except Exception as exc:
            raise RuntimeError(f"statistic failed on resample {i}: {exc}") from exc
    return vals


def gb_bootstrap(
    gen_params: dict,
    cfg: gan.GanConfig,
    sample_length: int,
    m: int,
    rng: np.random.Generator,
    statistic=None,
    batch_statistic=None,
    levels=DEFAULT_LEVELS,
) -> BootstrapResult:
    """Sample m paths from the generator and summarise a statistic of each."""
    samples = gb_sample(gen_params, cfg, sample_length, m, rng)
    return gb_statistics(_apply_statistic(samples, statistic, batch_statistic), levels)


# ---------------------------------------------------------------------------
# circular block bootstrap


def _cbb_indices(length: int, block: int, rng: np.random.Generator) -> np.ndarray:
    n_blocks = -(-length // block)  # ceil
    starts = rng.integers(0, length, size=n_blocks)
    idx = (starts[:, None] + np.arange(block)) % length
    return idx.ravel()[:length]


def cbb_resample(path: np.ndarray, block: int, rng: np.random.Generator) -> np.ndarray:
    """One circular block resample of the same length as the path.

    ceil(T/block) blocks with independent uniform starts are read off the
    circularly wrapped path, concatenated, and truncated to length T.
    """
    path = np.asarray(path, dtype=np.float64)
    if not 1 <= block <= path.size:
        raise ValueError(f"block length must be in [1, {path.size}], got {block}")
    return path[_cbb_indices(path.size, block, rng)]


def cbb_bootstrap(
    path: np.ndarray,
    block: int,
    statistic,
    m: int,
    levels=DEFAULT_LEVELS,
    rng: np.random.Generator | None = None,
    batch_statistic=None,
) -> BootstrapResult:
    """m circular block resamples summarised like the generator bootstrap."""
    path = np.asarray(path, dtype=np.float64)
    if rng is None:
        raise ValueError("rng is required")
    if not 1 <= block <= path.size:
        raise ValueError(f"block length must be in [1, {path.size}], got {block}")
    idx = np.empty((m, path.size), dtype=np.int64)
    for i in range(m):
        idx[i] = _cbb_indices(path.size, block, rng)
    return gb_statistics(
        _apply_statistic(path[idx], statistic, batch_statistic), levels
    )


# ---------------------------------------------------------------------------
# CSV export


def write_estimates_csv(result: BootstrapResult, file, provenance: str | None = None) -> None:
    with open(file, "w", encoding="utf-8") as fh:
        if provenance is not None:
            fh.write(f"# {provenance}\n")
        fh.write("sample_index,estimate\n")
        for i, v in enumerate(result.estimates):
            fh.write(f"{i},{float(v)!r}\n")


def write_summary_csv(result: BootstrapResult, file, provenance: str | None = None) -> None:
    with open(file, "w", encoding="utf-8") as fh:
        if provenance is not None:
            fh.write(f"# {provenance}\n")
        fh.write("level,lower,upper,mean,variance\n")
        for level in sorted(result.intervals):
            lo, hi = result.intervals[level]
            fh.write(
                f"{level!r},{lo!r},{hi!r},{result.mean!r},{result.variance!r}\n"
            )
