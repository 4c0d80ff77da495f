"""Experiment orchestration: correlogram fidelity and CI coverage studies.

Replications are embarrassingly parallel. Each replication derives its own
random stream from (master_seed, experiment id, ...indices) via SeedSequence
spawn keys, so serial and parallel execution produce byte-identical outputs
and any single replication can be replayed in isolation.

Stream key layout (first component):
    0  correlogram experiment, per (phi index, replication)
    1  coverage experiment, generator bootstrap, per (phi index, replication)
    2  coverage experiment, CBB, per (phi index, block index, replication)
    3  theoretical-band Monte Carlo, per (phi index, draw)

Every output file (CSV and SVG) embeds the fully resolved configuration and
master seed as a provenance comment.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import bootstrap as bs
from . import charts
from . import gan
from . import timeseries as ts
from .config import ExperimentConfig
from .tensor import GraphError

__all__ = [
    "stream",
    "CoverageRow",
    "run_acf_experiment",
    "run_coverage_experiment",
]


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent deterministic generator for one replication."""
    return np.random.default_rng(
        np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    )


def _identity_dict(cfg: ExperimentConfig) -> dict:
    """Config as embedded in outputs. The worker count only changes how the
    work is scheduled, never what is computed, so it is excluded to keep
    serial and parallel runs byte-identical."""
    d = cfg.to_dict()
    d.pop("workers", None)
    return d


def _provenance(cfg: ExperimentConfig) -> str:
    return "provenance: " + json.dumps(_identity_dict(cfg), sort_keys=True)


def _pool_map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=1))


def _phi_tag(phi: float) -> str:
    return format(phi, "g").replace("-", "m").replace(".", "p")


# ---------------------------------------------------------------------------
# correlogram experiment


def _sample_paths(cfg: ExperimentConfig, phi: float, rng) -> np.ndarray:
    """One replication's bootstrap sample set: observe a path, then either
    train the GAN on its blocks and sample, or (oracle mode) sample the true
    model family fitted to the observed path.

    The oracle stands in for a generator that learned the observed sample's
    law perfectly, which is what makes it a harness check rather than a GAN
    check: with percentile intervals, sampling at the *true* parameter would
    center every bootstrap distribution on the truth and cover it at every
    level, telling us nothing. Fitting phi to the observed path keeps the
    replication-to-replication variation that coverage is supposed to count.
    """
    b2 = cfg.resolved_sample_length
    path = ts.simulate_ar1(ts.Ar1Spec(phi, cfg.path_length), rng)
    if cfg.oracle_mode:
        phi_hat = ts.ls_estimate(path)
        return ts.simulate_ar1_batch(ts.Ar1Spec(phi_hat, b2), cfg.n_samples, rng)
    gen_params, _, _ = bs.fit_generator(path, cfg.gan, cfg.block_length, rng)
    return bs.gb_sample(gen_params, cfg.gan, b2, cfg.n_samples, rng)


def _acf_rep(task):
    cfg, phi, phi_i, rep = task
    rng = stream(cfg.master_seed, 0, phi_i, rep)
    try:
        samples = _sample_paths(cfg, phi, rng)
        return {
            "rep": rep,
            "ok": True,
            "acf": ts.acf_batch(samples, cfg.max_lag).mean(axis=0),
            "pacf": ts.pacf_batch(samples, cfg.max_lag).mean(axis=0),
        }
    except (gan.TrainingError, GraphError, ValueError, RuntimeError) as exc:
        return {"rep": rep, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _band_draw(task):
    cfg, phi, phi_i, draw = task
    rng = stream(cfg.master_seed, 3, phi_i, draw)
    b2 = cfg.resolved_sample_length
    samples = ts.simulate_ar1_batch(ts.Ar1Spec(phi, b2), cfg.n_samples, rng)
    return (
        ts.acf_batch(samples, cfg.max_lag).mean(axis=0),
        ts.pacf_batch(samples, cfg.max_lag).mean(axis=0),
    )


def _write_correlogram_csv(file, curves, prov):
    mean, q25, q75, theory, t25, t75 = curves
    with open(file, "w", encoding="utf-8") as fh:
        fh.write(f"# {prov}\n")
        fh.write("lag,mean,q25,q75,theory,theory_q25,theory_q75\n")
        for lag in range(len(mean)):
            vals = [mean[lag], q25[lag], q75[lag], theory[lag], t25[lag], t75[lag]]
            fh.write(str(lag) + "," + ",".join(repr(float(v)) for v in vals) + "\n")


def _correlogram_chart(file, lags, curves, title, ylabel, meta):
    mean, q25, q75, theory, t25, t75 = curves
    charts.emit_chart(
        file,
        title,
        "lag",
        ylabel,
        series=[
            charts.Series("bootstrap mean", lags, mean, markers=True),
            charts.Series("theoretical", lags, theory, dashed=True),
        ],
        bands=[
            charts.Band("bootstrap IQR", lags, q25, q75),
            charts.Band("theoretical IQR", lags, t25, t75),
        ],
        meta=meta,
    )


def run_acf_experiment(cfg: ExperimentConfig, out_dir) -> dict:
    """Correlogram fidelity study; writes per-phi CSVs and charts plus a
    report.json with failure counts. Returns the report dict."""
    os.makedirs(out_dir, exist_ok=True)
    prov = _provenance(cfg)
    lags = np.arange(cfg.max_lag + 1, dtype=np.float64)
    report = {"experiment": "acf", "config": _identity_dict(cfg), "phis": {}}

    for phi_i, phi in enumerate(cfg.phis):
        tasks = [(cfg, phi, phi_i, rep) for rep in range(cfg.replications_gb)]
        results = _pool_map(_acf_rep, tasks, cfg.workers)
        ok = [r for r in results if r["ok"]]
        failed = [r for r in results if not r["ok"]]
        report["phis"][format(phi, "g")] = {
            "completed": len(ok),
            "failed": len(failed),
            "failures": [{"rep": r["rep"], "error": r["error"]} for r in failed],
        }
        _write_report(out_dir, report)
        if not ok:
            raise RuntimeError(
                f"all {len(results)} replications failed for phi={phi:g}; "
                f"first error: {failed[0]['error']}"
            )

        band_tasks = [(cfg, phi, phi_i, d) for d in range(cfg.mc_band_draws)]
        band = _pool_map(_band_draw, band_tasks, cfg.workers)
        theory_acf, theory_pacf, _ = ts.theoretical_refs(phi, cfg.path_length, cfg.max_lag)

        for kind, ylabel, theory in (
            ("acf", "autocorrelation", theory_acf),
            ("pacf", "partial autocorrelation", theory_pacf),
        ):
            est = np.vstack([r[kind] for r in ok])
            mc = np.vstack([b[0 if kind == "acf" else 1] for b in band])
            curves = (
                est.mean(axis=0),
                np.quantile(est, 0.25, axis=0),
                np.quantile(est, 0.75, axis=0),
                theory,
                np.quantile(mc, 0.25, axis=0),
                np.quantile(mc, 0.75, axis=0),
            )
            tag = _phi_tag(phi)
            _write_correlogram_csv(
                os.path.join(out_dir, f"{kind}_phi{tag}.csv"), curves, prov
            )
            _correlogram_chart(
                os.path.join(out_dir, f"{kind}_phi{tag}.svg"),
                lags,
                curves,
                f"{kind.upper()} under phi = {phi:g}",
                ylabel,
                _identity_dict(cfg),
            )
    return report


def _write_report(out_dir, report) -> None:
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# coverage experiment


@dataclass
class CoverageRow:
    method: str
    phi: float
    block_size: int  # training b1 (GB), resampling b (CBB), 0 when not applicable
    level: float
    coverage: float
    mean_ci_length: float
    replications: int


def _coverage_gb_rep(task):
    cfg, phi, phi_i, rep = task
    rng = stream(cfg.master_seed, 1, phi_i, rep)
    try:
        samples = _sample_paths(cfg, phi, rng)
        res = bs.gb_statistics(ts.ls_estimate_batch(samples), cfg.levels)
        return {"rep": rep, "ok": True, "intervals": res.intervals}
    except (gan.TrainingError, GraphError, ValueError, RuntimeError) as exc:
        return {"rep": rep, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _coverage_cbb_rep(task):
    cfg, phi, phi_i, block_i, block, rep = task
    rng = stream(cfg.master_seed, 2, phi_i, block_i, rep)
    try:
        path = ts.simulate_ar1(ts.Ar1Spec(phi, cfg.path_length), rng)
        res = bs.cbb_bootstrap(
            path,
            block,
            None,
            cfg.n_samples,
            cfg.levels,
            rng,
            batch_statistic=ts.ls_estimate_batch,
        )
        return {"rep": rep, "ok": True, "intervals": res.intervals}
    except (ValueError, RuntimeError) as exc:
        return {"rep": rep, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _summarise(results, phi, method, block_size, levels):
    ok = [r for r in results if r["ok"]]
    rows = []
    for level in levels:
        hits = [r["intervals"][level][0] <= phi <= r["intervals"][level][1] for r in ok]
        lengths = [r["intervals"][level][1] - r["intervals"][level][0] for r in ok]
        rows.append(
            CoverageRow(
                method,
                float(phi),
                int(block_size),
                float(level),
                float(np.mean(hits)) if ok else float("nan"),
                float(np.mean(lengths)) if ok else float("nan"),
                len(ok),
            )
        )
    return rows, len(results) - len(ok), [r for r in results if not r["ok"]]


def run_coverage_experiment(cfg: ExperimentConfig, out_dir) -> list:
    """Empirical CI coverage of the generator bootstrap vs the CBB.

    Writes coverage.csv (one row per method/phi/block/level), one chart per
    phi, and report.json; returns the list of CoverageRow.
    """
    os.makedirs(out_dir, exist_ok=True)
    prov = _provenance(cfg)
    report = {"experiment": "coverage", "config": _identity_dict(cfg), "phis": {}}
    all_rows: list[CoverageRow] = []
    gb_method = "oracle" if cfg.oracle_mode else "gb"

    for phi_i, phi in enumerate(cfg.phis):
        phi_report = {}
        tasks = [(cfg, phi, phi_i, rep) for rep in range(cfg.replications_gb)]
        results = _pool_map(_coverage_gb_rep, tasks, cfg.workers)
        rows, n_failed, failures = _summarise(
            results, phi, gb_method, 0 if cfg.oracle_mode else cfg.block_length, cfg.levels
        )
        if not any(r["ok"] for r in results):
            _write_report(out_dir, report)
            raise RuntimeError(
                f"all {len(results)} {gb_method} replications failed for phi={phi:g}; "
                f"first error: {failures[0]['error']}"
            )
        all_rows.extend(rows)
        phi_report[gb_method] = {
            "completed": len(results) - n_failed,
            "failed": n_failed,
            "failures": [{"rep": r["rep"], "error": r["error"]} for r in failures],
        }

        for block_i, block in enumerate(cfg.cbb_block_sizes):
            tasks = [
                (cfg, phi, phi_i, block_i, block, rep)
                for rep in range(cfg.replications_cbb)
            ]
            results = _pool_map(_coverage_cbb_rep, tasks, cfg.workers)
            rows, n_failed, failures = _summarise(
                results, phi, "cbb", block, cfg.levels
            )
            all_rows.extend(rows)
            phi_report[f"cbb_b{block}"] = {
                "completed": len(results) - n_failed,
                "failed": n_failed,
                "failures": [{"rep": r["rep"], "error": r["error"]} for r in failures],
            }

        report["phis"][format(phi, "g")] = phi_report
        _coverage_chart(cfg, out_dir, phi, all_rows)

    _write_coverage_csv(os.path.join(out_dir, "coverage.csv"), all_rows, prov)
    _write_report(out_dir, report)
    return all_rows


def _write_coverage_csv(file, rows, prov) -> None:
    rows = sorted(rows, key=lambda r: (r.method, r.phi, r.block_size, r.level))
    with open(file, "w", encoding="utf-8") as fh:
        fh.write(f"# {prov}\n")
        fh.write("method,phi,block_size,level,coverage,mean_ci_length,replications\n")
        for r in rows:
            fh.write(
                f"{r.method},{r.phi!r},{r.block_size},{r.level!r},"
                f"{r.coverage!r},{r.mean_ci_length!r},{r.replications}\n"
            )


def _coverage_chart(cfg: ExperimentConfig, out_dir, phi, rows) -> None:
    levels = np.array(sorted(cfg.levels), dtype=np.float64)
    series = [charts.Series("nominal", levels, levels, dashed=True, color="#555555")]
    keys = sorted(
        {(r.method, r.block_size) for r in rows if r.phi == float(phi)},
        key=lambda k: (k[0], k[1]),
    )
    for method, block in keys:
        sub = {
            r.level: r.coverage
            for r in rows
            if r.phi == float(phi) and r.method == method and r.block_size == block
        }
        label = method if method != "cbb" else f"cbb b={block}"
        series.append(
            charts.Series(label, levels, np.array([sub[lv] for lv in levels]), markers=True)
        )
    charts.emit_chart(
        os.path.join(out_dir, f"coverage_phi{_phi_tag(phi)}.svg"),
        f"Empirical CI coverage, phi = {phi:g}",
        "nominal level",
        "empirical coverage",
        series=series,
        meta=_identity_dict(cfg),
        ylim=(min(0.5, float(levels.min()) - 0.05), 1.02),
    )
