"""Simulation studies: single-shape recovery, mixture recovery, convergence rate,
and the variance reduction of the backfitted centre.

Each study yields one record per (n, replicate[, estimator]) and an aggregate
summary of quantiles.  All randomness for replicate r at grid position g comes
from ``sub_rng(seed, g, r)``.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .estimators import FitConfig, fit_backfit, fit_direct, frobenius_error
from .mixture import EmConfig, fit_em, match_components
from .model import EllipsoidParams, MixtureParams
from .radial import sigma_star_factor
from .sampler import sample_ellipsoid, sample_mixture

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
STUDIES = ("single", "mixture", "rate", "variance-reduction")


def single_preset(dim: int = 3, tilted: bool = False) -> EllipsoidParams:
    """Single-shape settings: half-axes 100 and 50, sigma = 0.01."""
    if dim == 3:
        return EllipsoidParams(np.zeros(3), np.diag([100.0**2, 50.0**2, 50.0**2]), 0.01)
    if tilted:
        return EllipsoidParams(np.zeros(2), [[100.0**2, 50.0**2], [50.0**2, 50.0**2]], 0.01)
    return EllipsoidParams(np.zeros(2), np.diag([100.0**2, 50.0**2]), 0.01)


def three_shell_mixture() -> MixtureParams:
    """Three overlapping ellipsoids with centres 1800 apart on the x axis."""
    shape = np.diag([1000.0**2, 500.0**2, 500.0**2])
    comps = tuple(EllipsoidParams([cx, 0.0, 0.0], shape, 0.01) for cx in (0.0, 1800.0, 3600.0))
    return MixtureParams(comps, [1 / 3, 1 / 3, 1 / 3])


def synthetic_head_body() -> MixtureParams:
    """SYNTHETIC two-component standing-person stand-in (units: mm).

    Not measured data: a body ellipsoid and a near-spherical head, for
    exercising PLY ingestion and K=2 fits.
    """
    body = EllipsoidParams([0.0, 0.0, 900.0], np.diag([260.0**2, 160.0**2, 650.0**2]), 0.02)
    head = EllipsoidParams([0.0, 0.0, 1680.0], np.diag([100.0**2, 95.0**2, 120.0**2]), 0.02)
    return MixtureParams((body, head), [0.85, 0.15])


def _rng(seed, g, r):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(g), int(r)))
    return np.random.Generator(np.random.PCG64(ss))


def _derived_seed(seed, g, r) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(g), int(r), 1))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def quantiles(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {f"q{int(round(q * 100)):02d}": float(np.quantile(v, q)) for q in QUANTILES}


def loglog_slope(ns, values) -> float:
    """Least-squares slope of log(values) against log(ns)."""
    return float(np.polyfit(np.log(ns), np.log(values), 1)[0])


# --- individual studies -------------------------------------------------------

def _single_records(params, n, seed, g, r, config):
    d = params.dim
    cloud = sample_ellipsoid(params, n, _rng(seed, g, r))
    sigma_star = sigma_star_factor(d, params.noise_sigma) * params.sigma_mat
    out = []
    t0 = time.perf_counter()
    direct = fit_direct(cloud, config=config)
    t1 = time.perf_counter()
    backfit, rep = fit_backfit(cloud, init=None, config=config)
    t2 = time.perf_counter()
    for name, est, its, wall in (("direct", direct, 0, t1 - t0), ("backfit", backfit, rep.iterations, t2 - t1)):
        rec = {"seed": seed, "n": n, "replicate": r, "estimator": name}
        for j in range(d):
            rec[f"mu_hat_{j}"] = float(est.mu[j])
        err = est.mu - params.mu
        rec["mu_err_norm"] = float(np.linalg.norm(err))
        rec["E_sigma"] = frobenius_error(est.sigma_mat, params.sigma_mat)
        rec["E_sigma_star"] = frobenius_error(est.sigma_mat, sigma_star)
        rec["rel_E_sigma_star"] = rec["E_sigma_star"] / float(np.linalg.norm(sigma_star))
        rec["sigma_hat"] = est.noise_sigma
        rec["rel_sigma_err"] = abs(est.noise_sigma - params.noise_sigma) / params.noise_sigma
        rec["weights_hat"] = ""
        rec["iterations"] = its
        out.append((rec, wall))
    return out


def run_single(replicates=50, n_grid=(1000, 10000), seed=0, dim=3, tilted=False, config=None):
    params = single_preset(dim, tilted)
    config = config or FitConfig()
    for g, n in enumerate(n_grid):
        for r in range(replicates):
            yield from _single_records(params, int(n), seed, g, r, config)


def summarize_single(records, dim):
    out = {}
    keys = [f"mu_hat_{j}" for j in range(dim)] + ["mu_err_norm", "E_sigma", "E_sigma_star",
                                                   "rel_E_sigma_star", "sigma_hat", "rel_sigma_err"]
    groups = {}
    for rec in records:
        groups.setdefault((rec["n"], rec["estimator"]), []).append(rec)
    for (n, est), recs in sorted(groups.items()):
        block = {"replicates": len(recs)}
        for k in keys:
            block[k] = quantiles([r[k] for r in recs])
        block["median_abs_mu_hat"] = [float(np.median([abs(r[f"mu_hat_{j}"]) for r in recs]))
                                      for j in range(dim)]
        out[f"n={n}/{est}"] = block
    return out


def run_mixture(replicates=50, n_grid=(3000,), seed=0, config_kw=None):
    truth = three_shell_mixture()
    true_centers = np.array([c.mu for c in truth.components])
    for g, n in enumerate(n_grid):
        for r in range(replicates):
            cloud, _ = sample_mixture(truth, int(n), _rng(seed, g, r))
            cfg = EmConfig(K=3, seed=_derived_seed(seed, g, r), **(config_kw or {}))
            t0 = time.perf_counter()
            mix, rep = fit_em(cloud, cfg)
            wall = time.perf_counter() - t0
            centers = np.array([c.mu for c in mix.components])
            perm = match_components(centers, true_centers)
            errs = np.linalg.norm(centers[perm] - true_centers, axis=1)
            w = mix.weights[perm]
            tr = np.asarray(rep.ll_trace)
            steps = np.diff(tr)
            monotone = bool(np.all(steps >= -1e-6 * np.abs(tr[:-1])))
            rec = {"seed": seed, "n": int(n), "replicate": r, "estimator": "em"}
            for k in range(3):
                rec[f"center_err_{k}"] = float(errs[k])
                rec[f"mu_hat_{k}"] = " ".join(repr(float(v)) for v in centers[perm[k]])
                rec[f"E_sigma_{k}"] = frobenius_error(mix.components[perm[k]].sigma_mat,
                                                      truth.components[k].sigma_mat)
                rec[f"sigma_hat_{k}"] = mix.components[perm[k]].noise_sigma
            rec["weights_hat"] = " ".join(repr(float(v)) for v in w)
            rec["max_weight_err"] = float(np.max(np.abs(w - 1 / 3)))
            rec["success"] = bool(np.all(errs < 100.0) and np.all(np.abs(w - 1 / 3) < 0.05))
            rec["ll_monotone"] = monotone
            rec["termination"] = rep.termination
            rec["iterations"] = rep.iterations
            yield rec, wall


def summarize_mixture(records):
    out = {}
    groups = {}
    for rec in records:
        groups.setdefault(rec["n"], []).append(rec)
    for n, recs in sorted(groups.items()):
        block = {"replicates": len(recs),
                 "success_rate": float(np.mean([r["success"] for r in recs])),
                 "ll_monotone_rate": float(np.mean([r["ll_monotone"] for r in recs]))}
        for k in range(3):
            block[f"center_err_{k}"] = quantiles([r[f"center_err_{k}"] for r in recs])
            block[f"E_sigma_{k}"] = quantiles([r[f"E_sigma_{k}"] for r in recs])
            block[f"sigma_hat_{k}"] = quantiles([r[f"sigma_hat_{k}"] for r in recs])
        block["max_weight_err"] = quantiles([r["max_weight_err"] for r in recs])
        out[f"n={n}"] = block
    return out


def run_rate(replicates=50, n_grid=(1000, 10000, 100000), seed=0):
    params = single_preset(3)
    for g, n in enumerate(n_grid):
        for r in range(replicates):
            t0 = time.perf_counter()
            x = sample_ellipsoid(params, int(n), _rng(seed, g, r)).points
            err = float(np.linalg.norm(x.mean(axis=0) - params.mu))
            rec = {"seed": seed, "n": int(n), "replicate": r, "estimator": "empirical_mean",
                   "mu_err_norm": err,
                   "a_n": math.sqrt(math.log(math.log(n)) / n)}
            yield rec, time.perf_counter() - t0


def summarize_rate(records):
    groups = {}
    for rec in records:
        groups.setdefault(rec["n"], []).append(rec["mu_err_norm"])
    ns = sorted(groups)
    med = [float(np.median(groups[n])) for n in ns]
    out = {f"n={n}": {"replicates": len(groups[n]), "mu_err_norm": quantiles(groups[n])} for n in ns}
    out["median_mu_err_norm"] = dict(zip([str(n) for n in ns], med))
    out["median_decreasing"] = bool(all(b < a for a, b in zip(med, med[1:])))
    out["loglog_slope"] = loglog_slope(ns, med) if len(ns) > 1 else None
    return out


def run_variance_reduction(replicates=200, n_grid=(1000,), seed=0, config=None):
    params = single_preset(3)
    config = config or FitConfig()
    for g, n in enumerate(n_grid):
        for r in range(replicates):
            t0 = time.perf_counter()
            cloud = sample_ellipsoid(params, int(n), _rng(seed, g, r))
            mean = cloud.points.mean(axis=0)
            bf, rep = fit_backfit(cloud, config=config)
            wall = time.perf_counter() - t0
            for name, mu, its in (("empirical_mean", mean, 0), ("backfit", bf.mu, rep.iterations)):
                rec = {"seed": seed, "n": int(n), "replicate": r, "estimator": name}
                for j in range(3):
                    rec[f"mu_hat_{j}"] = float(mu[j])
                rec["iterations"] = its
                yield rec, wall


def summarize_variance_reduction(records):
    out = {}
    groups = {}
    for rec in records:
        groups.setdefault((rec["n"], rec["estimator"]), []).append([rec[f"mu_hat_{j}"] for j in range(3)])
    for n in sorted({k[0] for k in groups}):
        mean = np.asarray(groups[(n, "empirical_mean")])
        bf = np.asarray(groups[(n, "backfit")])
        var_mean = mean.var(axis=0, ddof=1) if len(mean) > 1 else np.zeros(3)
        var_bf = bf.var(axis=0, ddof=1) if len(bf) > 1 else np.zeros(3)
        out[f"n={n}"] = {
            "replicates": int(len(mean)),
            "var_empirical_mean": var_mean.tolist(),
            "var_backfit": var_bf.tolist(),
            "backfit_smaller_every_coordinate": bool(np.all(var_bf < var_mean)),
            "mu_hat_empirical_mean": [quantiles(mean[:, j]) for j in range(3)],
            "mu_hat_backfit": [quantiles(bf[:, j]) for j in range(3)],
        }
    return out


# --- driver --------------------------------------------------------------------

@dataclass
class ExperimentResult:
    records: list
    summary: dict
    paths: dict


def run_experiment(name, out_dir, replicates=None, n_grid=None, seed=0, dim=3, tilted=False):
    """Run a named study and write ``<name>_records.csv``, ``<name>_summary.json`` and
    ``<name>_timing.json`` into ``out_dir``.

    Records are streamed to ``*.partial`` files that are renamed only once
    complete, so an interrupted run never leaves a truncated final file.
    """
    if name not in STUDIES:
        raise ValueError(f"unknown experiment {name!r}; choose from {STUDIES}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    defaults = {
        "single": (50, (1000, 10000)),
        "mixture": (50, (3000,)),
        "rate": (50, (1000, 10000, 100000)),
        "variance-reduction": (200, (1000,)),
    }[name]
    replicates = defaults[0] if replicates is None else int(replicates)
    n_grid = tuple(defaults[1] if n_grid is None else n_grid)
    if replicates < 1:
        raise ValueError("replicates must be >= 1")

    if name == "single":
        gen = run_single(replicates, n_grid, seed, dim, tilted)
    elif name == "mixture":
        gen = run_mixture(replicates, n_grid, seed)
    elif name == "rate":
        gen = run_rate(replicates, n_grid, seed)
    else:
        gen = run_variance_reduction(replicates, n_grid, seed)

    stem = name.replace("-", "_")
    rec_path = out_dir / f"{stem}_records.csv"
    sum_path = out_dir / f"{stem}_summary.json"
    time_path = out_dir / f"{stem}_timing.json"
    records, walls = [], []
    part = rec_path.with_name(rec_path.name + ".partial")
    with open(part, "w", newline="", encoding="utf-8") as fh:
        writer = None
        for rec, wall in gen:
            if writer is None:
                writer = csv.DictWriter(fh, fieldnames=list(rec), lineterminator="\n")
                writer.writeheader()
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rec.items()})
            fh.flush()
            records.append(rec)
            walls.append(wall)
    os.replace(part, rec_path)

    if name == "single":
        body = summarize_single(records, dim)
    elif name == "mixture":
        body = summarize_mixture(records)
    elif name == "rate":
        body = summarize_rate(records)
    else:
        body = summarize_variance_reduction(records)
    summary = {
        "experiment": name,
        "seed": seed,
        "replicates": replicates,
        "n_grid": list(n_grid),
        "dim": dim if name == "single" else 3,
        "tilted": bool(tilted) if name == "single" else False,
        "record_count": len(records),
        "results": body,
    }
    for path, obj in ((sum_path, summary),
                      (time_path, {"experiment": name, "wall_time_s": walls,
                                   "total_s": float(sum(walls))})):
        tmp = path.with_name(path.name + ".partial")
        tmp.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
        os.replace(tmp, path)
    return ExperimentResult(records, summary, {"records": rec_path, "summary": sum_path, "timing": time_path})
