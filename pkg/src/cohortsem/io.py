"""File formats: cohort data, configuration, draws, and run manifests.

On-disk layout of a dataset directory:

* ``cohorts.yaml``  - measurement structure (see below)
* ``cohort_<id>.csv`` - one delimited file per cohort with header
  ``x,p,<outcome names...>`` and the literal token ``NA`` for missing
  outcome cells
* ``truth.json``    - optional simulation ground truth sidecar

``cohorts.yaml`` schema (factor indices are 1-based in files)::

    format_version: 1
    cohorts:
      - id: c1
        n_factors: 3
        outcomes:
          - {name: t01, factor: 1}
          - {name: t04, factor: 2}
        resid_pairs: [[t01, t04]]

A fitted run directory holds ``manifest.json``, ``draws.csv`` (one row
per kept draw: ``chain`` column then labeled parameter columns, written
with full float precision so reruns with the same seed are byte
identical), ``draws_meta.json``, ``pointwise.npz``, ``summary.csv``,
``eta_summary.csv`` (when the variant samples cognition scores),
``density_<param>.csv`` grids for the dose-response parameters, and
``rescale.json`` with the outcome scaling factors applied at ingestion.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from pathlib import Path

import numpy as np
import yaml

from .cohorts import CohortData, CohortSpec
from .params import CohortParams, ParameterSet
from .priors import PriorConfig
from .sampler import PosteriorDraws
from .simulate import SimConfig, SimulatedDataset

FORMAT_VERSION = 1

__all__ = [
    "write_dataset", "read_dataset", "write_truth", "read_truth",
    "read_prior_config", "read_sim_config", "rescale_outcomes",
    "data_fingerprint", "write_draws", "load_draws", "write_manifest",
    "read_manifest", "FORMAT_VERSION",
]


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return "NA" if not np.isfinite(x) else format(x, ".17g")


def write_dataset(cohorts, out_dir) -> list[Path]:
    """Write cohort spec YAML plus one CSV per cohort; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec_doc = {"format_version": FORMAT_VERSION, "cohorts": []}
    paths = []
    for spec, data in cohorts:
        spec_doc["cohorts"].append({
            "id": spec.cohort_id,
            "n_factors": int(spec.n_factors),
            "outcomes": [
                {"name": nm, "factor": int(f) + 1}
                for nm, f in zip(spec.outcome_names, spec.factor_map)
            ],
            "resid_pairs": [
                [spec.outcome_names[j], spec.outcome_names[k]]
                for j, k in spec.resid_pairs
            ],
        })
        path = out / f"cohort_{spec.cohort_id}.csv"
        with open(path, "w") as fh:
            fh.write(",".join(["x", "p", *spec.outcome_names]) + "\n")
            for i in range(data.n):
                cells = [format(data.x[i], ".17g"), format(data.p[i], ".17g")]
                cells += [_fmt(data.Y[i, k]) if data.mask[i, k] else "NA"
                          for k in range(spec.n_outcomes)]
                fh.write(",".join(cells) + "\n")
        paths.append(path)
    spec_path = out / "cohorts.yaml"
    with open(spec_path, "w") as fh:
        yaml.safe_dump(spec_doc, fh, sort_keys=False)
    return [spec_path, *paths]


def read_dataset(data_dir) -> list[tuple[CohortSpec, CohortData]]:
    """Load a dataset directory; validation failures raise ValueError."""
    data_dir = Path(data_dir)
    spec_path = data_dir / "cohorts.yaml"
    if not spec_path.exists():
        raise ValueError(f"missing cohort spec file {spec_path}")
    with open(spec_path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "cohorts" not in doc:
        raise ValueError("cohorts.yaml must contain a 'cohorts' list")
    cohorts = []
    for entry in doc["cohorts"]:
        cid = str(entry["id"])
        outcomes = entry["outcomes"]
        names = [str(o["name"]) for o in outcomes]
        factor_map = np.array([int(o["factor"]) - 1 for o in outcomes])
        n_factors = int(entry.get("n_factors", factor_map.max() + 1))
        name_idx = {nm: i for i, nm in enumerate(names)}
        pairs = []
        for a, b in entry.get("resid_pairs", []) or []:
            if a not in name_idx or b not in name_idx:
                raise ValueError(
                    f"cohort {cid}: resid pair ({a},{b}) names unknown outcomes")
            pairs.append((name_idx[a], name_idx[b]))
        csv_path = data_dir / f"cohort_{cid}.csv"
        if not csv_path.exists():
            raise ValueError(f"missing data file {csv_path}")
        with open(csv_path) as fh:
            header = fh.readline().strip().split(",")
            expected = ["x", "p", *names]
            if header != expected:
                raise ValueError(
                    f"cohort {cid}: header {header} does not match spec "
                    f"columns {expected}")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        n = len(rows)
        K = len(names)
        x = np.empty(n)
        p = np.empty(n)
        Y = np.full((n, K), np.nan)
        mask = np.zeros((n, K), dtype=bool)
        for i, cells in enumerate(rows):
            if len(cells) != K + 2:
                raise ValueError(f"cohort {cid}: row {i + 1} has {len(cells)} "
                                 f"fields, expected {K + 2}")
            x[i] = float(cells[0])
            p[i] = float(cells[1])
            for k, tok in enumerate(cells[2:]):
                if tok != "NA":
                    Y[i, k] = float(tok)
                    mask[i, k] = True
        spec = CohortSpec(cid, K, n_factors, factor_map,
                          resid_pairs=tuple(pairs), n=n,
                          outcome_names=tuple(names))
        cohorts.append((spec, CohortData(Y, mask, x, p)))
    if not cohorts:
        raise ValueError("dataset contains no cohorts")
    return cohorts


def write_truth(ds: SimulatedDataset, path) -> Path:
    """Ground-truth sidecar for a simulated dataset (full precision JSON)."""
    doc = {
        "format_version": FORMAT_VERSION,
        "beta1": ds.truth.beta1,
        "beta2": ds.truth.beta2,
        "log_bp": ds.truth.log_bp,
        "config": dataclasses.asdict(ds.config),
        "cohorts": [],
    }
    for (spec, _), cp in zip(ds.cohorts, ds.truth.cohorts):
        doc["cohorts"].append({
            "id": spec.cohort_id,
            "nu": cp.nu.tolist(), "lam": cp.lam.tolist(),
            "gamma": cp.gamma.tolist(), "psi_diag": cp.psi_diag.tolist(),
            "rho": cp.rho.tolist(), "phi_sd": cp.phi_sd.tolist(),
            "sigma2": cp.sigma2, "alpha": cp.alpha,
            "eta": cp.eta.tolist(), "xi": cp.xi.tolist(),
        })
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return path


def read_truth(path) -> ParameterSet:
    with open(path) as fh:
        doc = json.load(fh)
    cohorts = tuple(
        CohortParams(
            nu=np.array(c["nu"]), lam=np.array(c["lam"]),
            gamma=np.array(c["gamma"]), psi_diag=np.array(c["psi_diag"]),
            rho=np.array(c["rho"]), phi_sd=np.array(c["phi_sd"]),
            sigma2=float(c["sigma2"]), alpha=float(c["alpha"]),
            eta=np.array(c["eta"]), xi=np.array(c["xi"]))
        for c in doc["cohorts"])
    return ParameterSet(beta1=doc["beta1"], beta2=doc["beta2"],
                        log_bp=doc["log_bp"], cohorts=cohorts)


# ---------------------------------------------------------------------------
# configuration files
# ---------------------------------------------------------------------------

_PRIOR_KEYS = {
    "loading": "loading_prior", "gamma": "gamma_prior", "nu": "nu_prior",
    "psi": "psi_prior", "phi_sd": "phi_sd_prior", "sigma2": "sigma2_prior",
    "alpha": "alpha_prior", "log_bp": "logbp_prior", "beta": "beta_prior",
    "rho": "rho_prior",
}


def read_prior_config(path=None) -> tuple[PriorConfig, float | None]:
    """Model config YAML -> (PriorConfig, rescale target sd or None).

    Every prior key is optional and defaults to the application values;
    ``rescale_sd`` defaults to 15 and may be null to disable rescaling.
    """
    if path is None:
        return PriorConfig(), 15.0
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    kwargs = {}
    for key, val in (doc.get("priors") or {}).items():
        if key not in _PRIOR_KEYS:
            raise ValueError(f"unknown prior block {key!r} in {path}")
        if not isinstance(val, (list, tuple)) or len(val) != 2:
            raise ValueError(f"prior {key!r} must be a [a, b] pair")
        kwargs[_PRIOR_KEYS[key]] = (float(val[0]), float(val[1]))
    rescale = doc.get("rescale_sd", 15.0)
    return PriorConfig(**kwargs), None if rescale is None else float(rescale)


def read_sim_config(path=None, seed=None) -> SimConfig:
    kwargs = {}
    if path is not None:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
        valid = {f.name for f in dataclasses.fields(SimConfig)}
        for key, val in doc.items():
            if key not in valid:
                raise ValueError(f"unknown simulation config field {key!r}")
            if isinstance(val, list):
                val = tuple(val)
            kwargs[key] = val
    if seed is not None:
        kwargs["seed"] = int(seed)
    return SimConfig(**kwargs)


# ---------------------------------------------------------------------------
# rescaling
# ---------------------------------------------------------------------------


def rescale_outcomes(cohorts, target_sd: float):
    """Scale every outcome column to a target sd over its observed cells.

    Returns ``(rescaled cohorts, factors)`` where ``factors[cohort_id][name]``
    is the multiplier applied to that column. The inverse transform is
    division by the stored factor.
    """
    out = []
    factors: dict[str, dict[str, float]] = {}
    for spec, data in cohorts:
        f = {}
        Y = np.array(data.Y)
        for k, nm in enumerate(spec.outcome_names):
            col = data.Y[data.mask[:, k], k]
            sd = float(col.std(ddof=1)) if col.size > 1 else 0.0
            if sd <= 0:
                raise ValueError(
                    f"cohort {spec.cohort_id}: outcome {nm!r} has zero "
                    "variance; cannot rescale")
            f[nm] = target_sd / sd
            Y[:, k] = Y[:, k] * f[nm]
        factors[spec.cohort_id] = f
        out.append((spec, CohortData(Y, data.mask, data.x, data.p)))
    return out, factors


# ---------------------------------------------------------------------------
# fingerprints, draws, manifests
# ---------------------------------------------------------------------------


def data_fingerprint(data_dir) -> str:
    """Content hash of a dataset directory (spec file + cohort CSVs)."""
    data_dir = Path(data_dir)
    h = hashlib.sha256()
    names = sorted(p.name for p in data_dir.glob("cohort_*.csv"))
    for name in ["cohorts.yaml", *names]:
        path = data_dir / name
        if path.exists():
            h.update(name.encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def write_draws(draws: PosteriorDraws, run_dir) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "draws.csv", "w") as fh:
        fh.write(",".join(["chain", *draws.param_names]) + "\n")
        for s in range(draws.n_draws):
            row = [str(int(draws.chain_ids[s]))]
            row += [format(v, ".17g") for v in draws.draws[s]]
            fh.write(",".join(row) + "\n")
    meta = {
        "format_version": FORMAT_VERSION,
        "param_names": list(draws.param_names),
        "divergence_count": list(draws.divergence_count),
        "step_sizes": list(draws.step_sizes),
        "warnings": list(draws.warnings),
        "meta": _jsonable(draws.meta),
    }
    with open(run_dir / "draws_meta.json", "w") as fh:
        json.dump(meta, fh, indent=1)
    if draws.pointwise_loglik is not None:
        np.savez_compressed(run_dir / "pointwise.npz",
                            pointwise=draws.pointwise_loglik)


def load_draws(run_dir) -> PosteriorDraws:
    run_dir = Path(run_dir)
    with open(run_dir / "draws_meta.json") as fh:
        meta = json.load(fh)
    raw = np.loadtxt(run_dir / "draws.csv", delimiter=",", skiprows=1, ndmin=2)
    chain_ids = raw[:, 0].astype(int)
    pw_path = run_dir / "pointwise.npz"
    pointwise = np.load(pw_path)["pointwise"] if pw_path.exists() else None
    return PosteriorDraws(
        draws=raw[:, 1:],
        param_names=tuple(meta["param_names"]),
        pointwise_loglik=pointwise,
        chain_ids=chain_ids,
        divergence_count=tuple(meta["divergence_count"]),
        step_sizes=tuple(meta["step_sizes"]),
        warnings=tuple(meta["warnings"]),
        meta=meta["meta"],
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def write_manifest(run_dir, **fields) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    doc = {"format_version": FORMAT_VERSION,
           "created_unix": time.time(),
           "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    doc.update(_jsonable(fields))
    path = run_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
    return path


def read_manifest(run_dir) -> dict:
    with open(Path(run_dir) / "manifest.json") as fh:
        return json.load(fh)
