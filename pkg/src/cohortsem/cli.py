"""Command-line front end: ``simulate``, ``fit``, ``compare``.

Exit codes: 0 success, 1 validation failure (bad config, bad data,
fingerprint mismatch), 2 convergence failure when ``--strict`` is set.
``COHORTSEM_OUT`` sets the default output root (default ``./runs``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io as csio
from .diagnostics import summarize_param
from .evidence import (bayes_factor, bridge_logml, elpd_difference,
                       evidence_verdict, waic)
from .likelihood import PosteriorDensity
from .params import DoseResponse, LatentHandling, ModelVariant
from .priors import PriorConfig
from .sampler import PosteriorDraws, SamplerConfig, run_chains
from .simulate import generate

_RHAT_LIMIT = 1.1


class ValidationError(Exception):
    """User-input problem: maps to exit code 1."""


def _out_root() -> Path:
    return Path(os.environ.get("COHORTSEM_OUT", "runs"))


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    try:
        cfg = csio.read_sim_config(args.config, seed=args.seed)
    except (ValueError, TypeError, OSError) as exc:
        raise ValidationError(str(exc)) from exc
    out = Path(args.out) if args.out else _out_root() / f"simdata-{cfg.seed}"
    ds = generate(cfg)
    paths = csio.write_dataset(list(ds.cohorts), out)
    csio.write_truth(ds, out / "truth.json")
    n_rows = sum(da.n for _, da in ds.cohorts)
    n_cells = sum(da.mask.size for _, da in ds.cohorts)
    n_miss = sum(int((~da.mask).sum()) for _, da in ds.cohorts)
    print(f"wrote {len(paths) - 1} cohorts, {n_rows} individuals to {out}")
    print(f"missing cells: {n_miss}/{n_cells} ({n_miss / n_cells:.1%})")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _load_and_prepare(data_dir, prior_cfg: PriorConfig, rescale_sd):
    try:
        cohorts = csio.read_dataset(data_dir)
    except (ValueError, OSError) as exc:
        raise ValidationError(str(exc)) from exc
    factors = {}
    if rescale_sd is not None:
        cohorts, factors = csio.rescale_outcomes(cohorts, rescale_sd)
    return cohorts, factors


def _summaries(draws: PosteriorDraws):
    rows = []
    for name in draws.param_names:
        stats = summarize_param(draws.by_chain(name))
        rows.append((name, stats))
    return rows


def _write_summary(rows, path):
    with open(path, "w") as fh:
        fh.write("param,mean,sd,q2.5,median,q97.5,rhat,ess\n")
        for name, s in rows:
            fh.write(f"{name},{s['mean']:.8g},{s['sd']:.8g},{s['q2.5']:.8g},"
                     f"{s['median']:.8g},{s['q97.5']:.8g},{s['rhat']:.5g},"
                     f"{s['ess']:.6g}\n")


def _write_eta_summary(draws: PosteriorDraws, path):
    rows = [nm for nm in draws.param_names if nm.startswith("eta[")]
    if not rows:
        return False
    with open(path, "w") as fh:
        fh.write("cohort,index,mean,sd,q2.5,median,q97.5\n")
        for nm in rows:
            cohort = nm[nm.index("[") + 1:nm.index("]")]
            idx = nm[nm.rindex("[") + 1:-1]
            col = draws.column(nm)
            q = np.percentile(col, [2.5, 50, 97.5])
            fh.write(f"{cohort},{idx},{col.mean():.8g},{col.std(ddof=1):.8g},"
                     f"{q[0]:.8g},{q[1]:.8g},{q[2]:.8g}\n")
    return True


def _write_density(draws: PosteriorDraws, param, path):
    from scipy.stats import gaussian_kde

    col = draws.column(param)
    kde = gaussian_kde(col)
    bw = kde.factor * col.std(ddof=1)
    grid = np.linspace(col.min() - 3 * bw, col.max() + 3 * bw, 512)
    dens = kde(grid)
    with open(path, "w") as fh:
        fh.write("value,density\n")
        for v, d in zip(grid, dens):
            fh.write(f"{v:.10g},{d:.10g}\n")


def fit_run(data_dir, *, out_dir, run_id=None, variant="piecewise",
            latents="reduced", chains=3, iters=2000, warmup=1000,
            target_accept=0.9, max_tree_depth=10, seed=0,
            prior_cfg: PriorConfig | None = None, rescale_sd=15.0,
            model_config_path=None) -> tuple[Path, PosteriorDraws, dict]:
    """Fit one model run and persist every artifact; returns the run dir.

    Library entry point backing the ``fit`` subcommand (and refits
    triggered by ``compare``).
    """
    if model_config_path is not None:
        prior_cfg, rescale_sd = csio.read_prior_config(model_config_path)
    prior_cfg = prior_cfg or PriorConfig()
    mv = ModelVariant(LatentHandling(latents), DoseResponse(variant))
    cohorts, factors = _load_and_prepare(data_dir, prior_cfg, rescale_sd)
    fingerprint = csio.data_fingerprint(data_dir)
    run_id = run_id or f"{latents}-{variant}-seed{seed}-{fingerprint[:8]}"
    run_dir = Path(out_dir) / run_id
    cfg = SamplerConfig(n_chains=chains, n_iter=iters, n_warmup=warmup,
                        target_accept=target_accept,
                        max_tree_depth=max_tree_depth, seed=seed)
    draws = run_chains(mv, cohorts, prior_cfg, cfg)

    csio.write_draws(draws, run_dir)
    rows = _summaries(draws)
    _write_summary(rows, run_dir / "summary.csv")
    has_eta = _write_eta_summary(draws, run_dir / "eta_summary.csv")
    dens_params = [p for p in ("beta1", "beta2", "log_bp")
                   if p in draws.param_names]
    for p in dens_params:
        _write_density(draws, p, run_dir / f"density_{p}.csv")
    with open(run_dir / "rescale.json", "w") as fh:
        json.dump({"target_sd": rescale_sd, "factors": factors}, fh, indent=1)

    structural = [(nm, s) for nm, s in rows
                  if not nm.startswith(("eta[", "xi["))]
    rhats = [s["rhat"] for _, s in structural if np.isfinite(s["rhat"])]
    max_rhat = max(rhats) if rhats else float("nan")
    convergence = {
        "warnings": list(draws.warnings),
        "divergences": list(draws.divergence_count),
        "max_rhat_structural": max_rhat,
        "converged": (not draws.warnings) and (max_rhat <= _RHAT_LIMIT),
    }
    csio.write_manifest(
        run_dir,
        run_id=run_id,
        variant={"latents": latents, "dose_response": variant},
        seed=seed,
        sampler={"chains": chains, "iters": iters, "warmup": warmup,
                 "target_accept": target_accept,
                 "max_tree_depth": max_tree_depth},
        data_dir=str(Path(data_dir).resolve()),
        data_fingerprint=fingerprint,
        rescale_sd=rescale_sd,
        priors={k: list(getattr(prior_cfg, k))
                for k in prior_cfg.__dataclass_fields__},
        outputs={
            "draws": "draws.csv", "summary": "summary.csv",
            "eta_summary": "eta_summary.csv" if has_eta else None,
            "densities": [f"density_{p}.csv" for p in dens_params],
            "pointwise": "pointwise.npz",
        },
        convergence=convergence,
    )
    return run_dir, draws, convergence


def cmd_fit(args) -> int:
    out_dir = Path(args.out) if args.out else _out_root()
    run_dir, draws, convergence = fit_run(
        args.data, out_dir=out_dir, run_id=args.run_id,
        variant=args.variant, latents=args.latents, chains=args.chains,
        iters=args.iters, warmup=args.warmup,
        target_accept=args.target_accept,
        max_tree_depth=args.max_tree_depth, seed=args.seed,
        model_config_path=args.config)
    print(f"run written to {run_dir}")
    for p in ("beta1", "beta2", "log_bp"):
        if p in draws.param_names:
            col = draws.column(p)
            print(f"  {p}: mean {col.mean():.4f} sd {col.std(ddof=1):.4f}")
    if not convergence["converged"]:
        print("convergence warnings:", file=sys.stderr)
        for w in convergence["warnings"]:
            print(f"  {w}", file=sys.stderr)
        print(f"  max structural rhat: {convergence['max_rhat_structural']:.3f}",
              file=sys.stderr)
        if args.strict:
            return 2
    return 0


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def _prior_from_manifest(man) -> PriorConfig:
    return PriorConfig(**{k: tuple(v) for k, v in man["priors"].items()})


def _logml_for_run(run_dir, man, refit_root) -> float:
    """Bridge log marginal likelihood, refitting fully-marginal when needed."""
    if man["variant"]["latents"] != LatentHandling.FULLY_MARGINAL.value:
        refit_dir, draws, _ = fit_run(
            man["data_dir"], out_dir=refit_root,
            run_id=f"{man['run_id']}-marginal-refit",
            variant=man["variant"]["dose_response"],
            latents=LatentHandling.FULLY_MARGINAL.value,
            chains=man["sampler"]["chains"], iters=man["sampler"]["iters"],
            warmup=man["sampler"]["warmup"],
            target_accept=man["sampler"]["target_accept"],
            max_tree_depth=man["sampler"]["max_tree_depth"],
            seed=man["seed"], prior_cfg=_prior_from_manifest(man),
            rescale_sd=man["rescale_sd"])
        man = csio.read_manifest(refit_dir)
        run_dir = refit_dir
        del draws
    draws = csio.load_draws(run_dir)
    prior_cfg = _prior_from_manifest(man)
    cohorts, _ = _load_and_prepare(man["data_dir"], prior_cfg,
                                   man["rescale_sd"])
    mv = ModelVariant(LatentHandling(man["variant"]["latents"]),
                      DoseResponse(man["variant"]["dose_response"]))
    post = PosteriorDensity(mv, cohorts, prior_cfg)
    unc = np.array([post.layout.to_unconstrained(x) for x in draws.draws])
    res = bridge_logml(unc, post.value, seed=man["seed"])
    return res.logml


def cmd_compare(args) -> int:
    run1, run2 = Path(args.run1), Path(args.run2)
    man1, man2 = csio.read_manifest(run1), csio.read_manifest(run2)
    fp1 = csio.data_fingerprint(man1["data_dir"])
    fp2 = csio.data_fingerprint(man2["data_dir"])
    if man1["data_fingerprint"] != fp1 or man2["data_fingerprint"] != fp2:
        raise ValidationError("stored data fingerprint no longer matches the "
                              "data directory contents")
    if man1["data_fingerprint"] != man2["data_fingerprint"]:
        raise ValidationError("runs were fitted on different data "
                              f"({man1['data_fingerprint'][:12]} vs "
                              f"{man2['data_fingerprint'][:12]})")
    d1, d2 = csio.load_draws(run1), csio.load_draws(run2)
    if d1.pointwise_loglik is None or d2.pointwise_loglik is None:
        raise ValidationError("runs lack pointwise log-likelihood matrices")
    w1, w2 = waic(d1.pointwise_loglik), waic(d2.pointwise_loglik)
    diff, diff_se = elpd_difference(w1, w2)

    refit_root = _out_root() / "refits" if args.out is None \
        else Path(args.out).parent / "refits"
    logml1 = _logml_for_run(run1, man1, refit_root)
    logml2 = _logml_for_run(run2, man2, refit_root)
    bf, log_bf = bayes_factor(logml1, logml2)
    verdict = evidence_verdict(bf)

    report = {
        "run_1": man1["run_id"], "run_2": man2["run_id"],
        "waic_1": {"waic": w1.waic, "se": w1.waic_se, "p_waic": w1.p_waic,
                   "elpd": w1.elpd_waic},
        "waic_2": {"waic": w2.waic, "se": w2.waic_se, "p_waic": w2.p_waic,
                   "elpd": w2.elpd_waic},
        "elpd_diff_1_minus_2": diff, "elpd_diff_se": diff_se,
        "log_ml_1": logml1, "log_ml_2": logml2,
        "bf_12": bf, "log_bf_12": log_bf,
        "verdict": verdict,
    }
    out = Path(args.out) if args.out else \
        _out_root() / f"compare-{man1['run_id']}-vs-{man2['run_id']}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(report, fh, indent=1)
    print(f"model 1: {man1['run_id']}  WAIC {w1.waic:.1f} (se {w1.waic_se:.1f})")
    print(f"model 2: {man2['run_id']}  WAIC {w2.waic:.1f} (se {w2.waic_se:.1f})")
    print(f"elpd difference (1-2): {diff:.2f} (se {diff_se:.2f})")
    print(f"log marginal likelihoods: {logml1:.2f} vs {logml2:.2f}")
    print(f"Bayes factor (1 vs 2): {bf:.4g}  [{verdict}]")
    print(f"report written to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cohortsem",
        description="Multi-cohort latent-factor dose-response modeling")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    sim.add_argument("--config", help="simulation config YAML")
    sim.add_argument("--out", help="output dataset directory")
    sim.add_argument("--seed", type=int, default=None)
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="fit the model to a dataset directory")
    fit.add_argument("--data", required=True, help="dataset directory")
    fit.add_argument("--config", help="model config YAML (priors, rescaling)")
    fit.add_argument("--out", help="output root (default $COHORTSEM_OUT or ./runs)")
    fit.add_argument("--run-id", help="run directory name (default derived)")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--chains", type=int, default=3)
    fit.add_argument("--iters", type=int, default=2000,
                     help="iterations per chain including warmup")
    fit.add_argument("--warmup", type=int, default=1000)
    fit.add_argument("--target-accept", type=float, default=0.9)
    fit.add_argument("--max-tree-depth", type=int, default=10)
    fit.add_argument("--variant", choices=["piecewise", "linear"],
                     default="piecewise")
    fit.add_argument("--latents", choices=["full", "reduced", "marginal"],
                     default="reduced")
    fit.add_argument("--strict", action="store_true",
                     help="exit 2 on convergence warnings")
    fit.set_defaults(func=cmd_fit)

    cmp_ = sub.add_parser("compare",
                          help="WAIC + Bayes factor between two runs")
    cmp_.add_argument("run1", help="run directory of model 1")
    cmp_.add_argument("run2", help="run directory of model 2")
    cmp_.add_argument("--out", help="report JSON path")
    cmp_.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
