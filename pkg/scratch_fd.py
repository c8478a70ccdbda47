"""Scratch: finite-difference check of PosteriorDensity gradients."""
import numpy as np

from cohortsem import (
    CohortData, CohortSpec, ModelVariant, LatentHandling, DoseResponse,
    PosteriorDensity, PriorConfig,
)

rng = np.random.default_rng(7)


def make_cohort(cid, n, K, d, pairs, seed):
    r = np.random.default_rng(seed)
    fm = np.array([k % d for k in range(K)])
    spec = CohortSpec(cid, K, d, fm, resid_pairs=pairs, n=n)
    Y = r.normal(size=(n, K))
    mask = r.random((n, K)) > 0.25
    mask[:, 0] = True  # ensure each row observed
    Ym = np.where(mask, Y, np.nan)
    x = r.uniform(0, 2.6, n)
    p = r.normal(size=n)
    return spec, CohortData(Ym, mask, x, p)


cohorts = [
    make_cohort("a", 6, 5, 2, ((0, 2),), 1),
    make_cohort("b", 5, 4, 2, (), 2),
]

priors = PriorConfig(phi_sd_prior=(2.0, 3.0), sigma2_prior=(3.0, 1.0),
                     psi_prior=(1.0, 1.0))

for lat in (LatentHandling.FULLY_MARGINAL, LatentHandling.REDUCED_XI,
            LatentHandling.FULL):
    for dose in (DoseResponse.PIECEWISE, DoseResponse.LINEAR):
        variant = ModelVariant(lat, dose)
        post = PosteriorDensity(variant, cohorts, priors)
        worst = 0.0
        for trial in range(8):
            v = rng.normal(scale=0.5, size=post.dim)
            val, g = post.value_and_grad(v)
            assert np.isfinite(val), (lat, dose, val)
            h = 1e-5
            gfd = np.zeros_like(v)
            for i in range(post.dim):
                vp = v.copy(); vp[i] += h
                vm = v.copy(); vm[i] -= h
                gfd[i] = (post.value(vp) - post.value(vm)) / (2 * h)
            rel = np.abs(g - gfd) / np.maximum.reduce(
                [np.abs(g), np.abs(gfd), np.full_like(g, 1e-2)])
            worst = max(worst, rel.max())
            if rel.max() > 1e-5:
                bad = np.argsort(rel)[-5:]
                for i in bad:
                    print("  BAD", post.layout.param_names[i], g[i], gfd[i], rel[i])
                break
        print(f"{lat.value:10s} {dose.value:10s} dim={post.dim:4d} worst rel err {worst:.2e}")
