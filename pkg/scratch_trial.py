"""Scratch: paper-scale ReducedXi trial fit."""
import sys
import time

import numpy as np

from cohortsem.diagnostics import ess_array, split_rhat_array
from cohortsem.params import DoseResponse, LatentHandling, ModelVariant
from cohortsem.priors import PriorConfig
from cohortsem.sampler import SamplerConfig, run_chains
from cohortsem.simulate import SimConfig, generate

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 101
iters = int(sys.argv[2]) if len(sys.argv) > 2 else 900
warm = int(sys.argv[3]) if len(sys.argv) > 3 else 500

ds = generate(SimConfig(seed=seed))
priors = PriorConfig(sigma2_prior=(3.0, 1.0), phi_sd_prior=(2.0, 3.0))
variant = ModelVariant(LatentHandling.REDUCED_XI, DoseResponse.PIECEWISE)
cfg = SamplerConfig(n_chains=3, n_iter=iters, n_warmup=warm, seed=seed)
t0 = time.time()
draws = run_chains(variant, list(ds.cohorts), priors, cfg)
print(f"fit time {time.time()-t0:.1f}s draws {draws.draws.shape} div {draws.divergence_count}",
      flush=True)
for p, true in [("beta1", -2.0), ("beta2", -3.0), ("log_bp", np.log(1.3))]:
    col = draws.column(p)
    m = draws.by_chain(p)
    lo, hi = np.percentile(col, [2.5, 97.5])
    print(f"{p}: mean {col.mean():.3f} sd {col.std():.3f} CI [{lo:.3f},{hi:.3f}] "
          f"true {true:.3f} rhat {split_rhat_array(m):.3f} ess {ess_array(m):.0f} "
          f"covered {lo <= true <= hi}", flush=True)
for c in range(6):
    cols = [i for i, nm in enumerate(draws.param_names)
            if nm.startswith(f"eta[c{c+1}]")]
    eta_hat = draws.draws[:, cols].mean(0)
    r = np.corrcoef(eta_hat, ds.truth.cohorts[c].eta)[0, 1]
    print(f"eta corr c{c+1}: {r:.4f}", flush=True)
for p in ["lambda[c1][0]", "sigma2[c1]", "phi_sd[c1][0]", "gamma[c1][1]", "nu[c1][0]"]:
    m = draws.by_chain(p)
    print(f"{p}: mean {m.mean():.3f} rhat {split_rhat_array(m):.3f} "
          f"ess {ess_array(m):.0f}", flush=True)
print("stepsizes", [round(s, 4) for s in draws.step_sizes], flush=True)
