"""No-U-turn Hamiltonian Monte Carlo with windowed warmup adaptation.

Dynamic trajectories are built by repeated doubling with multinomial
sampling over the trajectory (progressive, biased toward the newer
subtree), stopping on the classic U-turn criterion or on divergence
(energy error > 1000). Step size adapts by Nesterov dual averaging toward
a target acceptance statistic; the diagonal mass matrix is estimated from
variance accumulators over slow warmup windows (15% fast / 75% growing
slow windows / 10% fast, following the scheme popularized by Stan).

Chains own their RNG streams (spawned from one seed sequence) and share
no mutable state, so results are reproducible bit-for-bit for a fixed
seed and chain count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cohorts import CohortData, CohortSpec
from .likelihood import PosteriorDensity
from .params import ModelVariant
from .priors import PriorConfig

__all__ = ["SamplerConfig", "PosteriorDraws", "run_chains", "sample_density"]

_DIVERGENCE_THRESHOLD = 1000.0
_MAX_INIT_TRIES = 100


@dataclass(frozen=True)
class SamplerConfig:
    """Chain count, iteration budget and adaptation targets.

    ``n_iter`` counts all iterations per chain including the ``n_warmup``
    discarded ones, so each chain keeps ``n_iter - n_warmup`` draws.
    """

    n_chains: int = 3
    n_iter: int = 2000
    n_warmup: int = 1000
    target_accept: float = 0.9
    max_tree_depth: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.n_warmup >= self.n_iter:
            raise ValueError("n_warmup must be smaller than n_iter")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be >= 1")


@dataclass
class PosteriorDraws:
    """Post-warmup draws on the constrained scale plus per-draw bookkeeping."""

    draws: np.ndarray                  # (S, dim)
    param_names: tuple[str, ...]
    pointwise_loglik: np.ndarray | None  # (S, N) observed-data log density
    chain_ids: np.ndarray              # (S,)
    divergence_count: tuple[int, ...]  # per chain, post-warmup
    step_sizes: tuple[float, ...]      # per chain, post-adaptation
    warnings: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def n_chains(self) -> int:
        return len(self.divergence_count)

    def column(self, param: str) -> np.ndarray:
        try:
            j = self.param_names.index(param)
        except ValueError:
            raise KeyError(f"unknown parameter {param!r}") from None
        return self.draws[:, j]

    def by_chain(self, param: str) -> np.ndarray:
        """Draws of one parameter as an (n_chains, draws_per_chain) array."""
        col = self.column(param)
        chains = [col[self.chain_ids == c] for c in range(self.n_chains)]
        return np.stack(chains)


# ---------------------------------------------------------------------------
# core dynamics
# ---------------------------------------------------------------------------


def leapfrog(q, p, grad, eps, minv, logp_grad):
    """One leapfrog step under a diagonal inverse mass matrix."""
    p_half = p + 0.5 * eps * grad
    q_new = q + eps * (minv * p_half)
    logp_new, grad_new = logp_grad(q_new)
    p_new = p_half + 0.5 * eps * grad_new
    return q_new, p_new, grad_new, logp_new


def _kinetic(p, minv):
    return 0.5 * float(p @ (minv * p))


class _Tree:
    """Subtree summary carried through the recursive doubling."""

    __slots__ = ("q_minus", "p_minus", "g_minus", "q_plus", "p_plus", "g_plus",
                 "q_prop", "g_prop", "logp_prop", "logw", "sum_alpha", "n_alpha",
                 "divergent", "turning")

    def __init__(self, q_minus, p_minus, g_minus, q_plus, p_plus, g_plus,
                 q_prop, g_prop, logp_prop, logw, sum_alpha, n_alpha,
                 divergent, turning):
        self.q_minus, self.p_minus, self.g_minus = q_minus, p_minus, g_minus
        self.q_plus, self.p_plus, self.g_plus = q_plus, p_plus, g_plus
        self.q_prop, self.g_prop, self.logp_prop = q_prop, g_prop, logp_prop
        self.logw = logw
        self.sum_alpha, self.n_alpha = sum_alpha, n_alpha
        self.divergent, self.turning = divergent, turning


def _is_turning(q_minus, q_plus, p_minus, p_plus, minv):
    dq = q_plus - q_minus
    return (dq @ (minv * p_minus) < 0) or (dq @ (minv * p_plus) < 0)


def _build_tree(depth, q, p, grad, direction, eps, minv, h0, logp_grad, rng):
    if depth == 0:
        q1, p1, g1, logp1 = leapfrog(q, p, grad, direction * eps, minv, logp_grad)
        h1 = -logp1 + _kinetic(p1, minv) if np.isfinite(logp1) else np.inf
        delta = h1 - h0
        divergent = not np.isfinite(delta) or delta > _DIVERGENCE_THRESHOLD
        logw = -delta if not divergent else -np.inf
        alpha = min(1.0, math.exp(min(0.0, -delta))) if np.isfinite(delta) else 0.0
        return _Tree(q1, p1, g1, q1, p1, g1, q1, g1, logp1, logw, alpha, 1,
                     divergent, False)

    half = _build_tree(depth - 1, q, p, grad, direction, eps, minv, h0,
                       logp_grad, rng)
    if half.divergent or half.turning:
        return half
    if direction == 1:
        other = _build_tree(depth - 1, half.q_plus, half.p_plus, half.g_plus,
                            direction, eps, minv, h0, logp_grad, rng)
        half.q_plus, half.p_plus, half.g_plus = other.q_plus, other.p_plus, other.g_plus
    else:
        other = _build_tree(depth - 1, half.q_minus, half.p_minus, half.g_minus,
                            direction, eps, minv, h0, logp_grad, rng)
        half.q_minus, half.p_minus, half.g_minus = (other.q_minus, other.p_minus,
                                                    other.g_minus)
    # multinomial sampling between the two halves
    logw_total = np.logaddexp(half.logw, other.logw)
    if np.isfinite(other.logw) and math.log(rng.random() + 1e-300) < other.logw - logw_total:
        half.q_prop, half.g_prop, half.logp_prop = (other.q_prop, other.g_prop,
                                                    other.logp_prop)
    half.logw = logw_total
    half.sum_alpha += other.sum_alpha
    half.n_alpha += other.n_alpha
    half.divergent = other.divergent
    half.turning = other.turning or _is_turning(half.q_minus, half.q_plus,
                                                half.p_minus, half.p_plus, minv)
    return half


def _nuts_step(q, logp, grad, eps, minv, max_depth, logp_grad, rng):
    """One NUTS transition; returns new state plus acceptance statistics."""
    p0 = rng.standard_normal(q.shape[0]) / np.sqrt(minv)
    h0 = -logp + _kinetic(p0, minv)
    q_minus = q_plus = q
    p_minus = p_plus = p0
    g_minus = g_plus = grad
    q_prop, g_prop, logp_prop = q, grad, logp
    logw = 0.0  # weight of the initial point relative to itself
    sum_alpha, n_alpha = 0.0, 0
    divergent = False
    depth = 0
    while depth < max_depth:
        direction = 1 if rng.random() < 0.5 else -1
        if direction == 1:
            tree = _build_tree(depth, q_plus, p_plus, g_plus, 1, eps, minv,
                               h0, logp_grad, rng)
            q_plus, p_plus, g_plus = tree.q_plus, tree.p_plus, tree.g_plus
        else:
            tree = _build_tree(depth, q_minus, p_minus, g_minus, -1, eps, minv,
                               h0, logp_grad, rng)
            q_minus, p_minus, g_minus = tree.q_minus, tree.p_minus, tree.g_minus
        sum_alpha += tree.sum_alpha
        n_alpha += tree.n_alpha
        if tree.divergent:
            divergent = True
            break
        if tree.turning:
            break
        # biased progressive sampling: favor the new subtree
        if math.log(rng.random() + 1e-300) < tree.logw - logw:
            q_prop, g_prop, logp_prop = tree.q_prop, tree.g_prop, tree.logp_prop
        logw = np.logaddexp(logw, tree.logw)
        depth += 1
        if _is_turning(q_minus, q_plus, p_minus, p_plus, minv):
            break
    accept_stat = sum_alpha / n_alpha if n_alpha else 0.0
    return q_prop, logp_prop, g_prop, accept_stat, divergent, depth


def _find_reasonable_epsilon(q, logp, grad, minv, logp_grad, rng):
    """Double/halve the step size until the one-step accept ratio crosses 1/2."""
    eps = 1.0
    p = rng.standard_normal(q.shape[0]) / np.sqrt(minv)
    h0 = -logp + _kinetic(p, minv)
    _, p1, _, logp1 = leapfrog(q, p, grad, eps, minv, logp_grad)
    h1 = -logp1 + _kinetic(p1, minv) if np.isfinite(logp1) else np.inf
    delta = h0 - h1  # log acceptance ratio
    direction = 1 if delta > math.log(0.5) else -1
    for _ in range(60):
        if direction == 1 and delta <= math.log(0.5):
            break
        if direction == -1 and delta >= math.log(0.5):
            break
        eps *= 2.0**direction
        _, p1, _, logp1 = leapfrog(q, p, grad, eps, minv, logp_grad)
        h1 = -logp1 + _kinetic(p1, minv) if np.isfinite(logp1) else np.inf
        delta = h0 - h1
    return eps


class _DualAveraging:
    """Nesterov dual averaging of log step size (gamma=0.05, t0=10, kappa=0.75)."""

    def __init__(self, eps0, target):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.m = 0

    def update(self, accept_stat):
        self.m += 1
        frac = 1.0 / (self.m + 10.0)
        self.h_bar = (1 - frac) * self.h_bar + frac * (self.target - accept_stat)
        self.log_eps = self.mu - math.sqrt(self.m) / 0.05 * self.h_bar
        w = self.m**-0.75
        self.log_eps_bar = w * self.log_eps + (1 - w) * self.log_eps_bar

    @property
    def eps(self):
        return math.exp(self.log_eps)

    @property
    def eps_final(self):
        return math.exp(self.log_eps_bar)


def _warmup_schedule(n_warmup):
    """(step-size-only head, list of slow-window ends, step-size-only tail)."""
    if n_warmup < 20:
        return n_warmup, [], 0
    init_buf = int(0.15 * n_warmup)
    term_buf = int(0.10 * n_warmup)
    slow = n_warmup - init_buf - term_buf
    ends, size, pos = [], 25, 0
    while pos + size < slow:
        ends.append(init_buf + pos + size)
        pos += size
        size *= 2
    ends.append(init_buf + slow)  # last window absorbs the remainder
    return init_buf, ends, term_buf


class _Welford:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def variance(self):
        if self.n < 2:
            return np.ones_like(self.mean)
        return self.m2 / (self.n - 1)


def _regularized_minv(welford):
    # shrink toward a small positive diagonal; never non-positive
    n = max(welford.n, 1)
    var = welford.variance()
    return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def _nuts_chain(logp_grad, v0, cfg: SamplerConfig, rng):
    """Run one chain; returns kept unconstrained draws and chain statistics."""
    dim = v0.shape[0]
    q = np.asarray(v0, dtype=np.float64)
    logp, grad = logp_grad(q)
    if not np.isfinite(logp):
        raise RuntimeError("chain initialized in a zero-probability region")
    minv = np.ones(dim)
    eps = _find_reasonable_epsilon(q, logp, grad, minv, logp_grad, rng)
    da = _DualAveraging(eps, cfg.target_accept)
    init_buf, slow_ends, _term = _warmup_schedule(cfg.n_warmup)
    welford = _Welford(dim) if slow_ends else None
    next_window = 0

    kept = np.empty((cfg.n_iter - cfg.n_warmup, dim))
    divergences_post = 0
    divergences_warm = 0
    max_depth_hits = 0
    for it in range(cfg.n_iter):
        warm = it < cfg.n_warmup
        q, logp, grad, accept_stat, divergent, depth = _nuts_step(
            q, logp, grad, eps, minv, cfg.max_tree_depth, logp_grad, rng)
        if depth >= cfg.max_tree_depth:
            max_depth_hits += 1
        if warm:
            divergences_warm += int(divergent)
            da.update(accept_stat)
            eps = da.eps
            in_slow = (welford is not None and init_buf <= it
                       and next_window < len(slow_ends))
            if in_slow:
                welford.add(q)
                if it + 1 == slow_ends[next_window]:
                    minv = _regularized_minv(welford)
                    welford = _Welford(dim)
                    next_window += 1
                    # restart step-size averaging around the current value
                    da = _DualAveraging(max(da.eps, 1e-10), cfg.target_accept)
            if it + 1 == cfg.n_warmup:
                eps = da.eps_final
        else:
            divergences_post += int(divergent)
            kept[it - cfg.n_warmup] = q
    return {
        "draws": kept,
        "divergences": divergences_post,
        "divergences_warmup": divergences_warm,
        "step_size": eps,
        "max_depth_hits": max_depth_hits,
        "mass_inv": minv,
    }


# ---------------------------------------------------------------------------
# public drivers
# ---------------------------------------------------------------------------


def sample_density(logp_grad, dim, cfg: SamplerConfig, init=None):
    """Sample an arbitrary (log-density, gradient) callable.

    Used for sampler calibration against known targets and by the model
    driver below. Returns ``(draws (S, dim), chain stats list)`` with
    draws stacked chain-by-chain in chain order.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)
    all_draws, stats = [], []
    for c in range(cfg.n_chains):
        rng = np.random.default_rng(seeds[c])
        if init is None:
            v0 = rng.uniform(-1.0, 1.0, dim)
        else:
            v0 = init(c, rng)
        res = _nuts_chain(logp_grad, v0, cfg, rng)
        all_draws.append(res["draws"])
        stats.append(res)
    return np.concatenate(all_draws, axis=0), stats


def run_chains(variant: ModelVariant,
               cohorts: list[tuple[CohortSpec, CohortData]],
               priors: PriorConfig | None = None,
               cfg: SamplerConfig | None = None,
               compute_pointwise: bool = True) -> PosteriorDraws:
    """Fit the model by NUTS and return constrained posterior draws.

    Chains initialize at the prior center mapped through the constraint
    transform, jittered uniformly in [-1, 1] on the unconstrained scale
    (re-jittered when the start lands in a zero-probability region).
    Persistent post-warmup divergence (>25% of transitions) is reported as
    a warning string on the result, never raised.
    """
    cfg = cfg or SamplerConfig()
    post = PosteriorDensity(variant, cohorts, priors)
    layout = post.layout
    center = layout.to_unconstrained(post.prior.center())

    def init(chain, rng):
        for _ in range(_MAX_INIT_TRIES):
            v0 = center + rng.uniform(-1.0, 1.0, layout.dim)
            if np.isfinite(post.value_and_grad(v0)[0]):
                return v0
        raise RuntimeError("could not find a finite starting point")

    draws_unc, stats = sample_density(post.value_and_grad, layout.dim, cfg,
                                      init=init)
    S = draws_unc.shape[0]
    per_chain = cfg.n_iter - cfg.n_warmup
    draws = np.empty_like(draws_unc)
    pointwise = np.empty((S, post.n_individuals)) if compute_pointwise else None
    for s in range(S):
        x, _ = layout.constrain(draws_unc[s])
        draws[s] = x
        if compute_pointwise:
            pointwise[s] = post.pointwise_x(x)
    chain_ids = np.repeat(np.arange(cfg.n_chains), per_chain)

    warn_msgs = []
    div_counts = tuple(st["divergences"] for st in stats)
    for c, st in enumerate(stats):
        if st["divergences"] > 0.25 * per_chain:
            warn_msgs.append(
                f"chain {c}: {st['divergences']}/{per_chain} post-warmup "
                "divergent transitions; results are unreliable")
        if st["max_depth_hits"] > 0.25 * cfg.n_iter:
            warn_msgs.append(
                f"chain {c}: maximum tree depth hit in {st['max_depth_hits']} "
                "transitions; consider raising max_tree_depth")
    for msg in warn_msgs:
        warnings.warn(msg, stacklevel=2)

    return PosteriorDraws(
        draws=draws,
        param_names=layout.param_names,
        pointwise_loglik=pointwise,
        chain_ids=chain_ids,
        divergence_count=div_counts,
        step_sizes=tuple(st["step_size"] for st in stats),
        warnings=tuple(warn_msgs),
        meta={
            "variant": {"latents": variant.latent_handling.value,
                        "dose_response": variant.dose_response.value},
            "seed": cfg.seed,
            "n_chains": cfg.n_chains,
            "n_iter": cfg.n_iter,
            "n_warmup": cfg.n_warmup,
            "divergences_warmup": tuple(st["divergences_warmup"] for st in stats),
        },
    )
