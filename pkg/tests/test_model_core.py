"""Parameter-space types, constraint transforms, and priors."""

import math

import numpy as np
import pytest
from scipy.stats import norm

from cohortsem import (
    CohortData,
    CohortSpec,
    ModelVariant,
    ParamLayout,
    PriorConfig,
    PsiNotPositiveDefinite,
    assemble_psi,
    log_prior,
    log_prior_blocks,
)
from cohortsem.params import DoseResponse, LatentHandling
from cohortsem.priors import PriorEvaluator

from conftest import make_cohort


class TestCohortTypes:
    def test_factor_map_length_checked(self):
        with pytest.raises(ValueError, match="factor_map"):
            CohortSpec("x", 3, 2, np.array([0, 1]), n=4)

    def test_every_factor_needs_an_outcome(self):
        with pytest.raises(ValueError, match="no mapped outcome"):
            CohortSpec("x", 3, 2, np.array([0, 0, 0]), n=4)

    def test_under_three_outcomes_per_factor_warns(self):
        with pytest.warns(UserWarning, match="fewer than 3"):
            CohortSpec("x", 4, 2, np.array([0, 0, 0, 1]), n=4)

    def test_self_and_duplicate_pairs_rejected(self):
        fm = np.zeros(4, dtype=int)
        with pytest.raises(ValueError, match="self-pair"):
            CohortSpec("x", 4, 1, fm, resid_pairs=((1, 1),))
        with pytest.raises(ValueError, match="duplicate"):
            CohortSpec("x", 4, 1, fm, resid_pairs=((0, 1), (1, 0)))

    def test_all_missing_row_rejected(self):
        Y = np.ones((3, 2))
        mask = np.array([[True, True], [False, False], [True, False]])
        with pytest.raises(ValueError, match="zero observed"):
            CohortData(Y, mask, np.zeros(3), np.zeros(3))

    def test_negative_exposure_rejected(self):
        Y = np.ones((2, 2))
        mask = np.ones((2, 2), dtype=bool)
        with pytest.raises(ValueError, match="nonnegative"):
            CohortData(Y, mask, np.array([0.1, -0.2]), np.zeros(2))


class TestAssemblePsi:
    def test_diagonal_case_is_identity(self):
        out = assemble_psi(np.ones(2), np.empty(0), ())
        np.testing.assert_array_equal(out, np.eye(2))

    def test_single_pair_entry(self):
        out = assemble_psi(np.array([4.0, 9.0]), np.array([0.5]), ((0, 1),))
        np.testing.assert_allclose(out, [[4.0, 3.0], [3.0, 9.0]])

    def test_exactly_symmetric(self, rng):
        for _ in range(50):
            psi = rng.uniform(0.5, 3.0, 4)
            rho = rng.uniform(-0.6, 0.6, 2)
            out = assemble_psi(psi, rho, ((0, 1), (2, 3)))
            assert (out == out.T).all()

    def test_pd_failure_names_pairs(self):
        # eigen-oracle: three near-unit correlations on a 3-cycle with one
        # sign flipped cannot be PD
        pairs = ((0, 1), (1, 2), (0, 2))
        rho = np.array([0.999, 0.999, -0.999])
        evals = np.linalg.eigvalsh(
            np.array([[1.0, 0.999, -0.999], [0.999, 1.0, 0.999],
                      [-0.999, 0.999, 1.0]]))
        assert evals.min() < 0
        with pytest.raises(PsiNotPositiveDefinite) as exc:
            assemble_psi(np.ones(3), rho, pairs)
        assert exc.value.pairs == pairs

    def test_invalid_inputs(self):
        with pytest.raises(ValueError, match="positive"):
            assemble_psi(np.array([0.0, 1.0]), np.empty(0), ())
        with pytest.raises(ValueError, match="correlations"):
            assemble_psi(np.ones(2), np.array([1.0]), ((0, 1),))


def _layouts():
    cohorts = [make_cohort("a", n=4, K=5, d=2, pairs=((0, 2), (1, 3)), seed=3),
               make_cohort("b", n=3, K=4, d=2, pairs=(), seed=4)]
    specs = [sp for sp, _ in cohorts]
    out = []
    for lat in LatentHandling:
        for dose in DoseResponse:
            out.append(ParamLayout(ModelVariant(lat, dose), specs))
    return out


class TestTransforms:
    def test_round_trip_identity(self, rng):
        # 1000 random parameter sets across all variants
        layouts = _layouts()
        per = 1000 // len(layouts) + 1
        for layout in layouts:
            for _ in range(per):
                v = rng.normal(scale=1.5, size=layout.dim)
                ps, _ = layout.from_unconstrained(v)
                v2 = layout.to_unconstrained(ps)
                np.testing.assert_allclose(v2, v, rtol=1e-12, atol=1e-12)

    def test_positive_blocks_positive(self, rng):
        layout = _layouts()[0]
        ps, _ = layout.from_unconstrained(rng.normal(size=layout.dim) * 2)
        layout.validate(ps)  # raises if any constraint violated

    def test_trivial_values(self):
        layout = _layouts()[0]
        x = np.ones(layout.dim)
        x[layout.corr_idx] = 0.0
        v = layout.to_unconstrained(x)
        # sigma2=1 -> unconstrained 0; rho=0 -> unconstrained 0
        assert v[layout.pos_idx].max() == 0.0
        assert np.all(v[layout.corr_idx] == 0.0)
        _, logjac = layout.constrain(v)
        # exp-block Jacobians vanish at 1; each correlation leaves log(1/2)
        assert logjac == pytest.approx(len(layout.corr_idx) * math.log(0.5))

    def test_log_jacobian_matches_finite_differences(self, rng):
        # d(logjac)/dv_i equals the log-derivative change of the map along
        # random 1-D slices
        for layout in _layouts()[:2]:
            v = rng.normal(scale=0.7, size=layout.dim)
            _, base = layout.constrain(v)
            h = 1e-6
            for idx in rng.choice(layout.dim, size=12, replace=False):
                vp, vm = v.copy(), v.copy()
                vp[idx] += h
                vm[idx] -= h
                xp, jp = layout.constrain(vp)
                xm, jm = layout.constrain(vm)
                # FD of the log of the diagonal derivative
                dx = (xp[idx] - xm[idx]) / (2 * h)
                fd = (jp - jm) / (2 * h)
                an = layout.grad_to_unconstrained(
                    v, *layout.constrain(v)[:1], np.zeros(layout.dim))[idx]
                assert fd == pytest.approx(an, rel=1e-6, abs=1e-6)
                assert dx != 0

    def test_non_finite_rejected(self):
        layout = _layouts()[0]
        v = np.zeros(layout.dim)
        v[0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            layout.constrain(v)
        x = np.ones(layout.dim)
        x[0] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            layout.to_unconstrained(x)


class TestLogPrior:
    def test_truncated_loading_at_one(self):
        # lambda = 1 under positive-truncated N(1,1): log(phi(0) / Phi(1))
        expected = math.log(norm.pdf(0.0) / norm.cdf(1.0))
        cohorts = [make_cohort("a", n=2, K=1, d=1, pairs=(), seed=5)]
        layout = ParamLayout(ModelVariant(), [cohorts[0][0]])
        x = np.ones(layout.dim)
        x[layout.corr_idx] = 0.0
        ps = layout.unpack(x)
        cfg = PriorConfig()
        blocks = log_prior_blocks(ps, cfg)
        assert blocks["lambda"] == pytest.approx(expected, rel=1e-10)

    def test_logbp_prior_is_normal_sd_half(self):
        # lognormal(0, 0.5) on the break-point == N(0, 0.5) on its log
        cohorts = [make_cohort("a", n=2, K=1, d=1, pairs=(), seed=5)]
        layout = ParamLayout(ModelVariant(), [cohorts[0][0]])
        ps = layout.unpack(np.ones(layout.dim))
        blocks = log_prior_blocks(ps, PriorConfig())
        # log_bp = 1.0 in this packed vector
        assert blocks["log_bp"] == pytest.approx(norm.logpdf(1.0, 0.0, 0.5))
        x0 = np.ones(layout.dim)
        x0[layout.sl("log_bp")] = 0.0
        blocks0 = log_prior_blocks(layout.unpack(x0), PriorConfig())
        assert blocks0["log_bp"] == pytest.approx(norm.logpdf(0.0, 0.0, 0.5))

    def test_uniform_rho_density(self):
        # Beta(1,1) on (rho+1)/2 is uniform on (-1,1): density 1/2 anywhere
        sp, da = make_cohort("a", n=2, K=4, d=1, pairs=((0, 1),), seed=6)
        layout = ParamLayout(ModelVariant(), [sp])
        x = np.ones(layout.dim)
        x[layout.corr_idx] = 0.0
        blocks = log_prior_blocks(layout.unpack(x), PriorConfig())
        assert blocks["rho"] == pytest.approx(math.log(0.5))
        x[layout.corr_idx] = 0.73
        blocks = log_prior_blocks(layout.unpack(x), PriorConfig())
        assert blocks["rho"] == pytest.approx(math.log(0.5))

    def test_blocks_sum_to_total(self, rng, two_cohorts):
        layout = ParamLayout(ModelVariant(), [sp for sp, _ in two_cohorts])
        cfg = PriorConfig()
        for _ in range(20):
            ps, _ = layout.from_unconstrained(rng.normal(size=layout.dim))
            blocks = log_prior_blocks(ps, cfg)
            assert sum(blocks.values()) == pytest.approx(
                log_prior(ps, cfg), rel=1e-12)

    def test_vectorized_matches_object_api(self, rng, two_cohorts):
        layout = ParamLayout(ModelVariant(), [sp for sp, _ in two_cohorts])
        cfg = PriorConfig()
        ev = PriorEvaluator(layout, cfg)
        for _ in range(20):
            v = rng.normal(size=layout.dim)
            x, _ = layout.constrain(v)
            lp, _ = ev.value_and_grad(x)
            assert lp == pytest.approx(log_prior(layout.unpack(x), cfg),
                                       rel=1e-10)

    def test_hyperparameters_validated(self):
        with pytest.raises(ValueError, match="sd must be positive"):
            PriorConfig(beta_prior=(0.0, 0.0))
        with pytest.raises(ValueError, match="Beta parameters"):
            PriorConfig(rho_prior=(0.0, 1.0))
