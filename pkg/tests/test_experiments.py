import math

import numpy as np
import pytest

from isomech import (
    Binomial,
    ConstructionFailedError,
    Gaussian,
    InvalidParameterError,
    Poisson,
    Ranking,
    ScoreBounds,
    ValidationError,
)
from isomech.isotonic import project_descending_batch
from isomech.experiments import (
    AuthorRecord,
    EstimationConfig,
    ExplicitScores,
    LinearRamp,
    PoolResample,
    ReviewRecord,
    _pack_codewords,
    build_lower_bound,
    estimation_error_curve,
    rate_check,
    surrogate_eval,
    synthetic_icml_study,
)


def make_cfg(**kwargs):
    base = dict(
        family=Binomial(10),
        n_grid=(10, 40),
        generator=LinearRamp(9, 3),
        scores_per_item=3,
        trials=500,
        seed=3,
    )
    base.update(kwargs)
    return EstimationConfig(**base)


def test_noiseless_gaussian_curve_is_zero():
    cfg = make_cfg(family=Gaussian(1e-12), trials=100)
    for point in estimation_error_curve(cfg):
        assert point.mse_im == pytest.approx(0.0, abs=1e-6)
        assert point.mse_raw == pytest.approx(0.0, abs=1e-6)


def test_binomial_raw_error_matches_variance_oracle():
    n = 40
    cfg = make_cfg(n_grid=(n,), trials=4000)
    point = estimation_error_curve(cfg)[0]
    family, s = Binomial(10), 3
    ramp = 9 - 6 * np.arange(n) / (n - 1)
    expected = float(np.mean(family.variance(family.natural_param(ramp)) / s))
    assert point.mse_raw == pytest.approx(expected, abs=6 * point.mse_raw_se)


def test_adjusted_beats_raw_on_ramp():
    cfg = make_cfg(n_grid=(100,), trials=400)
    point = estimation_error_curve(cfg)[0]
    gap_se = math.hypot(point.mse_im_se, point.mse_raw_se)
    assert point.mse_im < point.mse_raw - 5 * gap_se


def test_curve_deterministic_across_workers():
    cfg = make_cfg(trials=300)
    assert estimation_error_curve(cfg) == estimation_error_curve(cfg, max_workers=4)
    assert estimation_error_curve(cfg) == estimation_error_curve(cfg)


def test_generator_validation():
    with pytest.raises(ValidationError):
        estimation_error_curve(make_cfg(n_grid=(1,), trials=10))  # ramp needs n >= 2
    with pytest.raises(InvalidParameterError):
        estimation_error_curve(make_cfg(generator=ExplicitScores((4.0, 12.0)), n_grid=(2,), trials=5))
    with pytest.raises(ValidationError):
        EstimationConfig(Binomial(10), (), LinearRamp(), trials=10)
    with pytest.raises(ValidationError):
        estimation_error_curve(
            make_cfg(generator=PoolResample(pool=()), n_grid=(3,), trials=5)
        )


def test_rate_check_slope_near_cube_root():
    report = rate_check(
        Binomial(10), ScoreBounds(0, 10), [64, 128, 256, 512, 1024],
        trials=150, seed=2,
    )
    assert 0.18 <= report.slope <= 0.48
    risks = [p.risk for p in report.points]
    assert all(a < b for a, b in zip(risks, risks[1:]))  # total risk grows


def test_rate_check_degenerate_grid_errors():
    with pytest.raises(ValidationError):
        rate_check(Binomial(10), ScoreBounds(0, 10), [64], trials=10)
    with pytest.raises(ValidationError):
        rate_check(Binomial(10), ScoreBounds(0, 10), [64, 64], trials=10)


def test_rate_check_constant_scores_logn_growth():
    # zero score range: total risk should track sigma^2 log n, calibrated at
    # the smallest grid point
    grid = [64, 256, 1024]
    report = rate_check(Gaussian(1.0), ScoreBounds(3, 3), grid, trials=400, seed=7)
    c1 = report.points[0].risk / math.log(grid[0])
    for point in report.points[1:]:
        assert point.risk <= 2 * c1 * math.log(point.n)


def test_lower_bound_invariants_small():
    for family, bounds in ((Gaussian(1.0), ScoreBounds(0, 6)), (Binomial(10), ScoreBounds(0, 10))):
        built = build_lower_bound(family, bounds, 64, seed=5)
        margins = built.verify()
        assert built.size >= built.target_size
        assert margins["min_hamming"] >= built.k / 8
        assert margins["min_dist2"] >= margins["dist2_floor"]
        assert margins["kl_budget"] < margins["kl_cap"]
        assert np.all(built.codewords[0] == 0)


def test_lower_bound_kl_two_routes():
    built = build_lower_bound(Gaussian(1.0), ScoreBounds(0, 6), 64, seed=6)
    # closed form per member stays under the analytic budget
    assert np.all(built.kl_values <= built.kl_bound + 1e-12)
    # and the analytic budget under the packing cap
    assert built.kl_bound < math.log(built.size) / 8.0 + 1e-12


def test_lower_bound_uneven_blocks():
    built = build_lower_bound(Gaussian(1.0), ScoreBounds(0, 1.2), 20, seed=8)
    assert sum(built.block_sizes) == 20
    assert built.n % built.k != 0  # exercise the remainder path
    built.verify()


def test_lower_bound_minimum_size():
    # smallest admissible n pins k = n = 8 and a two-member family
    built = build_lower_bound(Gaussian(1.0), ScoreBounds(0, 2), 8, seed=9)
    assert built.k == 8
    assert built.size >= 2
    assert built.verify()["min_hamming"] >= 1


def test_lower_bound_preconditions():
    with pytest.raises(ValidationError):
        build_lower_bound(Gaussian(1.0), ScoreBounds(0, 6), 7)
    with pytest.raises(InvalidParameterError):
        build_lower_bound(Gaussian(1.0), ScoreBounds(0, 6), 64, c=-1.0)


def test_packing_gives_up_when_impossible():
    with pytest.raises(ConstructionFailedError):
        _pack_codewords(
            3, 10, min_hamming=3, min_weighted=3,
            block_sizes=np.ones(3, dtype=np.int64),
            seed_seq=np.random.SeedSequence(0), max_restarts=2,
        )


def test_synthetic_study_constant_pool():
    rows = synthetic_icml_study([5.0], n_grid=(2, 5), trials=300, seed=4)
    for row in rows:
        assert row.mse_im_mean <= row.mse_raw_mean
        assert row.improvement >= 0
    # trialwise: projection toward the feasible constant truth contracts
    rng = np.random.default_rng(0)
    x = Binomial(10).sample_mean(np.full((500, 5, 3), 5.0), rng).mean(axis=2)
    fitted = project_descending_batch(x)
    assert np.all(
        np.square(fitted - 5.0).sum(axis=1) <= np.square(x - 5.0).sum(axis=1) + 1e-9
    )


def test_synthetic_study_improvement_grows():
    rng = np.random.default_rng(12)
    pool = rng.uniform(3, 8, size=500)
    rows = synthetic_icml_study(pool, n_grid=(2, 8, 17), trials=400, seed=12)
    improvements = [row.improvement for row in rows]
    assert improvements[0] > 0.05
    assert improvements[-1] > improvements[0] + 0.20


def test_synthetic_study_pool_validation():
    with pytest.raises(InvalidParameterError):
        synthetic_icml_study([5.0, 11.0], n_grid=(2,), trials=10)
    with pytest.raises(ValidationError):
        synthetic_icml_study([], n_grid=(2,), trials=10)


# ---------------------------------------------------------------------------
# surrogate evaluation fixtures
# ---------------------------------------------------------------------------


def reviews_for(sid, scored):
    return [ReviewRecord(sid, score, conf) for score, conf in scored]


def test_surrogate_identical_scores_give_zero_error():
    reviews = reviews_for("a", [(6, 5), (6, 4), (6, 3)]) + reviews_for(
        "b", [(4, 5), (4, 2)]
    )
    authors = [AuthorRecord("alice", ("a", "b"), (1, 2))]
    report = surrogate_eval(reviews, authors, seed=0)
    row = next(r for r in report.rows if r.n == 2)
    assert row.authors == 1
    assert row.mse_raw == 0 and row.mse_im == 0


def test_surrogate_hand_computed_fixture():
    # held-out scores violate the reported order; pooling must help
    reviews = (
        reviews_for("a", [(8, 5), (8, 5), (4, 1)])
        + reviews_for("b", [(5, 5), (5, 5), (7, 1)])
    )
    authors = [AuthorRecord("alice", ("a", "b"), (1, 2))]
    report = surrogate_eval(reviews, authors, seed=0)
    row = next(r for r in report.rows if r.n == 2)
    # surrogates (8, 5); held-out (4, 7); fit of (4, 7) under a >= b: (5.5, 5.5)
    assert row.mse_raw == pytest.approx((16 + 4) / 2)
    assert row.mse_im == pytest.approx((6.25 + 0.25) / 2)
    assert row.improvement == pytest.approx(1 - 3.25 / 10)
    assert row.mse_im < row.mse_raw


def test_surrogate_filters_and_gaps():
    reviews = (
        reviews_for("a", [(6, 5), (7, 1)])
        + reviews_for("b", [(4, 5), (5, 1)])
        + reviews_for("single", [(9, 5)])  # only one review: dropped
        + reviews_for("c", [(5, 3), (6, 2)])
        + reviews_for("d", [(3, 3), (4, 2)])
        + reviews_for("e", [(8, 3), (7, 2)])
        + reviews_for("f", [(6, 3), (5, 2)])
    )
    authors = [
        AuthorRecord("ok2", ("a", "b"), (1, 2)),
        AuthorRecord("ok4", ("c", "d", "e", "f"), (2, 4, 1, 3)),
        AuthorRecord("refs-dropped", ("a", "single"), (1, 2)),
        AuthorRecord("all-first", ("a", "b"), (1, 1)),
        AuthorRecord("unknown", ("a", "zzz"), (1, 2)),
    ]
    report = surrogate_eval(reviews, authors, seed=1)
    assert report.skipped_submissions == 1
    assert report.skipped_authors == {"missing_submission": 2, "malformed_ranking": 1}
    ns = {row.n: row for row in report.rows}
    assert set(ns) == {2, 3, 4}
    assert ns[2].authors == 1 and ns[4].authors == 1
    assert ns[3].authors == 0
    assert ns[3].mse_raw is None and ns[3].mse_im is None and ns[3].improvement is None


def test_surrogate_confidence_ties_seeded():
    reviews = reviews_for("a", [(2, 3), (9, 3), (5, 3)]) + reviews_for(
        "b", [(4, 2), (6, 1)]
    )
    authors = [AuthorRecord("alice", ("a", "b"), (1, 2))]
    first = surrogate_eval(reviews, authors, seed=11)
    again = surrogate_eval(reviews, authors, seed=11)
    assert first == again
    assert "a" in first.tie_breaks and "b" not in first.tie_breaks
    other = surrogate_eval(reviews, authors, seed=13)
    assert other.tie_breaks != first.tie_breaks or other == first


def test_surrogate_uses_reported_not_truthful_ranking():
    # a deliberately wrong report must be honored, not silently fixed
    reviews = reviews_for("a", [(9, 5), (9, 4), (9, 1)]) + reviews_for(
        "b", [(2, 5), (2, 4), (2, 1)]
    )
    wrong = [AuthorRecord("bob", ("a", "b"), (2, 1))]  # claims b is best
    report = surrogate_eval(reviews, wrong, seed=0)
    row = next(r for r in report.rows if r.n == 2)
    # held-out (9, 2) pooled under b >= a: (5.5, 5.5); surrogates (9, 2)
    assert row.mse_im == pytest.approx(((5.5 - 9) ** 2 + (5.5 - 2) ** 2) / 2)
    assert row.mse_raw == pytest.approx(0.0)
