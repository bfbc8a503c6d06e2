import numpy as np
import pytest

from reflpose.correspondences import CorrespondenceSet
from reflpose.ransac import (
    AllSamplesDegenerateError,
    RansacConfig,
    consensus,
    fit_hypothesis,
    normal_errors,
    ransac_pair,
    required_iterations,
    sample_hypotheses,
)
from reflpose.solvers import InsufficientCorrespondencesError, rotation_error_deg, solve_pair
from reflpose.synth import SynthConfig, generate


def test_config_validation():
    with pytest.raises(ValueError):
        RansacConfig(pixel_inlier_threshold=0.0)
    with pytest.raises(ValueError):
        RansacConfig(confidence=1.0)
    with pytest.raises(ValueError):
        RansacConfig(max_iterations=0)


def test_required_iterations():
    assert required_iterations(1.0, 1.0, 0.99) == 1.0
    assert required_iterations(0.0, 1.0, 0.99) == np.inf
    w = 0.7
    assert np.isclose(required_iterations(w, w, 0.99), np.log(0.01) / np.log(1 - w ** 8))


def test_noiseless_all_inliers():
    inst = generate(SynthConfig(20, 20, 20, rng_seed=1))
    sol, masks = ransac_pair(inst.observed, RansacConfig(rng_seed=1))
    assert all(m.all() for m in masks.values())
    assert rotation_error_deg(sol.R21, inst.truth.R21) < 0.1
    assert sol.converged


@pytest.mark.parametrize("seed", range(3))
def test_outliers_excluded(seed):
    inst = generate(SynthConfig(20, 20, 20, outlier_fraction=0.3, rng_seed=seed))
    sol, masks = ransac_pair(inst.observed, RansacConfig(rng_seed=seed))
    for k, m in masks.items():
        assert not (m & inst.outlier_labels[k]).any()
    assert rotation_error_deg(sol.R21, inst.truth.R21) < 1.0


@pytest.mark.parametrize("seed", range(3))
def test_minimal_matches_two_step(seed):
    inst = generate(SynthConfig(4, 4, 1, rng_seed=seed))
    sol, masks = ransac_pair(inst.observed, RansacConfig(rng_seed=seed))
    ref = solve_pair(inst.observed, rng=seed)
    assert all(m.all() for m in masks.values())
    assert rotation_error_deg(sol.R21, ref.R21) < 1e-6
    assert np.allclose(sol.g21, ref.g21, atol=1e-6)


def test_determinism():
    inst = generate(SynthConfig(20, 20, 20, outlier_fraction=0.3, rng_seed=9))
    a, ma = ransac_pair(inst.observed, RansacConfig(rng_seed=4))
    b, mb = ransac_pair(inst.observed, RansacConfig(rng_seed=4))
    for k in ma:
        assert np.array_equal(ma[k], mb[k])
    assert np.array_equal(a.R21, b.R21)


def test_inlier_monotonicity():
    inst = generate(SynthConfig(20, 20, 20, outlier_fraction=0.3, rng_seed=6))
    cfg = RansacConfig(rng_seed=6)
    s = inst.observed
    _, _, _, records = sample_hypotheses(s, cfg, np.random.default_rng(cfg.rng_seed))
    sol, _ = ransac_pair(s, cfg)
    origin = s.subset(pixels=sol.inliers["pixels"]).pixels.mean(axis=0)
    final = consensus(sol.params, s.subset(reflections=np.zeros(0, int)), cfg, origin)
    assert final >= max(r.inliers for r in records)


def test_insufficient():
    inst = generate(SynthConfig(4, 4, 0, rng_seed=0))
    with pytest.raises(InsufficientCorrespondencesError):
        ransac_pair(inst.observed)


def test_all_degenerate():
    # every pixel on one line in both views
    u = np.linspace(-1, 1, 6)
    px = np.column_stack([u, 2 * u, u, -u])
    n = np.tile([0.0, 0.0, 1.0], (6, 1))
    s = CorrespondenceSet(px, np.hstack([n, n, np.zeros((6, 4))]), np.hstack([n[:1], n[:1]]))
    with pytest.raises(AllSamplesDegenerateError):
        ransac_pair(s)


def test_hypothesis_scoring_exact():
    inst = generate(SynthConfig(8, 8, 0, rng_seed=2))
    s = inst.observed
    h = fit_hypothesis(s.pixels[:4], s.normal_n1[:4], s.normal_n2[:4])
    assert normal_errors(h.g21, s.normal_n1, s.normal_n2).max() < 1e-9
