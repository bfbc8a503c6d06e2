"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line with the measured quantity before asserting.
"""
import numpy as np
import pytest

from reflpose.experiments import run_fig6
from reflpose.geometry import EulerZXZ, compose_combined, rotation_zxz
from reflpose.multiview import integrate_multiview, loop_rotation_error
from reflpose.ransac import RansacConfig, ransac_pair
from reflpose.residuals import ParamVector, objective_gradient, objective_terms, total_objective
from reflpose.solvers import (
    ambiguity_family,
    decompose_at_eta,
    estimate_translation,
    recover_depths,
    rotation_error_deg,
    solve_pair,
)
from reflpose.synth import SynthConfig, generate, generate_multiview, sample_gbr, sample_rotation
from reflpose.geometry import matrix_to_euler

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail
    return _report


def test_criterion_1_normal_count_failure_rates(report):
    rows = run_fig6(500, [3, 4, 5], "g21", seed=0)
    rates = {r.count: r.failure_rate for r in rows}
    ok = rates[3] >= 0.5 and rates[4] <= 0.05 and rates[5] <= 0.05
    detail = ", ".join(f"count {r.count}: {r.failures}/{r.converged} converged failed "
                       f"({r.failure_rate:.3f})" for r in rows)
    report(1, ok, detail + " [need >=0.5 at 3, <=0.05 at 4 and 5]")


def test_criterion_2_reflection_count_failure_rates(report):
    zero, one = run_fig6(500, [0, 1], "rotation", seed=0)
    ok = zero.failure_rate >= 0.95 and one.failure_rate <= 0.05
    report(2, ok, f"0 reflections: {zero.failure_rate:.3f} of {zero.converged}, "
                  f"1 reflection: {one.failure_rate:.3f} of {one.converged}")


def test_criterion_3_ambiguity_family(report):
    rng = np.random.default_rng(3)
    worst_im_nm, min_rm, count = 0.0, np.inf, 0
    for k in range(500):
        inst = generate(SynthConfig(8, 8, 4, rng_seed=int(rng.integers(1 << 31))))
        t = inst.truth
        a = t.angles
        for _ in range(10):
            eta_hat = np.sign(a.eta) * rng.uniform(np.radians(1), np.radians(179))
            h1, h2 = ambiguity_family(a.eta, eta_hat, a.theta, a.phi, t.g1, t.g2)
            terms = objective_terms(ParamVector.from_parts(EulerZXZ(a.theta, a.phi, eta_hat), h1, h2),
                                    inst.observed)
            worst_im_nm = max(worst_im_nm, terms["f_IM"] + terms["f_NM12"] + terms["f_NM21"])
            if abs(eta_hat - a.eta) > np.radians(2):
                min_rm = min(min_rm, terms["f_RM12"] + terms["f_RM21"])
                count += 1
    ok = worst_im_nm < 1e-8 and min_rm > 0.0
    report(3, ok, f"max f_IM+f_NM {worst_im_nm:.2e} (<1e-8), min f_RM {min_rm:.2e} (>0) over {count} "
                  f"substitutions with |eta_hat - eta| > 2 deg")


def test_criterion_4_decompose_round_trip(report):
    rng = np.random.default_rng(4)
    cfg = SynthConfig()
    worst_p, worst_det = 0.0, 0.0
    for _ in range(1000):
        R = sample_rotation(rng, (np.radians(5), np.pi - np.radians(5)))
        a = matrix_to_euler(R)
        g1, g2 = sample_gbr(rng, cfg), sample_gbr(rng, cfg)
        G = compose_combined(g1, R, g2)
        h1, h2, _ = decompose_at_eta(G, a.theta, a.phi, a.eta)
        worst_p = max(worst_p, np.abs(np.subtract(h1.as_tuple() + h2.as_tuple(),
                                                  g1.as_tuple() + g2.as_tuple())).max())
        worst_det = max(worst_det, abs(h2.lam - np.linalg.det(G) * h1.lam))
    ok = worst_p < 1e-7 and worst_det < 1e-9
    report(4, ok, f"max GBR parameter error {worst_p:.2e} (<1e-7), "
                  f"max lambda2 determinant gap {worst_det:.2e} (<1e-9)")


def test_criterion_5_ransac_robustness(report):
    good = 0
    for trial in range(200):
        inst = generate(SynthConfig(20, 20, 20, outlier_fraction=0.3, rng_seed=1000 + trial))
        try:
            sol, masks = ransac_pair(inst.observed, RansacConfig(rng_seed=trial))
        except (RuntimeError, ValueError):
            continue
        clean = not any((masks[k] & inst.outlier_labels[k]).any() for k in masks)
        good += clean and rotation_error_deg(sol.R21, inst.truth.R21) < 1.0
    report(5, good >= 180, f"{good}/200 trials with error < 1 deg and no outliers kept (need >= 180)")


def _affine_fit_residual(z_rec, z_true, u, v):
    A = np.column_stack([z_true, u, v, np.ones_like(u)])
    coef, *_ = np.linalg.lstsq(A, z_rec, rcond=None)
    return float(np.sqrt(np.mean((A @ coef - z_rec) ** 2)))


def test_criterion_6_translation_and_depth(report):
    worst_c, worst_fit = 0.0, 0.0
    for seed in range(50):
        inst = generate(SynthConfig(12, 4, 1, eta_abs_range=(np.radians(10), np.radians(170)),
                                    rng_seed=seed))
        s, t = inst.observed, inst.truth
        sol = solve_pair(s, rng=seed)
        a = t.angles
        # the solved rotation and a member of the ambiguity family
        for R in (sol.R21, rotation_zxz(a.theta, a.phi, 0.8 * a.eta)):
            est = estimate_translation(R, s.pixels)
            z = recover_depths(R, est.t_xy, s.pixels)
            worst_c = max(worst_c, est.constraint_residual)
            worst_fit = max(worst_fit, _affine_fit_residual(z, t.depths, s.pixels[:, 2], s.pixels[:, 3]))
    ok = worst_c < 1e-10 and worst_fit < 1e-8
    report(6, ok, f"max translation constraint residual {worst_c:.2e} (<1e-10), "
                  f"max depth family fit residual {worst_fit:.2e} (<1e-8)")


def test_criterion_7_gradient(report):
    rng = np.random.default_rng(7)
    inst = generate(SynthConfig(10, 10, 10, noise_normal_sigma=np.radians(2), rng_seed=7))
    s = inst.observed
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        x = np.concatenate([rng.uniform(-np.pi, np.pi, 3),
                            rng.uniform(-1, 1, 2), rng.uniform(-0.7, 0.7, 1),
                            rng.uniform(-1, 1, 2), rng.uniform(-0.7, 0.7, 1)])
        g = objective_gradient(x, s)
        num = np.array([(total_objective(x + h * e, s) - total_objective(x - h * e, s)) / (2 * h)
                        for e in np.eye(9)])
        worst = max(worst, np.linalg.norm(num - g) / max(np.linalg.norm(g), 1e-12))
    report(7, worst < 1e-5, f"max relative gradient mismatch {worst:.2e} over 100 points (<1e-5)")


def test_criterion_8_loop_closure(report):
    mv = generate_multiview(3, SynthConfig(8, 8, 3, rng_seed=8))
    edges = [(i, j, solve_pair(inst.observed, rng=0), inst.observed) for (i, j), inst in mv.pairs.items()]
    g = integrate_multiview(edges)
    err = loop_rotation_error(g, [0, 1, 2])
    report(8, err < 1e-6 and g.converged, f"loop rotation error {err:.2e} rad (<1e-6), converged={g.converged}")
