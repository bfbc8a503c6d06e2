"""RANSAC over the two-step solver.

Hypotheses come from minimal samples of four pixel and four normal
correspondences.  Each sample is centered on its own pixel centroid, so a
hypothesis never depends on the (possibly outlier-contaminated) global mean.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .correspondences import CorrespondenceSet, center
from .geometry import DegenerateGeometryError, compose_combined, rotation_zxz
from .residuals import ParamVector, count_residuals, reflection_angular_errors
from .solvers import (
    DEFAULT_RESTARTS,
    InsufficientCorrespondencesError,
    NoFeasibleEtaError,
    PairSolution,
    convergence_threshold,
    estimate_translation,
    fit_params,
    linear_combined,
    pixel_angles,
    step1_estimate_combined,
    step2_scan_eta,
)

logger = logging.getLogger(__name__)

SAMPLE_PIXELS = 4
SAMPLE_NORMALS = 4
DEGENERATE_RATIO = 1e-6
MAX_DEGENERATE_DRAWS = 100
MAX_REFITS = 3
ADAPTIVE_K = 5.0
MAD_SCALE = 1.4826
ADAPTIVE_FLOOR = {"pixels": 1e-8, "normals": 1e-8, "reflections": 1e-8}
KINDS = ("pixels", "normals", "reflections")


class AllSamplesDegenerateError(RuntimeError):
    pass


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 2000
    pixel_inlier_threshold: float = 0.01
    normal_inlier_threshold: float = np.radians(5.0)
    reflection_inlier_threshold: float = np.radians(5.0)
    confidence: float = 0.99
    rng_seed: int = 0
    restarts: int = DEFAULT_RESTARTS
    adaptive_thresholds: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if min(self.pixel_inlier_threshold, self.normal_inlier_threshold,
               self.reflection_inlier_threshold) <= 0:
            raise ValueError("inlier thresholds must be > 0")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0, 1)")


@dataclass(frozen=True, eq=False)
class Hypothesis:
    theta: float
    phi: float
    g21: np.ndarray
    origin: np.ndarray          # pixel centroid (u1, v1, u2, v2) the angles refer to


def _angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle between row vectors (any length); atan2 form stays accurate near zero."""
    with np.errstate(invalid="ignore", divide="ignore"):
        ang = np.arctan2(np.linalg.norm(np.cross(a, b), axis=1), np.sum(a * b, axis=1))
        ang = np.where(np.linalg.norm(a, axis=1) > 0, ang, np.nan)
    return np.where(np.isfinite(ang), ang, np.inf)


def pixel_residuals(h: Hypothesis, pixels: np.ndarray) -> np.ndarray:
    d = pixels - h.origin
    return np.abs(d[:, 0] * np.cos(h.phi) + d[:, 1] * np.sin(h.phi)
                  - d[:, 2] * np.cos(h.theta) - d[:, 3] * np.sin(h.theta))


def normal_errors(g21: np.ndarray, n1: np.ndarray, n2: np.ndarray) -> np.ndarray:
    """Worse-direction angle between observed and G21-mapped normals."""
    if len(n1) == 0:
        return np.zeros(0)
    try:
        inv = np.linalg.inv(g21)
    except np.linalg.LinAlgError:
        return np.full(len(n1), np.inf)
    return np.maximum(_angle(n2 @ g21.T, n1), _angle(n1 @ inv.T, n2))


def score(h: Hypothesis, s: CorrespondenceSet, cfg: RansacConfig) -> tuple[np.ndarray, np.ndarray]:
    pix = pixel_residuals(h, s.pixels) < cfg.pixel_inlier_threshold
    nrm = normal_errors(h.g21, s.normal_n1, s.normal_n2) < cfg.normal_inlier_threshold
    return pix, nrm


def _degenerate(px: np.ndarray, n1: np.ndarray, n2: np.ndarray) -> bool:
    for pts in (px[:, 0:2], px[:, 2:4]):
        sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        if sv[-1] <= DEGENERATE_RATIO * max(sv[0], 1e-300):
            return True
    for n in (n1, n2):
        sv = np.linalg.svd(n, compute_uv=False)
        if sv[-1] <= DEGENERATE_RATIO * sv[0]:
            return True
    return False


def fit_hypothesis(pixels: np.ndarray, n1: np.ndarray, n2: np.ndarray) -> Hypothesis:
    """Linear fit on any number (>= 4 / >= 3) of pixel and normal correspondences."""
    origin = pixels.mean(axis=0)
    theta, phi = pixel_angles(pixels - origin)
    return Hypothesis(theta, phi, linear_combined(theta, phi, n1, n2), origin)


def _refit_cost(h: Hypothesis, s: CorrespondenceSet, pix, nrm) -> float:
    """Sum of squared residuals of a linear refit on the given inliers (tie-breaker)."""
    if pix.sum() < SAMPLE_PIXELS or nrm.sum() < SAMPLE_NORMALS:
        return np.inf
    try:
        r = fit_hypothesis(s.pixels[pix], s.normal_n1[nrm], s.normal_n2[nrm])
    except (DegenerateGeometryError, np.linalg.LinAlgError):
        return np.inf
    e = pixel_residuals(r, s.pixels[pix])
    a = normal_errors(r.g21, s.normal_n1[nrm], s.normal_n2[nrm])
    return float(e @ e + a @ a)


def required_iterations(w_pixel: float, w_normal: float, confidence: float) -> float:
    """Standard confidence bound for a sample of 4 pixel + 4 normal correspondences."""
    p_good = w_pixel ** SAMPLE_PIXELS * w_normal ** SAMPLE_NORMALS
    if p_good >= 1.0:
        return 1.0
    if p_good <= 0.0:
        return np.inf
    return np.log(1.0 - confidence) / np.log1p(-p_good)


@dataclass(frozen=True, eq=False)
class SampleRecord:
    index: int
    inliers: int


def _draw(rng, n_px, n_nm):
    return (np.sort(rng.choice(n_px, SAMPLE_PIXELS, replace=False)),
            np.sort(rng.choice(n_nm, SAMPLE_NORMALS, replace=False)))


def sample_hypotheses(s: CorrespondenceSet, cfg: RansacConfig, rng: np.random.Generator
                      ) -> tuple[Hypothesis, np.ndarray, np.ndarray, list[SampleRecord]]:
    """Best minimal-sample hypothesis with its pixel and normal inlier masks."""
    n_px, n_nm = len(s.pixels), len(s.normals)
    best = None
    records: list[SampleRecord] = []
    needed = float(cfg.max_iterations)
    it = degenerate_run = 0
    while it < min(needed, cfg.max_iterations):
        ip, inn = _draw(rng, n_px, n_nm)
        px, n1, n2 = s.pixels[ip], s.normal_n1[inn], s.normal_n2[inn]
        if _degenerate(px, n1, n2):
            degenerate_run += 1
            if degenerate_run > MAX_DEGENERATE_DRAWS:
                break
            continue
        degenerate_run = 0
        try:
            h = fit_hypothesis(px, n1, n2)
        except (DegenerateGeometryError, np.linalg.LinAlgError):
            it += 1
            continue
        pix, nrm = score(h, s, cfg)
        count = int(pix.sum() + nrm.sum())
        records.append(SampleRecord(it, count))
        if best is None or count > best[1]:
            best = (h, count, pix, nrm, None)
        elif count == best[1]:
            # ties: lower refit cost on the inliers, then the earlier sample
            if best[4] is None:
                best = best[:4] + (_refit_cost(best[0], s, best[2], best[3]),)
            c = _refit_cost(h, s, pix, nrm)
            if c < best[4]:
                best = (h, count, pix, nrm, c)
        if best[1] == count:
            needed = required_iterations(best[2].mean(), best[3].mean(), cfg.confidence)
        it += 1
    if best is None:
        raise AllSamplesDegenerateError("every minimal sample was degenerate")
    return best[0], best[2], best[3], records


def _refine_step1(s: CorrespondenceSet, h: Hypothesis, pix, nrm, cfg, rng):
    """Nonlinear step 1 on the inliers; kept only if it does not lose inliers."""
    count = int(pix.sum() + nrm.sum())
    if pix.sum() < SAMPLE_PIXELS or nrm.sum() < SAMPLE_NORMALS:
        return h, pix, nrm
    sub, offsets = center(s.subset(pixels=pix, normals=nrm, reflections=np.zeros(0, int)))
    try:
        st1 = step1_estimate_combined(sub, cfg.restarts, rng)
    except (InsufficientCorrespondencesError, NoFeasibleEtaError):
        return h, pix, nrm
    h2 = Hypothesis(st1.theta, st1.phi, st1.g21, offsets)
    pix2, nrm2 = score(h2, s, cfg)
    if pix2.sum() + nrm2.sum() >= count:
        return h2, pix2, nrm2
    return h, pix, nrm


def model_errors(p: ParamVector, origin, s: CorrespondenceSet) -> dict[str, np.ndarray]:
    """Per-correspondence errors of a full parameter point (pixel distance, angles)."""
    R = rotation_zxz(p.theta, p.phi, p.eta)
    h = Hypothesis(p.theta, p.phi, compose_combined(p.g1, R, p.g2), origin)
    return {
        "pixels": pixel_residuals(h, s.pixels),
        "normals": normal_errors(h.g21, s.normal_n1, s.normal_n2),
        "reflections": reflection_angular_errors(p, s.refl_n1, s.refl_n2),
    }


def _thresholds(cfg: RansacConfig) -> dict[str, float]:
    return {"pixels": cfg.pixel_inlier_threshold, "normals": cfg.normal_inlier_threshold,
            "reflections": cfg.reflection_inlier_threshold}


def final_thresholds(errors: dict, masks: dict, cfg: RansacConfig) -> dict[str, float]:
    """Configured thresholds, tightened to ADAPTIVE_K robust sigmas of the current inliers."""
    thr = _thresholds(cfg)
    if not cfg.adaptive_thresholds:
        return thr
    for k in KINDS:
        e = errors[k][masks[k]]
        if len(e):
            sigma = MAD_SCALE * float(np.median(e))
            thr[k] = min(thr[k], max(ADAPTIVE_K * sigma, ADAPTIVE_FLOOR[k]))
    return thr


def _mask(errors: dict, thr: dict) -> dict[str, np.ndarray]:
    return {k: errors[k] < thr[k] for k in KINDS}


def _total(masks) -> int:
    return int(sum(int(m.sum()) for m in masks.values()))


def consensus(p: ParamVector, s: CorrespondenceSet, cfg: RansacConfig, origin=None) -> int:
    """Inlier count of a model at the configured (untightened) thresholds."""
    if origin is None:
        origin = s.pixels.mean(axis=0) if len(s.pixels) else np.zeros(4)
    return _total(_mask(model_errors(p, origin, s), _thresholds(cfg)))


def ransac_pair(s: CorrespondenceSet, cfg: RansacConfig | None = None
                ) -> tuple[PairSolution, dict[str, np.ndarray]]:
    """Robust two-step solve; returns the solution and boolean inlier masks per kind."""
    cfg = cfg or RansacConfig()
    n_px, n_nm, n_rf = s.counts
    if n_px < SAMPLE_PIXELS or n_nm < SAMPLE_NORMALS or n_rf < 1:
        raise InsufficientCorrespondencesError(
            "RANSAC needs >= 4 pixel, >= 4 normal and >= 1 reflection correspondences")
    rng = np.random.default_rng(cfg.rng_seed)
    h, pix, nrm, records = sample_hypotheses(s, cfg, rng)
    logger.info("ransac: %d hypotheses, best %d pixel + %d normal inliers",
                len(records), int(pix.sum()), int(nrm.sum()))
    h, pix, nrm = _refine_step1(s, h, pix, nrm, cfg, rng)

    # step 2 on every reflection; candidates ranked by reflection inlier count
    st2 = step2_scan_eta(h.g21, h.theta, h.phi, s.reflections, cfg.reflection_inlier_threshold)
    ref = st2.inliers["reflections"]
    masks = {"pixels": pix, "normals": nrm, "reflections": ref}
    p = st2.params
    masks = _mask(model_errors(p, h.origin, s), final_thresholds(model_errors(p, h.origin, s), masks, cfg))

    # joint refit on the inlier set; re-scored until the masks settle,
    # a refit that loses inliers is discarded
    f = float("inf")
    for _ in range(MAX_REFITS):
        sub, origin = center(s.subset(**masks))
        x, f_new = fit_params(sub, p.to_array(), "all")
        p_new = ParamVector.from_array(x)
        err = model_errors(p_new, origin, s)
        masks_new = _mask(err, final_thresholds(err, masks, cfg))
        if _total(masks_new) < _total(masks) and np.isfinite(f):
            break
        p, f = p_new, f_new
        if all(np.array_equal(masks[k], masks_new[k]) for k in KINDS):
            break
        masks = masks_new
    sub, _ = center(s.subset(**masks))
    R = rotation_zxz(p.theta, p.phi, p.eta)
    tr = estimate_translation(R, sub.pixels)
    sol = PairSolution.from_params(
        p, t_xy=tr.t_xy,
        converged=f < convergence_threshold(count_residuals(sub)),
        final_cost=f, eta_candidates=st2.eta_candidates, inliers=masks,
    )
    return sol, masks


__all__ = [
    "RansacConfig", "Hypothesis", "AllSamplesDegenerateError", "ransac_pair",
    "sample_hypotheses", "fit_hypothesis", "score", "normal_errors", "pixel_residuals",
    "required_iterations", "model_errors", "final_thresholds", "consensus",
]
