"""Two-step and direct pose solvers, G21 decomposition, ambiguity family, translation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import least_squares, minimize_scalar

from .correspondences import CorrespondenceSet, ReflectionCorr, center, pixel_array
from .geometry import (
    DegenerateGeometryError,
    EulerZXZ,
    GbrTransform,
    compose_combined,
    gbr_matrix,
    matrix_to_euler,
    rotation_angle_between,
    rotation_zxz,
)
from .residuals import (
    N_PARAMS,
    ParamVector,
    count_residuals,
    reflection_angular_errors,
    residual_jacobian,
    residual_vector,
    total_objective,
)

CONVERGENCE_PER_RESIDUAL = 1e-9
DEFAULT_RESTARTS = 8
ETA_GRID_SIZE = 180
ETA_MIN_ABS = np.radians(1.0)
DEFAULT_REFLECTION_THRESHOLD = np.radians(5.0)
MAX_NFEV = 300


class DecompositionError(ValueError):
    """G21 cannot be split into two GBRs at the requested eta."""


class NoFeasibleEtaError(RuntimeError):
    def __init__(self, msg, candidates=()):
        super().__init__(msg)
        self.candidates = list(candidates)


class InsufficientCorrespondencesError(ValueError):
    pass


@dataclass(frozen=True)
class EtaCandidate:
    eta: float
    reflection_inliers: int
    decomposition_residual: float
    reflection_error: float = float("inf")


@dataclass(frozen=True, eq=False)
class PairSolution:
    R21: np.ndarray
    angles: EulerZXZ
    g1: GbrTransform
    g2: GbrTransform
    g21: np.ndarray
    t_xy: np.ndarray = field(default_factory=lambda: np.zeros(2))
    converged: bool = False
    final_cost: float = float("inf")
    eta_candidates: tuple = ()
    inliers: dict | None = None

    @classmethod
    def from_params(cls, p, **kw) -> "PairSolution":
        p = p if isinstance(p, ParamVector) else ParamVector.from_array(p)
        R = rotation_zxz(p.theta, p.phi, p.eta)
        return cls(R, p.angles, p.g1, p.g2, compose_combined(p.g1, R, p.g2), **kw)

    @property
    def params(self) -> ParamVector:
        return ParamVector.from_parts(self.angles, self.g1, self.g2)

    def rotation_error(self, R_true: np.ndarray) -> float:
        """Geodesic rotation error in radians."""
        return rotation_angle_between(self.R21, R_true)

    def to_dict(self) -> dict:
        out = {
            "theta": self.angles.theta,
            "phi": self.angles.phi,
            "eta": self.angles.eta,
            "R21": self.R21.tolist(),
            "g1": list(self.g1.as_tuple()),
            "g2": list(self.g2.as_tuple()),
            "g21": self.g21.tolist(),
            "t_xy": [float(v) for v in self.t_xy],
            "converged": bool(self.converged),
            "final_cost": float(self.final_cost),
            "eta_candidates": [
                [c.eta, c.reflection_inliers, c.decomposition_residual] for c in self.eta_candidates
            ],
        }
        if self.inliers is not None:
            out["inliers"] = {k: np.asarray(v, bool).tolist() for k, v in self.inliers.items()}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PairSolution":
        angles = EulerZXZ(d["theta"], d["phi"], d["eta"])
        g1, g2 = GbrTransform(*d["g1"]), GbrTransform(*d["g2"])
        R = rotation_zxz(*angles.as_tuple())
        inl = d.get("inliers")
        return cls(
            R, angles, g1, g2, compose_combined(g1, R, g2),
            np.asarray(d.get("t_xy", [0.0, 0.0]), float),
            bool(d.get("converged", False)),
            float(d.get("final_cost", float("inf"))),
            tuple(EtaCandidate(float(e), int(n), float(r)) for e, n, r in d.get("eta_candidates", [])),
            None if inl is None else {k: np.asarray(v, bool) for k, v in inl.items()},
        )


@dataclass(frozen=True, eq=False)
class Step1Result:
    theta: float
    phi: float
    g21: np.ndarray
    params: ParamVector
    converged: bool
    cost: float


def convergence_threshold(n_residuals: int) -> float:
    return CONVERGENCE_PER_RESIDUAL * max(n_residuals, 1)


def random_start(rng: np.random.Generator) -> np.ndarray:
    x = np.empty(N_PARAMS)
    x[0:3] = rng.uniform(-np.pi, np.pi, size=3)
    x[[3, 4, 6, 7]] = rng.uniform(-0.5, 0.5, size=4)
    x[[5, 8]] = rng.uniform(np.log(0.5), np.log(2.0), size=2)
    return x


def fit_params(s: CorrespondenceSet, x0, selector="all", weights=None, mask=None,
               max_nfev: int | None = MAX_NFEV) -> tuple[np.ndarray, float]:
    """Local sum-of-squares minimisation from ``x0``; returns (x, objective).

    ``mask`` selects the free parameters; the others stay at ``x0``.  The
    returned objective never exceeds the starting one.
    """
    x0 = np.asarray(x0, dtype=float).copy()
    free = np.ones(N_PARAMS, bool) if mask is None else np.asarray(mask, bool)

    def full(z):
        x = x0.copy()
        x[free] = z
        return x

    def fun(z):
        return residual_vector(full(z), s, selector, weights)

    def jac(z):
        return residual_jacobian(full(z), s, selector, weights)[:, free]

    with np.errstate(all="ignore"):
        r0 = fun(x0[free])
        f0 = float(r0 @ r0)
        if len(r0) == 0:
            return x0, 0.0
        method = "lm" if len(r0) >= free.sum() else "trf"
        try:
            res = least_squares(fun, x0[free], jac=jac, method=method, xtol=1e-12, ftol=1e-12,
                                gtol=1e-10, max_nfev=max_nfev)
        except (DegenerateGeometryError, ValueError, np.linalg.LinAlgError):
            return x0, f0
    f = 2.0 * float(res.cost)
    if not np.isfinite(f) or f > f0:
        return x0, f0
    return full(res.x), f


def _multistart(s, selector, starts, weights=None, tol=0.0):
    """Best of several local fits; costs below ``tol`` count as a tie at zero.

    Ties go to the earliest start, so the loop stops at the first start under ``tol``.
    """
    best_x, best_f = None, np.inf
    for x0 in starts:
        try:
            x, f = fit_params(s, x0, selector, weights)
        except DegenerateGeometryError:
            continue
        if f < best_f:
            best_x, best_f = x, f
        if best_f < tol:
            break
    return best_x, best_f


def _ensure_centered(s: CorrespondenceSet) -> CorrespondenceSet:
    if s.centered or len(s.pixels) == 0:
        return s
    return center(s)[0]


# ---------------------------------------------------------------- linear step 1

def pixel_angles(pixels: np.ndarray) -> tuple[float, float]:
    """theta, phi from centered pixel correspondences (smallest right singular vector)."""
    pixels = np.asarray(pixels, float)
    A = np.column_stack([pixels[:, 0], pixels[:, 1], -pixels[:, 2], -pixels[:, 3]])
    v = np.linalg.svd(A)[2][-1]
    phi = np.arctan2(v[1], v[0])
    theta = np.arctan2(v[3], v[2])
    return float(theta), float(phi)


def linear_combined(theta: float, phi: float, n1: np.ndarray, n2: np.ndarray) -> np.ndarray:
    """G21 with G21 (cos th, sin th, 0) = (cos ph, sin ph, 0) and N1 x G21 N2 = 0 in least squares.

    The affine constraint is exactly the set of products G1^-T R21 G2^T sharing
    (theta, phi); it also fixes the scale that the normal constraints leave free.
    """
    n1, n2 = np.asarray(n1, float), np.asarray(n2, float)
    if len(n1) < 3:
        raise InsufficientCorrespondencesError("linear G21 needs at least 3 normal correspondences")
    ct = np.array([np.cos(theta), np.sin(theta), 0.0])
    cp = np.array([np.cos(phi), np.sin(phi), 0.0])
    C = np.kron(np.eye(3), ct[None, :])          # row-major vec(G)
    g0 = np.linalg.lstsq(C, cp, rcond=None)[0]
    Z = null_space(C)
    rows = []
    for a, b in zip(n1, n2):
        ax = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
        rows.append(np.kron(ax, b[None, :]))
    A = np.vstack(rows)
    AZ = A @ Z
    sv = np.linalg.svd(AZ, compute_uv=False)
    if sv[-1] < 1e-10 * max(sv[0], 1e-300):
        raise DegenerateGeometryError("normal correspondences do not determine G21")
    y = np.linalg.lstsq(AZ, -A @ g0, rcond=None)[0]
    return (g0 + Z @ y).reshape(3, 3)


def linear_step1(s: CorrespondenceSet) -> tuple[float, float, np.ndarray]:
    s = _ensure_centered(s)
    theta, phi = pixel_angles(s.pixels)
    return theta, phi, linear_combined(theta, phi, s.normal_n1, s.normal_n2)


def params_from_combined(g21, theta, phi) -> np.ndarray:
    """Any exact-as-possible parameter point reproducing ``g21`` (eta picked on a coarse grid)."""
    best, best_r = None, np.inf
    for eta in np.radians([60.0, 90.0, 120.0, -60.0, -90.0, -120.0, 30.0, -30.0, 150.0, -150.0]):
        try:
            g1, g2, r = decompose_at_eta(g21, theta, phi, eta)
        except DecompositionError:
            continue
        if r < best_r:
            best_r = r
            best = ParamVector.from_parts(EulerZXZ(theta, phi, eta), g1, g2).to_array()
    if best is None:
        raise DecompositionError("no eta decomposes the linear G21 estimate")
    return best


# ---------------------------------------------------------------- step 1

def step1_estimate_combined(s: CorrespondenceSet, restarts: int = DEFAULT_RESTARTS,
                            rng: np.random.Generator | int | None = None,
                            use_linear_init: bool = True) -> Step1Result:
    """Fit all nine parameters to pixel + normal correspondences; eta is a nuisance.

    The well-defined outputs are theta, phi and the product G21.
    """
    if len(s.pixels) < 4 or len(s.normals) < 4:
        raise InsufficientCorrespondencesError("step 1 needs >= 4 pixel and >= 4 normal correspondences")
    s = _ensure_centered(s)
    rng = np.random.default_rng(rng)
    starts = []
    if use_linear_init:
        try:
            theta, phi, g21 = linear_step1(s)
            starts.append(params_from_combined(g21, theta, phi))
        except (DegenerateGeometryError, DecompositionError, np.linalg.LinAlgError):
            pass
    starts += [random_start(rng) for _ in range(restarts)]
    x, f = _multistart(s, "step1", starts, tol=convergence_threshold(count_residuals(s, "step1")))
    if x is None:
        raise NoFeasibleEtaError("step 1 failed from every start")
    p = ParamVector.from_array(x)
    R = rotation_zxz(p.theta, p.phi, p.eta)
    g21 = compose_combined(p.g1, R, p.g2)
    converged = f < convergence_threshold(count_residuals(s, "step1"))
    return Step1Result(p.theta, p.phi, g21, p, converged, f)


# ---------------------------------------------------------------- decomposition

def decompose_at_eta(g21, theta: float, phi: float, eta: float
                     ) -> tuple[GbrTransform, GbrTransform, float]:
    """Split G21 into (G1, G2) given the full rotation; residual is the RMS element misfit."""
    G = np.asarray(g21, float)
    R = rotation_zxz(theta, phi, eta)
    rr = R[2, 0] ** 2 + R[2, 1] ** 2
    gg = G[2, 0] ** 2 + G[2, 1] ** 2
    if rr <= 1e-12 or gg <= 1e-12:
        raise DecompositionError(f"degenerate eta={eta:.3g} for decomposition")
    lam1 = np.sqrt(rr / gg)
    lam2 = np.linalg.det(G) * lam1
    if not lam2 > 0.0:
        raise DecompositionError(f"non-positive lambda2 ({lam2:.3g}) at eta={eta:.3g}")
    g31, g32, g33 = G[2]
    r31, r32 = R[2, 0] / lam1, R[2, 1] / lam1
    # unknowns (mu1, nu1, mu2, nu2)
    A = np.array([
        [r31, 0.0, 0.0, 0.0],
        [r32, 0.0, 0.0, 0.0],
        [-g33, 0.0, R[0, 0], R[0, 1]],
        [0.0, r31, 0.0, 0.0],
        [0.0, r32, 0.0, 0.0],
        [0.0, -g33, R[1, 0], R[1, 1]],
        [0.0, 0.0, R[2, 0], R[2, 1]],
    ])
    b = np.array([
        R[0, 0] - G[0, 0],
        R[0, 1] - G[0, 1],
        G[0, 2] - R[0, 2] * lam2,
        R[1, 0] - G[1, 0],
        R[1, 1] - G[1, 1],
        G[1, 2] - R[1, 2] * lam2,
        lam1 * g33 - R[2, 2] * lam2,
    ])
    sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < 4:
        raise DecompositionError("rank-deficient GBR system")
    g1 = GbrTransform(sol[0], sol[1], lam1)
    g2 = GbrTransform(sol[2], sol[3], lam2)
    resid = float(np.sqrt(np.mean((compose_combined(g1, R, g2) - G) ** 2)))
    return g1, g2, resid


def eta_grid(n: int = ETA_GRID_SIZE) -> np.ndarray:
    """``n`` uniformly spaced values over (-pi, pi], half-step offset so none sits on 0 or pi."""
    step = 2.0 * np.pi / n
    grid = -np.pi + step * (np.arange(n) + 0.5)
    return grid[np.abs(grid) >= ETA_MIN_ABS - 1e-12]


def _reflection_rows(reflections) -> np.ndarray:
    if isinstance(reflections, CorrespondenceSet):
        return reflections.reflections
    if len(reflections) and isinstance(reflections[0], ReflectionCorr):
        return np.array([(*c.n1, *c.n2) for c in reflections], float)
    return np.asarray(reflections, float).reshape(-1, 6)


def _eta_params(g21, theta, phi, eta):
    g1, g2, resid = decompose_at_eta(g21, theta, phi, eta)
    return ParamVector.from_parts(EulerZXZ(theta, phi, eta), g1, g2), resid


def step2_scan_eta(g21, theta: float, phi: float, reflections,
                   angular_inlier_threshold: float = DEFAULT_REFLECTION_THRESHOLD,
                   refine: bool = True) -> PairSolution:
    """Resolve eta with reflection correspondences.

    Candidates are ranked by reflection inlier count, then by the summed
    truncated angular error, then by decomposition residual.
    """
    rows = _reflection_rows(reflections)
    if len(rows) == 0:
        raise InsufficientCorrespondencesError("step 2 needs at least one reflection correspondence")
    n1, n2 = rows[:, 0:3], rows[:, 3:6]
    refl_set = CorrespondenceSet(reflections=rows)
    candidates = []
    best = None
    for eta in eta_grid():
        try:
            p, resid = _eta_params(g21, theta, phi, eta)
        except DecompositionError:
            continue
        err = reflection_angular_errors(p, n1, n2)
        inl = err < angular_inlier_threshold
        score = float(np.sum(np.minimum(err, angular_inlier_threshold)))
        cand = EtaCandidate(float(eta), int(inl.sum()), resid, score)
        candidates.append(cand)
        key = (-cand.reflection_inliers, score, resid)
        if best is None or key < best[0]:
            best = (key, cand, inl)
    if best is None:
        raise NoFeasibleEtaError("no eta candidate admits a decomposition", candidates)
    _, cand, inl = best
    eta = cand.eta
    if refine:
        eta = _refine_eta(g21, theta, phi, eta, refl_set.subset(reflections=inl) if inl.any() else refl_set)
    p, _ = _eta_params(g21, theta, phi, eta)
    err = reflection_angular_errors(p, n1, n2)
    sol = PairSolution.from_params(
        p, eta_candidates=tuple(candidates),
        final_cost=total_objective(p, refl_set),
        inliers={"reflections": err < angular_inlier_threshold},
    )
    return sol


def _refine_eta(g21, theta, phi, eta0, refl_set):
    step = 2.0 * np.pi / ETA_GRID_SIZE

    def f(eta):
        try:
            p, _ = _eta_params(g21, theta, phi, eta)
            return total_objective(p, refl_set)
        except (DecompositionError, DegenerateGeometryError):
            return np.inf

    f0 = f(eta0)
    res = minimize_scalar(f, bounds=(eta0 - step, eta0 + step), method="bounded",
                          options={"xatol": 1e-12, "maxiter": 500})
    return float(res.x) if res.fun <= f0 else eta0


# ---------------------------------------------------------------- full solvers

def solve_pair(s: CorrespondenceSet, restarts: int = DEFAULT_RESTARTS, rng=None,
               reflection_threshold: float = DEFAULT_REFLECTION_THRESHOLD,
               polish: bool = True) -> PairSolution:
    """Two-step solve (combined transform, then eta scan), optional joint polish, translation."""
    s = _ensure_centered(s)
    st1 = step1_estimate_combined(s, restarts, rng)
    sol = step2_scan_eta(st1.g21, st1.theta, st1.phi, s.reflections, reflection_threshold)
    x = sol.params.to_array()
    f = total_objective(x, s)
    if polish:
        x, f = fit_params(s, x, "all")
    p = ParamVector.from_array(x)
    R = rotation_zxz(p.theta, p.phi, p.eta)
    tr = estimate_translation(R, s.pixels)
    return PairSolution.from_params(
        p, t_xy=tr.t_xy, converged=f < convergence_threshold(count_residuals(s)),
        final_cost=f, eta_candidates=sol.eta_candidates, inliers=sol.inliers,
    )


def direct_optimize_all(s: CorrespondenceSet, restarts: int = DEFAULT_RESTARTS, rng=None,
                        weights=None) -> PairSolution:
    """Multi-start minimisation of the full objective over all nine parameters."""
    if sum(s.counts) == 0:
        raise InsufficientCorrespondencesError("no correspondences")
    s = _ensure_centered(s)
    rng = np.random.default_rng(rng)
    tol = convergence_threshold(count_residuals(s))
    x, f = _multistart(s, "all", (random_start(rng) for _ in range(restarts)), weights, tol)
    if x is None:
        raise NoFeasibleEtaError("direct optimisation failed from every start")
    p = ParamVector.from_array(x)
    R = rotation_zxz(p.theta, p.phi, p.eta)
    t_xy = estimate_translation(R, s.pixels).t_xy if len(s.pixels) else np.zeros(2)
    return PairSolution.from_params(p, t_xy=t_xy, final_cost=f,
                                    converged=f < convergence_threshold(count_residuals(s)))


# ---------------------------------------------------------------- ambiguity family

def family_gbr_pair(eta_true: float, eta_hat: float, theta: float, phi: float
                    ) -> tuple[GbrTransform, GbrTransform]:
    """Depth re-mappings (view 1, view 2) from true geometry to the eta_hat geometry."""
    if eta_true == 0.0 or eta_hat == 0.0 or np.sign(np.sin(eta_true)) != np.sign(np.sin(eta_hat)):
        raise ValueError("eta_hat must be nonzero with the same sign as eta_true "
                         "(opposite signs invert the surface)")
    lam = np.sin(eta_true) / np.sin(eta_hat)
    k = (np.cos(eta_hat) - np.cos(eta_true)) / np.sin(eta_hat)
    g_view1 = GbrTransform(k * np.sin(phi), -k * np.cos(phi), lam)
    g_view2 = GbrTransform(-k * np.sin(theta), k * np.cos(theta), lam)
    return g_view1, g_view2


def ambiguity_family(eta_true: float, eta_hat: float, theta: float, phi: float,
                     g1: GbrTransform, g2: GbrTransform) -> tuple[GbrTransform, GbrTransform]:
    """GBRs (G1_hat, G2_hat) that, with eta_hat, reproduce every pixel and normal constraint."""
    h1, h2 = family_gbr_pair(eta_true, eta_hat, theta, phi)
    G1 = gbr_matrix(g1) @ np.linalg.inv(gbr_matrix(h1))
    G2 = gbr_matrix(g2) @ np.linalg.inv(gbr_matrix(h2))
    return GbrTransform.from_matrix(G1), GbrTransform.from_matrix(G2)


# ---------------------------------------------------------------- translation and depth

@dataclass(frozen=True)
class TranslationEstimate:
    t_xy: np.ndarray
    constraint_residual: float
    degenerate: bool
    direction: np.ndarray       # unit normal of the constraint line: direction . t = rhs


def _tilde(R, pixels):
    u1, v1, u2, v2 = pixels.T
    ut = R[0, 0] * u2 + R[0, 1] * v2 - u1
    vt = R[1, 0] * u2 + R[1, 1] * v2 - v1
    return ut, vt


def estimate_translation(R: np.ndarray, pixels) -> TranslationEstimate:
    """Minimum-norm (tx, ty) on the line r23 tx - r13 ty = -mean(r23 u~ - r13 v~)."""
    R = np.asarray(R, float)
    px = pixel_array(pixels)
    a = np.array([R[1, 2], -R[0, 2]])
    na = a @ a
    if na <= 1e-9 or len(px) == 0:
        return TranslationEstimate(np.zeros(2), 0.0, True, np.zeros(2))
    ut, vt = _tilde(R, px)
    rhs = -np.mean(R[1, 2] * ut - R[0, 2] * vt)
    t = a * rhs / na
    resid = abs(float(a @ t - rhs))
    return TranslationEstimate(t, resid, False, a / np.sqrt(na))


def recover_depths(R: np.ndarray, t_xy, pixels) -> np.ndarray:
    """Least-squares view-2 depth of each pixel correspondence given R21 and (tx, ty)."""
    R = np.asarray(R, float)
    px = pixel_array(pixels)
    den = R[0, 2] ** 2 + R[1, 2] ** 2
    if den <= 1e-9:
        raise DegenerateGeometryError("depth is unobservable when r13 = r23 = 0 (eta ~ 0 or pi)")
    ut, vt = _tilde(R, px)
    tx, ty = np.asarray(t_xy, float)
    return -(R[0, 2] * (ut + tx) + R[1, 2] * (vt + ty)) / den


def rotation_error_deg(R_est: np.ndarray, R_true: np.ndarray) -> float:
    return float(np.degrees(rotation_angle_between(R_est, R_true)))


def with_inliers(sol: PairSolution, **masks) -> PairSolution:
    merged = dict(sol.inliers or {})
    merged.update(masks)
    return replace(sol, inliers=merged)


__all__: Sequence[str] = (
    "PairSolution", "Step1Result", "EtaCandidate", "TranslationEstimate",
    "DecompositionError", "NoFeasibleEtaError", "InsufficientCorrespondencesError",
    "step1_estimate_combined", "decompose_at_eta", "step2_scan_eta", "solve_pair",
    "direct_optimize_all", "ambiguity_family", "family_gbr_pair", "estimate_translation",
    "recover_depths", "linear_step1", "linear_combined", "pixel_angles", "eta_grid",
    "fit_params", "rotation_error_deg", "convergence_threshold", "with_inliers",
)
