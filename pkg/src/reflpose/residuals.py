"""Least-squares objective over pixel, normal and reflection correspondences.

Parameter layout (``PARAM_NAMES``): theta, phi, eta, mu1, nu1, log_lambda1,
mu2, nu2, log_lambda2.  Every residual block comes with an analytic Jacobian
so that ``objective_gradient`` is exact and the LM backend gets ``jac``.

Direction labels follow the two-view superscripts: ``"12"`` compares view-1
observations with view-2 observations mapped into view 1, ``"21"`` the reverse.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .correspondences import CorrespondenceSet, NormalCorr, PixelCorr, ReflectionCorr
from .geometry import (
    GRAZING_EPS,
    NORM_EPS,
    OMEGA_O,
    DegenerateGeometryError,
    EulerZXZ,
    GbrTransform,
    rotation_zxz,
)

PARAM_NAMES = ("theta", "phi", "eta", "mu1", "nu1", "log_lambda1", "mu2", "nu2", "log_lambda2")
N_PARAMS = len(PARAM_NAMES)
KINDS = ("pixel", "normal", "reflection")
SELECTORS = {"all": KINDS, "step1": ("pixel", "normal"), "reflection": ("reflection",)}


@dataclass(frozen=True)
class ParamVector:
    theta: float
    phi: float
    eta: float
    mu1: float = 0.0
    nu1: float = 0.0
    log_lambda1: float = 0.0
    mu2: float = 0.0
    nu2: float = 0.0
    log_lambda2: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.to_array())):
            raise ValueError("ParamVector entries must be finite")

    @classmethod
    def from_array(cls, x) -> "ParamVector":
        return cls(*map(float, np.asarray(x, dtype=float).ravel()))

    @classmethod
    def from_parts(cls, angles: EulerZXZ, g1: GbrTransform, g2: GbrTransform) -> "ParamVector":
        return cls(angles.theta, angles.phi, angles.eta,
                   g1.mu, g1.nu, np.log(g1.lam), g2.mu, g2.nu, np.log(g2.lam))

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PARAM_NAMES], dtype=float)

    @property
    def angles(self) -> EulerZXZ:
        return EulerZXZ(self.theta, self.phi, self.eta)

    @property
    def g1(self) -> GbrTransform:
        return GbrTransform(self.mu1, self.nu1, np.exp(self.log_lambda1))

    @property
    def g2(self) -> GbrTransform:
        return GbrTransform(self.mu2, self.nu2, np.exp(self.log_lambda2))


def _as_array(p) -> np.ndarray:
    return p.to_array() if isinstance(p, ParamVector) else np.asarray(p, dtype=float)


def _rot_z_deriv(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def _rot_x_deriv(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


class _Model:
    """Matrices of one parameter point; with ``jac`` also their (9, 3, 3) derivative stacks."""

    def __init__(self, x: np.ndarray, jac: bool = False):
        theta, phi, eta, mu1, nu1, s1, mu2, nu2, s2 = x
        self.R = rotation_zxz(theta, phi, eta)
        self.G1it, self.G1t = self._gbr(mu1, nu1, s1)
        self.G2it, self.G2t = self._gbr(mu2, nu2, s2)
        if not jac:
            return
        dR = np.zeros((N_PARAMS, 3, 3))
        Zp, Xe, Zt = _rz(phi), _rx(eta), _rz(-theta)
        dR[0] = -Zp @ Xe @ _rot_z_deriv(-theta)
        dR[1] = _rot_z_deriv(phi) @ Xe @ Zt
        dR[2] = Zp @ _rot_x_deriv(eta) @ Zt
        self.dR = dR
        self.dG1it, self.dG1t = self._gbr_derivs(mu1, nu1, s1, 3)
        self.dG2it, self.dG2t = self._gbr_derivs(mu2, nu2, s2, 6)

    @staticmethod
    def _gbr(mu, nu, s):
        lam = np.exp(s)
        Git = np.array([[1.0, 0.0, -mu / lam], [0.0, 1.0, -nu / lam], [0.0, 0.0, 1.0 / lam]])
        Gt = np.array([[1.0, 0.0, mu], [0.0, 1.0, nu], [0.0, 0.0, lam]])
        return Git, Gt

    @staticmethod
    def _gbr_derivs(mu, nu, s, k):
        lam = np.exp(s)
        dGit = np.zeros((N_PARAMS, 3, 3))
        dGt = np.zeros((N_PARAMS, 3, 3))
        dGit[k, 0, 2] = -1.0 / lam
        dGit[k + 1, 1, 2] = -1.0 / lam
        dGit[k + 2, :, 2] = (mu / lam, nu / lam, -1.0 / lam)
        dGt[k, 0, 2] = 1.0
        dGt[k + 1, 1, 2] = 1.0
        dGt[k + 2, 2, 2] = lam
        return dGit, dGt

    def chain(self, direction: str, jac: bool):
        """((Gdst^-T, R_src->dst, Gsrc^T), their derivative stacks or None)."""
        if direction == "12":
            mats = (self.G1it, self.R, self.G2t)
            return mats, ((self.dG1it, self.dR, self.dG2t) if jac else None)
        if direction == "21":
            mats = (self.G2it, self.R.T, self.G1t)
            return mats, ((self.dG2it, self.dR.transpose(0, 2, 1), self.dG1t) if jac else None)
        raise ValueError(f"direction must be '12' or '21', got {direction!r}")


def _product_deriv(mats, dmats):
    """Derivative stack of A B C given each factor's stack."""
    A, B, C = mats
    dA, dB, dC = dmats
    return dA @ (B @ C) + (A @ dB) @ C + (A @ B) @ dC


def _normalize_with_jac(y, dy, eps, strict):
    """Normalise rows of ``y`` (n,3) and push derivatives ``dy`` (n,3,k) through."""
    norm = np.sqrt(np.einsum("ij,ij->i", y, y))
    if strict and np.any(norm < eps):
        raise DegenerateGeometryError(f"vector norm {norm.min():.3g} below {eps:g}")
    norm = np.where(norm < eps, np.nan, norm)
    yh = y / norm[:, None]
    if dy is None:
        return yh, None
    # (I - yh yh^T) dy / |y|
    dyh = (dy - yh[:, :, None] * np.einsum("ni,nik->nk", yh, dy)[:, None, :]) / norm[:, None, None]
    return yh, dyh


def _mapped_normals(model, direction, src, jac, strict=True):
    mats, dmats = model.chain(direction, jac)
    Git, Rm, Gt = mats
    M = Git @ Rm @ Gt
    y = src @ M.T
    dy = None
    if jac:
        dM = _product_deriv(mats, dmats)
        dy = (dM @ src.T).transpose(2, 1, 0)
    return _normalize_with_jac(y, dy, NORM_EPS, strict)


def _mapped_reflections(model, direction, src, jac, strict=True):
    (Git, Rm, Gt), dmats = model.chain(direction, jac)
    a = src @ Gt.T
    aa = np.einsum("ij,ij->i", a, a)
    if strict and np.any(aa < NORM_EPS):
        raise DegenerateGeometryError("reflection: undistorted normal vanishes")
    aa = np.where(aa < NORM_EPS, np.nan, aa)
    az = a[:, 2]
    w = -OMEGA_O[None] + 2.0 * (az / aa)[:, None] * a
    q = OMEGA_O[None] + w @ Rm.T
    if not jac:
        c, _ = _normalize_with_jac(q, None, GRAZING_EPS, strict)
        return _normalize_with_jac(c @ Git.T, None, NORM_EPS, strict)
    dGit, dRm, dGt = dmats
    da = (dGt @ src.T).transpose(2, 1, 0)
    # d w / d a = 2 [ a e^T / |a|^2 + (e.a)/|a|^2 I - 2 (e.a) a a^T / |a|^4 ]  (e = OMEGA_O)
    ra = az / aa
    dw = 2.0 * (
        a[:, :, None] * (da[:, 2, :] / aa[:, None])[:, None, :]
        + ra[:, None, None] * da
        - 2.0 * (ra / aa)[:, None, None] * a[:, :, None] * np.einsum("ni,nik->nk", a, da)[:, None, :]
    )
    db = (dRm @ w.T).transpose(2, 1, 0) + Rm @ dw
    c, dc = _normalize_with_jac(q, db, GRAZING_EPS, strict)
    dd = (dGit @ c.T).transpose(2, 1, 0) + Git @ dc
    return _normalize_with_jac(c @ Git.T, dd, NORM_EPS, strict)


def _pixel_block(x, pixels, jac):
    theta, phi = x[0], x[1]
    u1, v1, u2, v2 = pixels.T
    r = (u1 * np.cos(phi) + v1 * np.sin(phi)) - (u2 * np.cos(theta) + v2 * np.sin(theta))
    if not jac:
        return r, None
    J = np.zeros((len(r), N_PARAMS))
    J[:, 0] = u2 * np.sin(theta) - v2 * np.cos(theta)
    J[:, 1] = -u1 * np.sin(phi) + v1 * np.cos(phi)
    return r, J


def _pair_block(mapper, model, dst, src, direction, jac):
    out, dout = mapper(model, direction, src, jac)
    r = (dst - out).ravel()
    if not jac:
        return r, None
    return r, -dout.reshape(-1, N_PARAMS)


def _kinds(selector) -> tuple[str, ...]:
    if isinstance(selector, str):
        try:
            return SELECTORS[selector]
        except KeyError:
            raise ValueError(f"unknown selector {selector!r}") from None
    kinds = tuple(selector)
    if not set(kinds) <= set(KINDS):
        raise ValueError(f"unknown correspondence kinds in {kinds}")
    return kinds


def _blocks(p, s: CorrespondenceSet, selector, weights, jac):
    x = _as_array(p)
    kinds = _kinds(selector)
    w = {"pixel": 1.0, "normal": 1.0, "reflection": 1.0}
    if weights:
        w.update(weights)
    model = _Model(x, jac)
    blocks = []
    if "pixel" in kinds and len(s.pixels):
        blocks.append((np.sqrt(w["pixel"]), *_pixel_block(x, s.pixels, jac)))
    if "normal" in kinds and len(s.normals):
        sw = np.sqrt(w["normal"])
        blocks.append((sw, *_pair_block(_mapped_normals, model, s.normal_n1, s.normal_n2, "12", jac)))
        blocks.append((sw, *_pair_block(_mapped_normals, model, s.normal_n2, s.normal_n1, "21", jac)))
    if "reflection" in kinds and len(s.reflections):
        sw = np.sqrt(w["reflection"])
        blocks.append((sw, *_pair_block(_mapped_reflections, model, s.refl_n1, s.refl_n2, "12", jac)))
        blocks.append((sw, *_pair_block(_mapped_reflections, model, s.refl_n2, s.refl_n1, "21", jac)))
    return blocks


def residual_vector(p, s: CorrespondenceSet, selector="all",
                    weights: Mapping[str, float] | None = None) -> np.ndarray:
    """Stacked residuals: pixel, normal 12, normal 21, reflection 12, reflection 21."""
    blocks = _blocks(p, s, selector, weights, jac=False)
    if not blocks:
        return np.zeros(0)
    return np.concatenate([sw * r for sw, r, _ in blocks])


def residual_jacobian(p, s: CorrespondenceSet, selector="all",
                      weights: Mapping[str, float] | None = None) -> np.ndarray:
    blocks = _blocks(p, s, selector, weights, jac=True)
    if not blocks:
        return np.zeros((0, N_PARAMS))
    return np.concatenate([sw * J for sw, _, J in blocks])


def total_objective(p, s: CorrespondenceSet, weights: Mapping[str, float] | None = None,
                    selector="all") -> float:
    r = residual_vector(p, s, selector, weights)
    return float(r @ r)


def objective_gradient(p, s: CorrespondenceSet, weights: Mapping[str, float] | None = None,
                       selector="all") -> np.ndarray:
    blocks = _blocks(p, s, selector, weights, jac=True)
    g = np.zeros(N_PARAMS)
    for sw, r, J in blocks:
        g += 2.0 * sw * sw * (J.T @ r)
    return g


def objective_terms(p, s: CorrespondenceSet) -> dict[str, float]:
    """The five terms of the objective, keyed f_IM, f_NM12, f_NM21, f_RM12, f_RM21."""
    x = _as_array(p)
    model = _Model(x)
    out = {"f_IM": 0.0, "f_NM12": 0.0, "f_NM21": 0.0, "f_RM12": 0.0, "f_RM21": 0.0}
    if len(s.pixels):
        r, _ = _pixel_block(x, s.pixels, False)
        out["f_IM"] = float(r @ r)
    for key, mapper, rows in (("NM", _mapped_normals, s.normals), ("RM", _mapped_reflections, s.reflections)):
        if len(rows):
            n1, n2 = rows[:, 0:3], rows[:, 3:6]
            out[f"f_{key}12"] = float(np.sum((n1 - mapper(model, "12", n2, False)[0]) ** 2))
            out[f"f_{key}21"] = float(np.sum((n2 - mapper(model, "21", n1, False)[0]) ** 2))
    return out


# single-correspondence forms

def residual_pixel(p, c: PixelCorr) -> float:
    r, _ = _pixel_block(_as_array(p), np.array([[c.u1, c.v1, c.u2, c.v2]]), False)
    return float(r[0])


def residual_normal(p, c: NormalCorr, direction: str = "12") -> np.ndarray:
    n1, n2 = np.array([c.n1], float), np.array([c.n2], float)
    dst, src = (n1, n2) if direction == "12" else (n2, n1)
    out, _ = _mapped_normals(_Model(_as_array(p)), direction, src, False)
    return (dst - out)[0]


def residual_reflection(p, c: ReflectionCorr, direction: str = "12") -> np.ndarray:
    n1, n2 = np.array([c.n1], float), np.array([c.n2], float)
    dst, src = (n1, n2) if direction == "12" else (n2, n1)
    out, _ = _mapped_reflections(_Model(_as_array(p)), direction, src, False)
    return (dst - out)[0]


# angular errors for inlier scoring (never raise; degenerate rows get +inf)

def _angles(a, b):
    ang = np.arctan2(np.linalg.norm(np.cross(a, b), axis=1), np.sum(a * b, axis=1))
    return np.where(np.isnan(ang), np.inf, ang)


def _angular(mapper, p, n1: np.ndarray, n2: np.ndarray) -> np.ndarray:
    if len(n1) == 0:
        return np.zeros(0)
    model = _Model(_as_array(p))
    with np.errstate(invalid="ignore", divide="ignore"):
        a = _angles(n1, mapper(model, "12", n2, False, strict=False)[0])
        b = _angles(n2, mapper(model, "21", n1, False, strict=False)[0])
    return np.maximum(a, b)


def normal_angular_errors(p, n1: np.ndarray, n2: np.ndarray) -> np.ndarray:
    """Worse of the two mapping directions, radians."""
    return _angular(_mapped_normals, p, np.asarray(n1, float), np.asarray(n2, float))


def reflection_angular_errors(p, n1: np.ndarray, n2: np.ndarray) -> np.ndarray:
    """Worse of the two reflection-mapping directions, radians."""
    return _angular(_mapped_reflections, p, np.asarray(n1, float), np.asarray(n2, float))


def pixel_errors(theta: float, phi: float, pixels: np.ndarray) -> np.ndarray:
    x = np.zeros(N_PARAMS)
    x[0], x[1] = theta, phi
    return np.abs(_pixel_block(x, np.asarray(pixels, float), False)[0])


def count_residuals(s: CorrespondenceSet, selector="all") -> int:
    kinds = _kinds(selector)
    n = 0
    if "pixel" in kinds:
        n += len(s.pixels)
    if "normal" in kinds:
        n += 6 * len(s.normals)
    if "reflection" in kinds:
        n += 6 * len(s.reflections)
    return n
