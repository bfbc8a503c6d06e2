"""Rotations, GBR transforms and the mirror-reflection operator.

Conventions: orthographic camera with image plane xy, viewing direction
``OMEGA_O = (0, 0, 1)`` (surface to camera), visible normals have n_z > 0.
Matrices are plain ``(3, 3)`` float64 arrays, vectors ``(..., 3)`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OMEGA_O = np.array([0.0, 0.0, 1.0])

NORM_EPS = 1e-12
GRAZING_EPS = 1e-9


class DegenerateGeometryError(ValueError):
    """A vector or rotation is too close to a degenerate configuration."""


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = float(np.mod(a + np.pi, 2.0 * np.pi) - np.pi)
    return np.pi if a == -np.pi else a


@dataclass(frozen=True)
class EulerZXZ:
    """Relative rotation R21 = Rz[phi] Rx[eta] Rz[-theta] (radians)."""

    theta: float
    phi: float
    eta: float

    def __post_init__(self):
        for name in ("theta", "phi", "eta"):
            object.__setattr__(self, name, wrap_angle(getattr(self, name)))

    def as_tuple(self) -> tuple[float, float, float]:
        return self.theta, self.phi, self.eta


@dataclass(frozen=True)
class GbrTransform:
    """GBR parameters; the matrix is [[1,0,0],[0,1,0],[mu,nu,lam]]."""

    mu: float = 0.0
    nu: float = 0.0
    lam: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam <= 0.0:
            raise ValueError(f"GBR lambda must be positive, got {self.lam}")
        for name in ("mu", "nu", "lam"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @classmethod
    def from_matrix(cls, G: np.ndarray) -> "GbrTransform":
        G = np.asarray(G, dtype=float)
        if not np.allclose(G[:2], np.eye(3)[:2], atol=1e-9):
            raise ValueError("matrix is not of GBR form")
        return cls(G[2, 0], G[2, 1], G[2, 2])

    def as_tuple(self) -> tuple[float, float, float]:
        return self.mu, self.nu, self.lam

    def matrix(self) -> np.ndarray:
        return gbr_matrix(self)

    def inv_transpose(self) -> np.ndarray:
        return gbr_inv_transpose(self)


IDENTITY_GBR = GbrTransform()


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_zxz(theta: float, phi: float, eta: float) -> np.ndarray:
    """Closed-form elements of Rz[phi] Rx[eta] Rz[-theta]."""
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    ce, se = np.cos(eta), np.sin(eta)
    return np.array([
        [cp * ct + sp * st * ce, cp * st - sp * ct * ce, sp * se],
        [sp * ct - cp * st * ce, sp * st + cp * ct * ce, -cp * se],
        [-st * se, ct * se, ce],
    ])


def euler_to_matrix(angles: EulerZXZ) -> np.ndarray:
    return rotation_zxz(angles.theta, angles.phi, angles.eta)


def matrix_to_euler(R: np.ndarray) -> EulerZXZ:
    """Inverse of :func:`euler_to_matrix`; theta = 0 when sin(eta) vanishes."""
    R = np.asarray(R, dtype=float)
    s = np.hypot(R[2, 0], R[2, 1])
    eta = np.arctan2(s, R[2, 2])
    theta = 0.0 if s < NORM_EPS else np.arctan2(-R[2, 0], R[2, 1])
    # phi from the residual Rz[phi] = R Rz[theta] Rx[-eta]; stays accurate near eta = 0
    M = R @ rot_z(theta) @ rot_x(-eta)
    phi = np.arctan2(M[1, 0], M[0, 0])
    return EulerZXZ(theta, phi, eta)


def is_rotation(R: np.ndarray, tol: float = 1e-10) -> bool:
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.allclose(R.T @ R, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) < tol
    )


def rotation_angle_between(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle (radians) between two rotations, stable near zero."""
    d = np.linalg.norm(np.asarray(Ra) - np.asarray(Rb))
    return 2.0 * np.arcsin(min(1.0, d / (2.0 * np.sqrt(2.0))))


def gbr_matrix(g: GbrTransform) -> np.ndarray:
    return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [g.mu, g.nu, g.lam]])


def gbr_inv_transpose(g: GbrTransform) -> np.ndarray:
    return np.array([
        [1.0, 0.0, -g.mu / g.lam],
        [0.0, 1.0, -g.nu / g.lam],
        [0.0, 0.0, 1.0 / g.lam],
    ])


def normalize(v: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Euclidean normalisation along the last axis; raises on near-zero input."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < eps):
        raise DegenerateGeometryError(f"cannot normalise vector of norm {n.min():.3g}")
    return v / n


def unit_vec3(x: float, y: float, z: float) -> np.ndarray:
    return normalize(np.array([x, y, z], dtype=float))


def gbr_apply_normal(g: GbrTransform, n: np.ndarray) -> np.ndarray:
    """Distort normal(s) by a GBR: Norm(G^-T n)."""
    return normalize(np.asarray(n, dtype=float) @ gbr_inv_transpose(g).T)


def reflect(n: np.ndarray) -> np.ndarray:
    """Mirror direction of the line of sight for (possibly unnormalised) normals."""
    n = np.asarray(n, dtype=float)
    nn = np.sum(n * n, axis=-1, keepdims=True)
    if np.any(nn < NORM_EPS):
        raise DegenerateGeometryError("reflect: near-zero normal")
    return -OMEGA_O + 2.0 * (n[..., 2:3] / nn) * n


def invert_reflect(w: np.ndarray) -> np.ndarray:
    """Normal that mirrors the viewing direction onto ``w``."""
    return normalize(OMEGA_O + np.asarray(w, dtype=float), eps=GRAZING_EPS)


def compose_combined(g1: GbrTransform, R: np.ndarray, g2: GbrTransform) -> np.ndarray:
    """G21 = G1^-T R21 G2^T."""
    return gbr_inv_transpose(g1) @ np.asarray(R, dtype=float) @ gbr_matrix(g2).T


def check_combined(G21: np.ndarray) -> np.ndarray:
    G21 = np.asarray(G21, dtype=float)
    if G21.shape != (3, 3) or abs(np.linalg.det(G21)) <= 1e-12:
        raise DegenerateGeometryError("combined transform must be an invertible 3x3 matrix")
    return G21
