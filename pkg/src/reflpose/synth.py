"""Synthetic correspondence generator with ground truth."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .correspondences import CorrespondenceSet, center
from .geometry import (
    EulerZXZ,
    GbrTransform,
    gbr_inv_transpose,
    invert_reflect,
    matrix_to_euler,
    normalize,
    reflect,
    rotation_zxz,
)

MAX_ATTEMPTS = 100_000
MIN_NZ = 0.05
SAMPLE_BATCH = 256
SAMPLE_BUDGET = 50_000
GEOMETRY_RETRIES = 100


class SamplingExhaustedError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_pixel: int = 20
    n_normal: int = 20
    n_reflection: int = 20
    eta_abs_range: tuple[float, float] = (np.radians(5.0), np.radians(175.0))
    gbr_mu_nu_range: float = 1.0
    gbr_log_lambda_range: float = float(np.log(2.0))
    noise_normal_sigma: float = 0.0
    noise_pixel_sigma: float = 0.0
    outlier_fraction: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.n_pixel, self.n_normal, self.n_reflection) < 0:
            raise ValueError("correspondence counts must be >= 0")
        if self.noise_normal_sigma < 0 or self.noise_pixel_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier_fraction must be in [0, 1)")
        lo, hi = self.eta_abs_range
        if not 0.0 <= lo < hi <= np.pi:
            raise ValueError("eta_abs_range must satisfy 0 <= lo < hi <= pi")


@dataclass(frozen=True)
class SynthTruth:
    angles: EulerZXZ
    g1: GbrTransform
    g2: GbrTransform
    translation: np.ndarray          # (tx, ty, tz): X1 = R21 X2 + t
    depths: np.ndarray               # z2 of each pixel correspondence (view-2 frame)
    offsets: np.ndarray              # centering offsets of the observed pixels

    @property
    def R21(self) -> np.ndarray:
        return rotation_zxz(*self.angles.as_tuple())

    def to_sidecar(self) -> dict:
        return {
            "theta": self.angles.theta,
            "phi": self.angles.phi,
            "eta": self.angles.eta,
            "g1": list(self.g1.as_tuple()),
            "g2": list(self.g2.as_tuple()),
            "t": [float(self.translation[0]), float(self.translation[1])],
        }


@dataclass(frozen=True, eq=False)
class SynthInstance:
    truth: SynthTruth
    observed: CorrespondenceSet
    outlier_labels: dict = field(default_factory=dict)


def truth_from_sidecar(doc: dict) -> tuple[EulerZXZ, GbrTransform, GbrTransform, np.ndarray]:
    angles = EulerZXZ(doc["theta"], doc["phi"], doc["eta"])
    return angles, GbrTransform(*doc["g1"]), GbrTransform(*doc["g2"]), np.asarray(doc["t"], float)


def save_sidecar(truth: SynthTruth, path) -> None:
    Path(path).write_text(json.dumps(truth.to_sidecar(), indent=1) + "\n", encoding="utf-8")


def load_sidecar(path) -> tuple[EulerZXZ, GbrTransform, GbrTransform, np.ndarray]:
    return truth_from_sidecar(json.loads(Path(path).read_text(encoding="utf-8")))


def _hemisphere(rng, n):
    v = rng.normal(size=(n, 3))
    v[:, 2] = np.abs(v[:, 2])
    return normalize(v)


def _ball(rng, n):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * rng.uniform(size=(n, 1)) ** (1.0 / 3.0)


def _disk(rng, n):
    r = np.sqrt(rng.uniform(size=n))
    a = rng.uniform(-np.pi, np.pi, size=n)
    return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)


def sample_rotation(rng, eta_abs_range) -> np.ndarray:
    """Uniform rotation on SO(3) conditioned on |eta| lying in ``eta_abs_range``."""
    lo, hi = eta_abs_range
    for _ in range(MAX_ATTEMPTS):
        R = Rotation.from_quat(rng.normal(size=4)).as_matrix()
        if lo <= abs(matrix_to_euler(R).eta) <= hi:
            return R
    raise SamplingExhaustedError("could not sample a rotation with the requested eta range")


def sample_gbr(rng, cfg: SynthConfig) -> GbrTransform:
    m = cfg.gbr_mu_nu_range
    mu, nu = rng.uniform(-m, m, size=2)
    return GbrTransform(mu, nu, np.exp(rng.uniform(-cfg.gbr_log_lambda_range, cfg.gbr_log_lambda_range)))


def _rejection(rng, n, propose, what):
    """Draw ``n`` pairs from ``propose(rng, batch)`` whose observed normals are both visible."""
    out1, out2, have, tried = [np.zeros((0, 3))], [np.zeros((0, 3))], 0, 0
    while have < n:
        if tried >= SAMPLE_BUDGET:
            raise SamplingExhaustedError(f"{what} rejection sampling exhausted")
        o1, o2 = propose(rng, SAMPLE_BATCH)
        tried += SAMPLE_BATCH
        ok = (o1[:, 2] > MIN_NZ) & (o2[:, 2] > MIN_NZ)
        out1.append(o1[ok])
        out2.append(o2[ok])
        have += int(ok.sum())
    return np.concatenate(out1)[:n].reshape(-1, 3), np.concatenate(out2)[:n].reshape(-1, 3)


def _visible_normals(rng, n, R, g1, g2):
    """True view-2 normals whose view-1 image is visible; returns observed pairs."""
    G1it, G2it = gbr_inv_transpose(g1), gbr_inv_transpose(g2)

    def propose(rng, k):
        n2 = _hemisphere(rng, k)
        return normalize(n2 @ (G1it @ R).T), normalize(n2 @ G2it.T)
    return _rejection(rng, n, propose, "normal")


def _reflection_pairs(rng, n, R, g1, g2):
    """True n1, mirror direction rotated into view 2, inverted; then both distorted."""
    G1it, G2it = gbr_inv_transpose(g1), gbr_inv_transpose(g2)

    def propose(rng, k):
        n1 = _hemisphere(rng, k)
        w2 = reflect(n1) @ R
        n1 = n1[1.0 + w2[:, 2] >= 1e-6]
        n2 = invert_reflect(w2[1.0 + w2[:, 2] >= 1e-6])
        return normalize(n1 @ G1it.T), normalize(n2 @ G2it.T)
    return _rejection(rng, n, propose, "reflection")


def perturb_normals(rng, n: np.ndarray, sigma: float) -> np.ndarray:
    """Isotropic tangent-plane perturbation with RMS angle ``sigma`` (radians)."""
    if sigma == 0.0 or len(n) == 0:
        return n
    a = normalize(np.cross(n, rng.normal(size=n.shape)))
    b = np.cross(n, a)
    k = rng.normal(scale=sigma / np.sqrt(2.0), size=(len(n), 2))
    ang = np.linalg.norm(k, axis=1, keepdims=True)
    axis = (k[:, :1] * a + k[:, 1:] * b) / np.where(ang > 0, ang, 1.0)
    out = n * np.cos(ang) + axis * np.sin(ang)
    # keep front-facing
    out[:, 2] = np.maximum(out[:, 2], 1e-3)
    return normalize(out)


def _random_observed_normals(rng, n):
    v = _hemisphere(rng, n)
    v[:, 2] = np.maximum(v[:, 2], MIN_NZ)
    return normalize(v)


def _pair_data(rng, cfg: SynthConfig, R, g1, g2, t):
    X2 = _ball(rng, cfg.n_pixel)
    X1 = X2 @ R.T + t
    pixels = np.hstack([X1[:, :2], X2[:, :2]])
    depths = X2[:, 2].copy()

    nn1, nn2 = _visible_normals(rng, cfg.n_normal, R, g1, g2)
    Y2 = _ball(rng, cfg.n_normal)
    Y1 = Y2 @ R.T + t
    normals = np.hstack([nn1, nn2, Y1[:, :2], Y2[:, :2]])

    rn1, rn2 = _reflection_pairs(rng, cfg.n_reflection, R, g1, g2)
    reflections = np.hstack([rn1, rn2])

    if cfg.noise_pixel_sigma > 0:
        pixels = pixels + rng.normal(scale=cfg.noise_pixel_sigma, size=pixels.shape)
    if cfg.noise_normal_sigma > 0:
        for arr in (normals, reflections):
            arr[:, 0:3] = perturb_normals(rng, arr[:, 0:3], cfg.noise_normal_sigma)
            arr[:, 3:6] = perturb_normals(rng, arr[:, 3:6], cfg.noise_normal_sigma)

    f = cfg.outlier_fraction
    labels = {
        "pixels": rng.uniform(size=len(pixels)) < f,
        "normals": rng.uniform(size=len(normals)) < f,
        "reflections": rng.uniform(size=len(reflections)) < f,
    }
    k = int(labels["pixels"].sum())
    pixels[labels["pixels"], 2:4] = _disk(rng, k)
    k = int(labels["normals"].sum())
    normals[labels["normals"], 3:6] = _random_observed_normals(rng, k)
    k = int(labels["reflections"].sum())
    reflections[labels["reflections"], 3:6] = _random_observed_normals(rng, k)

    raw = CorrespondenceSet(pixels, normals, reflections)
    observed, offsets = center(raw) if len(pixels) else (raw, np.zeros(4))
    return observed, depths, offsets, labels


def generate(cfg: SynthConfig) -> SynthInstance:
    """One noiseless-or-noisy view pair; deterministic in ``cfg.rng_seed``.

    Poses whose doubly visible normal region is (nearly) empty are redrawn.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    for _ in range(GEOMETRY_RETRIES):
        R = sample_rotation(rng, cfg.eta_abs_range)
        angles = matrix_to_euler(R)
        R = rotation_zxz(*angles.as_tuple())
        g1, g2 = sample_gbr(rng, cfg), sample_gbr(rng, cfg)
        t = rng.uniform(-0.5, 0.5, size=3)
        try:
            observed, depths, offsets, labels = _pair_data(rng, cfg, R, g1, g2, t)
        except SamplingExhaustedError:
            continue
        return SynthInstance(SynthTruth(angles, g1, g2, t, depths, offsets), observed, labels)
    raise SamplingExhaustedError("no pose with enough visible normals")


@dataclass(frozen=True, eq=False)
class MultiViewInstance:
    rotations: list            # world -> camera k; view 0 is identity
    gbrs: list
    pairs: dict                # (i, j) -> SynthInstance with view i as "1", view j as "2"


def _view_rotations(rng, n_views, lo, hi):
    for _ in range(MAX_ATTEMPTS):
        rots = [np.eye(3)] + [Rotation.from_quat(rng.normal(size=4)).as_matrix()
                              for _ in range(n_views - 1)]
        if all(lo <= abs(matrix_to_euler(rots[i] @ rots[j].T).eta) <= hi
               for i, j in combinations(range(n_views), 2)):
            return rots
    raise SamplingExhaustedError("could not sample view rotations")


def generate_multiview(n_views: int, cfg: SynthConfig) -> MultiViewInstance:
    """Views sharing one world; every pair gets its own correspondences."""
    if n_views < 2:
        raise ValueError("need at least two views")
    rng = np.random.default_rng(cfg.rng_seed)
    for _ in range(GEOMETRY_RETRIES):
        rots = _view_rotations(rng, n_views, *cfg.eta_abs_range)
        gbrs = [sample_gbr(rng, cfg) for _ in range(n_views)]
        pairs = {}
        try:
            for i, j in combinations(range(n_views), 2):
                R = rots[i] @ rots[j].T
                angles = matrix_to_euler(R)
                t = rng.uniform(-0.5, 0.5, size=3)
                observed, depths, offsets, labels = _pair_data(rng, cfg, R, gbrs[i], gbrs[j], t)
                pairs[(i, j)] = SynthInstance(SynthTruth(angles, gbrs[i], gbrs[j], t, depths, offsets),
                                              observed, labels)
        except SamplingExhaustedError:
            continue
        return MultiViewInstance(rots, gbrs, pairs)
    raise SamplingExhaustedError("no view configuration with enough visible normals")
