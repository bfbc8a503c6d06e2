"""Pixel, 3D (normal) and reflection correspondences for one view pair."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

RENORMALIZE_TOL = 1e-6
REJECT_TOL = 1e-3


class CorrespondenceFormatError(ValueError):
    """Malformed or invariant-violating correspondence file."""


@dataclass(frozen=True)
class PixelCorr:
    u1: float
    v1: float
    u2: float
    v2: float


@dataclass(frozen=True)
class NormalCorr:
    n1: tuple[float, float, float]
    n2: tuple[float, float, float]
    u1: float = 0.0
    v1: float = 0.0
    u2: float = 0.0
    v2: float = 0.0


@dataclass(frozen=True)
class ReflectionCorr:
    n1: tuple[float, float, float]
    n2: tuple[float, float, float]


def _as_rows(a, width: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.zeros((0, width))
    return a.reshape(-1, width)


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Row-stored correspondences.

    ``pixels`` rows are ``(u1, v1, u2, v2)``; ``normals`` rows are
    ``(n1[3], n2[3], u1, v1, u2, v2)``; ``reflections`` rows are ``(n1[3], n2[3])``.
    """

    pixels: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 10)))
    reflections: np.ndarray = field(default_factory=lambda: np.zeros((0, 6)))
    centered: bool = False

    def __post_init__(self):
        for name, width in (("pixels", 4), ("normals", 10), ("reflections", 6)):
            arr = _as_rows(getattr(self, name), width).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "centered", bool(self.centered))

    @classmethod
    def from_lists(
        cls,
        pixels: Iterable[PixelCorr] = (),
        normals: Iterable[NormalCorr] = (),
        reflections: Iterable[ReflectionCorr] = (),
        centered: bool = False,
    ) -> "CorrespondenceSet":
        px = [(c.u1, c.v1, c.u2, c.v2) for c in pixels]
        nm = [(*c.n1, *c.n2, c.u1, c.v1, c.u2, c.v2) for c in normals]
        rf = [(*c.n1, *c.n2) for c in reflections]
        return cls(px, nm, rf, centered)

    # column views
    @property
    def normal_n1(self) -> np.ndarray:
        return self.normals[:, 0:3]

    @property
    def normal_n2(self) -> np.ndarray:
        return self.normals[:, 3:6]

    @property
    def refl_n1(self) -> np.ndarray:
        return self.reflections[:, 0:3]

    @property
    def refl_n2(self) -> np.ndarray:
        return self.reflections[:, 3:6]

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.pixels), len(self.normals), len(self.reflections)

    def pixel_list(self) -> list[PixelCorr]:
        return [PixelCorr(*map(float, r)) for r in self.pixels]

    def normal_list(self) -> list[NormalCorr]:
        return [NormalCorr(tuple(map(float, r[0:3])), tuple(map(float, r[3:6])), *map(float, r[6:]))
                for r in self.normals]

    def reflection_list(self) -> list[ReflectionCorr]:
        return [ReflectionCorr(tuple(map(float, r[0:3])), tuple(map(float, r[3:6])))
                for r in self.reflections]

    def subset(self, pixels=None, normals=None, reflections=None) -> "CorrespondenceSet":
        """Select rows by index or boolean mask; ``None`` keeps everything.

        The centered flag is dropped whenever the pixel rows change.
        """
        px = self.pixels if pixels is None else self.pixels[np.asarray(pixels)]
        nm = self.normals if normals is None else self.normals[np.asarray(normals)]
        rf = self.reflections if reflections is None else self.reflections[np.asarray(reflections)]
        return CorrespondenceSet(px, nm, rf, self.centered and pixels is None)

    def swapped(self) -> "CorrespondenceSet":
        """Same correspondences with the roles of view 1 and view 2 exchanged."""
        px = self.pixels[:, [2, 3, 0, 1]]
        nm = self.normals[:, [3, 4, 5, 0, 1, 2, 8, 9, 6, 7]]
        rf = self.reflections[:, [3, 4, 5, 0, 1, 2]]
        return CorrespondenceSet(px, nm, rf, self.centered)

    def __eq__(self, other):
        if not isinstance(other, CorrespondenceSet):
            return NotImplemented
        return (
            self.centered == other.centered
            and np.array_equal(self.pixels, other.pixels)
            and np.array_equal(self.normals, other.normals)
            and np.array_equal(self.reflections, other.reflections)
        )


def center(s: CorrespondenceSet) -> tuple[CorrespondenceSet, np.ndarray]:
    """Shift each view's pixel coordinates to zero mean.

    Returns the shifted set and the offsets ``(mean u1, mean v1, mean u2, mean v2)``;
    the image coordinates stored with normal correspondences move by the same offsets.
    """
    if len(s.pixels) == 0:
        raise ValueError("cannot center a set without pixel correspondences")
    offsets = s.pixels.mean(axis=0)
    normals = s.normals.copy()
    normals[:, 6:10] -= offsets
    out = CorrespondenceSet(s.pixels - offsets, normals, s.reflections, centered=True)
    return out, offsets


def _check_unit(vecs: np.ndarray, where: str) -> np.ndarray:
    norms = np.linalg.norm(vecs, axis=1)
    dev = np.abs(norms - 1.0)
    bad = np.flatnonzero(dev > REJECT_TOL)
    if bad.size:
        i = int(bad[0])
        raise CorrespondenceFormatError(f"{where}[{i}]: normal has length {norms[i]:.6g}")
    if np.any(vecs[:, 2] <= 0.0):
        i = int(np.flatnonzero(vecs[:, 2] <= 0.0)[0])
        raise CorrespondenceFormatError(f"{where}[{i}]: normal is not front-facing (n_z <= 0)")
    if np.any(dev > RENORMALIZE_TOL):
        logger.warning("%s: re-normalising %d normals off unit length by > %g",
                       where, int(np.sum(dev > RENORMALIZE_TOL)), RENORMALIZE_TOL)
        vecs = vecs / norms[:, None]
    return vecs


def _parse_rows(doc: dict, key: str, width: int) -> np.ndarray:
    rows = doc.get(key, [])
    if not isinstance(rows, list):
        raise CorrespondenceFormatError(f"'{key}' must be a list")
    out = np.zeros((len(rows), width))
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != width:
            raise CorrespondenceFormatError(f"{key}[{i}]: expected a list of {width} numbers")
        for j, x in enumerate(row):
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not np.isfinite(x):
                raise CorrespondenceFormatError(f"{key}[{i}][{j}]: not a finite number: {x!r}")
            out[i, j] = x
    return out


def from_dict(doc: dict) -> CorrespondenceSet:
    if not isinstance(doc, dict):
        raise CorrespondenceFormatError("top level must be a JSON object")
    unknown = set(doc) - {"pixels", "normals", "reflections", "centered"}
    if unknown:
        raise CorrespondenceFormatError(f"unknown keys: {sorted(unknown)}")
    pixels = _parse_rows(doc, "pixels", 4)
    normals = _parse_rows(doc, "normals", 10)
    reflections = _parse_rows(doc, "reflections", 6)
    centered = doc.get("centered", False)
    if not isinstance(centered, bool):
        raise CorrespondenceFormatError("'centered' must be a boolean")
    normals[:, 0:3] = _check_unit(normals[:, 0:3], "normals.n1")
    normals[:, 3:6] = _check_unit(normals[:, 3:6], "normals.n2")
    reflections[:, 0:3] = _check_unit(reflections[:, 0:3], "reflections.n1")
    reflections[:, 3:6] = _check_unit(reflections[:, 3:6], "reflections.n2")
    if centered and len(pixels) and np.abs(pixels.mean(axis=0)).max() > 1e-9:
        raise CorrespondenceFormatError("'centered' is true but pixel means are not zero")
    return CorrespondenceSet(pixels, normals, reflections, centered)


def to_dict(s: CorrespondenceSet) -> dict:
    return {
        "pixels": s.pixels.tolist(),
        "normals": s.normals.tolist(),
        "reflections": s.reflections.tolist(),
        "centered": s.centered,
    }


def load(path) -> CorrespondenceSet:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CorrespondenceFormatError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    return from_dict(doc)


def save(s: CorrespondenceSet, path) -> None:
    Path(path).write_text(json.dumps(to_dict(s), indent=1) + "\n", encoding="utf-8")


def pixel_array(pixels: Sequence[PixelCorr] | np.ndarray | CorrespondenceSet) -> np.ndarray:
    if isinstance(pixels, CorrespondenceSet):
        return pixels.pixels
    if len(pixels) and isinstance(pixels[0], PixelCorr):
        return np.array([(c.u1, c.v1, c.u2, c.v2) for c in pixels])
    return _as_rows(pixels, 4)
