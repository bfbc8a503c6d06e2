"""Monte Carlo harness for the correspondence-count study.

Two modes:

* ``"g21"``: ``count`` pixel and ``count`` normal correspondences, no
  reflections; a trial fails when the Frobenius error of the combined
  transform exceeds ``G21_FAILURE``.
* ``"rotation"``: four pixel and four normal correspondences plus ``count``
  reflections; a trial fails when the rotation error exceeds ``ROTATION_FAILURE_DEG``.

Trials whose objective did not converge to zero are excluded from the rate.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Iterable, TextIO

import numpy as np

from .geometry import compose_combined, rotation_angle_between
from .solvers import DEFAULT_RESTARTS, InsufficientCorrespondencesError, NoFeasibleEtaError, direct_optimize_all
from .synth import SynthConfig, generate

MODES = ("g21", "rotation")
G21_FAILURE = 0.01
ROTATION_FAILURE_DEG = 0.1
BASE_COUNT = 4
CSV_HEADER = ("count", "trials", "converged", "failures", "failure_rate")


@dataclass(frozen=True)
class Fig6Row:
    count: int
    trials: int
    converged: int
    failures: int

    @property
    def failure_rate(self) -> float:
        return self.failures / self.converged if self.converged else float("nan")

    def as_tuple(self):
        return self.count, self.trials, self.converged, self.failures, self.failure_rate


@dataclass(frozen=True)
class TrialResult:
    converged: bool
    error: float           # Frobenius error of G21, or rotation error in degrees
    failed: bool


def trial_seeds(seed: int, count: int, trial: int) -> tuple[int, np.random.Generator]:
    """Instance seed and solver generator, independent of execution order."""
    ss = np.random.SeedSequence([seed, count, trial])
    inst_ss, solver_ss = ss.spawn(2)
    return int(inst_ss.generate_state(1, np.uint64)[0]), np.random.default_rng(solver_ss)


def trial_config(mode: str, count: int, template: SynthConfig, inst_seed: int) -> SynthConfig:
    if mode == "g21":
        return replace(template, n_pixel=count, n_normal=count, n_reflection=0, rng_seed=inst_seed)
    if mode == "rotation":
        return replace(template, n_pixel=BASE_COUNT, n_normal=BASE_COUNT, n_reflection=count,
                       rng_seed=inst_seed)
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def run_trial(mode: str, count: int, trial: int, template: SynthConfig, seed: int,
              restarts: int = DEFAULT_RESTARTS) -> TrialResult:
    inst_seed, rng = trial_seeds(seed, count, trial)
    inst = generate(trial_config(mode, count, template, inst_seed))
    try:
        sol = direct_optimize_all(inst.observed, restarts, rng)
    except (InsufficientCorrespondencesError, NoFeasibleEtaError):
        return TrialResult(False, float("inf"), False)
    tr = inst.truth
    if mode == "g21":
        err = float(np.linalg.norm(sol.g21 - compose_combined(tr.g1, tr.R21, tr.g2)))
        return TrialResult(sol.converged, err, err > G21_FAILURE)
    err = float(np.degrees(rotation_angle_between(sol.R21, tr.R21)))
    return TrialResult(sol.converged, err, err > ROTATION_FAILURE_DEG)


def run_fig6(trials: int, counts: Iterable[int], mode: str = "g21",
             cfg: SynthConfig | None = None, seed: int = 0,
             restarts: int = DEFAULT_RESTARTS) -> list[Fig6Row]:
    """Failure-rate table, one row per correspondence count."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    template = cfg or SynthConfig()
    rows = []
    for count in counts:
        results = [run_trial(mode, count, t, template, seed, restarts) for t in range(trials)]
        conv = [r for r in results if r.converged]
        rows.append(Fig6Row(int(count), trials, len(conv), sum(r.failed for r in conv)))
    return rows


def write_csv(rows: Iterable[Fig6Row], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        c, n, k, f, rate = r.as_tuple()
        w.writerow([c, n, k, f, f"{rate:.6f}"])


def to_csv(rows: Iterable[Fig6Row]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


__all__ = ["Fig6Row", "TrialResult", "run_fig6", "run_trial", "write_csv", "to_csv",
           "trial_seeds", "trial_config", "MODES", "CSV_HEADER", "G21_FAILURE",
           "ROTATION_FAILURE_DEG"]
