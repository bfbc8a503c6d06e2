import csv
import io

import numpy as np
import pytest

from reflpose.experiments import (
    CSV_HEADER,
    Fig6Row,
    run_fig6,
    to_csv,
    trial_config,
    trial_seeds,
)
from reflpose.synth import SynthConfig


def test_trial_config_modes():
    base = SynthConfig()
    c = trial_config("g21", 3, base, 7)
    assert (c.n_pixel, c.n_normal, c.n_reflection, c.rng_seed) == (3, 3, 0, 7)
    c = trial_config("rotation", 2, base, 7)
    assert (c.n_pixel, c.n_normal, c.n_reflection) == (4, 4, 2)
    with pytest.raises(ValueError):
        trial_config("x", 2, base, 7)


def test_trial_seeds_independent_of_order():
    a = trial_seeds(1, 4, 9)
    b = trial_seeds(1, 4, 9)
    assert a[0] == b[0] and a[1].integers(1 << 30) == b[1].integers(1 << 30)
    assert trial_seeds(1, 4, 10)[0] != a[0]


def test_single_trial_deterministic():
    a = run_fig6(1, [4], "g21", seed=3)
    b = run_fig6(1, [4], "g21", seed=3)
    assert to_csv(a) == to_csv(b)
    assert len(a) == 1


def test_csv_format():
    text = to_csv([Fig6Row(3, 10, 8, 2), Fig6Row(4, 10, 0, 0)])
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == CSV_HEADER
    assert rows[1] == ["3", "10", "8", "2", "0.250000"]
    assert rows[2][4] == "nan"


def test_validation():
    with pytest.raises(ValueError):
        run_fig6(0, [4])
    with pytest.raises(ValueError):
        run_fig6(1, [4], mode="blue")


def test_rotation_mode_small_run():
    rows = run_fig6(6, [0, 1], "rotation", seed=1)
    zero, one = rows
    assert one.converged > 0 and one.failures == 0
    assert zero.converged == 0 or zero.failure_rate > 0.5


def test_failure_rate():
    assert Fig6Row(1, 5, 4, 1).failure_rate == 0.25
    assert np.isnan(Fig6Row(1, 5, 0, 0).failure_rate)
