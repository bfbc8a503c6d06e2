from dataclasses import replace

import numpy as np
import pytest

from reflpose.geometry import rot_x, rotation_angle_between
from reflpose.multiview import (
    GraphDisconnectedError,
    integrate_multiview,
    loop_rotation_error,
    multiview_objective,
)
from reflpose.solvers import solve_pair
from reflpose.synth import SynthConfig, generate, generate_multiview


def solved_edges(n_views, seed):
    mv = generate_multiview(n_views, SynthConfig(8, 8, 3, rng_seed=seed))
    edges = [(i, j, solve_pair(inst.observed, rng=0), inst.observed) for (i, j), inst in mv.pairs.items()]
    return mv, edges


def test_two_views_match_pairwise():
    inst = generate(SynthConfig(6, 6, 2, rng_seed=3))
    sol = solve_pair(inst.observed, rng=0)
    g = integrate_multiview([(0, 1, sol, inst.observed)])
    assert rotation_angle_between(g.relative(0, 1), sol.R21) < 1e-8
    assert np.allclose(g.rotations[0], np.eye(3))
    assert np.allclose(g.gbrs[0].as_tuple(), sol.g1.as_tuple(), atol=1e-6)


def test_three_view_loop_closure():
    mv, edges = solved_edges(3, 5)
    g = integrate_multiview(edges)
    assert g.converged
    assert loop_rotation_error(g, [0, 1, 2]) < 1e-6
    for (i, j), inst in mv.pairs.items():
        assert rotation_angle_between(g.relative(i, j), inst.truth.R21) < 1e-6


def test_refinement_repairs_perturbed_edge():
    mv, edges = solved_edges(3, 5)
    i, j, sol, s = edges[0]
    edges[0] = (i, j, replace(sol, R21=rot_x(np.radians(5)) @ sol.R21), s)

    def mean_err(g):
        return np.mean([rotation_angle_between(g.rotations[k], mv.rotations[k]) for k in range(3)])

    init = integrate_multiview(edges, refine=False)
    refined = integrate_multiview(edges)
    assert mean_err(refined) < mean_err(init)


def test_gauge_invariance():
    _, edges = solved_edges(3, 2)
    g = integrate_multiview(edges)
    Q = rot_x(0.4) @ np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    a = multiview_objective(g.rotations, g.gbrs, edges)
    b = multiview_objective([R @ Q for R in g.rotations], g.gbrs, edges)
    assert np.isclose(a, b, rtol=1e-9, atol=1e-20)


def test_disconnected():
    _, edges = solved_edges(3, 1)
    with pytest.raises(GraphDisconnectedError):
        integrate_multiview([edges[0]], n_views=3)
    with pytest.raises(GraphDisconnectedError):
        integrate_multiview([])


def test_to_dict():
    _, edges = solved_edges(3, 1)
    d = integrate_multiview(edges).to_dict()
    assert d["n_views"] == 3 and len(d["rotations"]) == 3 and len(d["edges"]) == 3
