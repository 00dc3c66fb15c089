import math

import numpy as np
import pytest

import sphsde


def test_version():
    assert sphsde.__version__ == "0.1.0"


def test_llg_step_stays_on_sphere():
    z = np.array([0.0, 1.0, 1.0]) / math.sqrt(2.0)
    h = np.array([0.0, 0.0, 1.0])
    hp = np.array([0.0, 1.0, 0.0])
    rng = np.random.default_rng(3)
    path = sphsde.llg_path(z, h, hp, 0.01, list(rng.normal(0.0, 0.1, 500)))
    assert len(path) == 501
    assert max(abs(np.linalg.norm(p) - 1.0) for p in path) < 1e-12


def test_llg_h_perp_zero_keeps_latitude():
    z = np.array([0.6, 0.0, 0.8])
    h = np.array([0.0, 0.0, 1.0])
    out = sphsde.llg_step(z, h, np.zeros(3), 0.05, 0.7)
    assert abs(out[2] - 0.8) < 1e-14


def test_rodrigues_matches_scipy_free_series():
    axis = np.array([0.3, -0.2, 0.9])
    a = sphsde.hat(axis)
    # truncated exponential series as an oracle
    series = np.eye(3)
    term = np.eye(3)
    for n in range(1, 30):
        term = term @ a / n
        series = series + term
    assert np.abs(sphsde.rodrigues_exp(axis, 1.0) - series).max() < 1e-13


def test_hormander_rank():
    assert sphsde.hormander_rank([1, 0, 0], [0, 1, 0]) == 3
    assert sphsde.hormander_rank([1, 0, 0], [2, 0, 0]) == 1
    assert sphsde.hormander_rank([0, 0, 0], [0, 0, 0]) == 0


def test_geodesic_energy_after_first_step():
    s = sphsde.geodesic_start([0, 1, 0], [1, 0, 0], D=1.0, k=0.001)
    s = sphsde.geodesic_step(s, 0.01, D=1.0, k=0.001)
    e1 = 0.5 * np.dot(s.v, s.v)
    for dw in np.random.default_rng(5).normal(0.0, math.sqrt(0.001), 200):
        s = sphsde.geodesic_step(s, dw, D=1.0, k=0.001)
        assert abs(np.linalg.norm(s.u) - 1.0) < 1e-14
        assert abs(0.5 * np.dot(s.v, s.v) - e1) < 1e-13


def test_geodesic_step_size_bound():
    with pytest.raises(ValueError):
        sphsde.geodesic_start([0, 1, 0], [1, 0, 0], k=0.2)


def test_moment_flow_commuting_mean():
    # dz = -z x h dt - z x h o dW with h = e_z: E[x + i y](t) = e^{-t/2 + i t} (x0 + i y0)
    g = sphsde.generator_matrix([0, 0, 1], [[0, 0, 1]], 1)
    z0 = np.array([1.0, 0.0, 0.0])
    m = g.evolve(g.monomials(z0), 2.0)
    c = complex(m[1], m[2])
    # hat(e_z) z = e_z x z rotates counterclockwise
    expected = math.exp(-1.0) * complex(math.cos(2.0), math.sin(2.0))
    assert abs(c - expected) < 1e-12
    assert abs(m[3]) < 1e-14


def test_limiting_moments_uniform():
    g = sphsde.generator_matrix([0, 0, 1], [[0, 1, 0]], 2)
    lim = g.limit(g.monomials(np.array([0.0, 0.6, 0.8])))
    assert np.abs(lim - g.uniform_sphere_moments()).max() < 1e-10


def test_partition_and_density():
    areas = sphsde.sphere_cell_areas()
    assert len(areas) == 17 * 32
    assert sum(1 for a in areas if a > 0) == 482
    assert abs(sum(areas) - 4 * math.pi) < 1e-9
    assert sphsde.sphere_cell([0, 0, 1]) == (0, 0)
    pts = np.random.default_rng(1).normal(size=(500, 3))
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    grid = sphsde.empirical_density(list(pts))
    assert grid["n_samples"] == 500
    assert sphsde.e_max(list(pts)) > 0.0
    assert sphsde.bundle_cell([1, 0, 0], [0, 1, 0])[0] == 0


def test_presets_and_ensemble():
    assert "desk-commuting" in sphsde.preset_names()
    cfg = sphsde.preset("desk-commuting")
    cfg["n_paths"] = 64
    cfg["t_end"] = 1.0
    cfg.pop("n_steps", None)
    cfg.pop("record_times", None)
    cfg["record_dt"] = 0.5
    res = sphsde.run_ensemble(cfg)
    assert [r["t"] for r in res["records"]] == pytest.approx([0.0, 0.5, 1.0])
    assert res["diagnostics"]["max_norm_defect"] < 1e-12
    again = sphsde.run_ensemble(cfg)
    assert again["records"][-1]["mean"] == res["records"][-1]["mean"]


def test_errors_map_to_python_exceptions():
    with pytest.raises(ValueError):
        sphsde.preset("no-such-preset")
    with pytest.raises(ValueError):
        sphsde.llg_step([0, 0, 1], [0, 0, 1], [0, 0, 1], 0.01, 0.1)  # h_perp not orthogonal to h
