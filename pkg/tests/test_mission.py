import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asi import mission
from asi.geometry import Domain


def test_measure_noise_free_and_zero(desk):
    pts = [(0.3, 0.3), (0.65, 0.35)]
    clean = mission.interpolate(desk.truth_mesh, desk.truth_field, pts)
    y, noise = mission.measure(desk.truth_mesh, desk.truth_field, pts, 0.0, np.random.default_rng(0))
    assert np.array_equal(y, clean) and not noise.any()
    zero = np.zeros_like(desk.truth_field)
    y0, _ = mission.measure(desk.truth_mesh, zero, pts, 0.1, np.random.default_rng(0))
    assert not y0.any()


def test_measure_deterministic(desk):
    pts = [(0.3, 0.3), (0.65, 0.35)]
    a, _ = mission.measure(desk.truth_mesh, desk.truth_field, pts, 0.1, np.random.default_rng(7))
    b, _ = mission.measure(desk.truth_mesh, desk.truth_field, pts, 0.1, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_interpolate_bilinear_exact(unit_domain):
    from asi.geometry import build_mesh
    m = build_mesh(unit_domain, 5, 7)
    c = 2 * m.nodes[:, 0] - m.nodes[:, 1] + 3 * m.nodes[:, 0] * m.nodes[:, 1]
    pts = np.random.default_rng(0).uniform(0, 1, (20, 2))
    exact = 2 * pts[:, 0] - pts[:, 1] + 3 * pts[:, 0] * pts[:, 1]
    assert np.allclose(mission.interpolate(m, c, pts), exact, atol=1e-14)


def test_snr_monte_carlo():
    rng = np.random.default_rng(0)
    eps = rng.normal(0.0, 0.1, 10_000)
    assert abs(mission.snr_db(np.ones(10_000), eps) - 20.0) < 0.5


def test_metrics_identity(unit_domain):
    t = [(1.0, (0.2, 0.2), (0.4, 0.5))]
    m = mission.error_metrics(unit_domain, t, t, beta_max=2.0)
    assert m == {"e_un": 0.0, "e_un_abs": 0.0, "e_fd": 0.0, "e_int": 0.0, "e_loc": 0.0}


def test_metrics_zero_estimate(unit_domain):
    t = [(1.0, (0.2, 0.2), (0.4, 0.5))]
    m = mission.error_metrics(unit_domain, t, [])
    assert m["e_un"] == m["e_un_abs"] == 1.0 and m["e_fd"] == 0.0
    assert m["e_loc"] is None and m["e_int"] is None


def test_metrics_closed_form(unit_domain):
    true = [(1.0, (0.0, 0.0), (0.4, 0.4))]
    est = [(3.0, (0.2, 0.0), (0.6, 0.4))]
    m = mission.error_metrics(unit_domain, true, est, beta_max=4.0)
    # half of the true support is uncovered, the other half is over-estimated by 2
    assert m["e_un"] == pytest.approx(np.sqrt(0.5))
    assert m["e_un_abs"] == pytest.approx(np.sqrt(0.5 * 1 + 0.5 * 4))
    assert m["e_fd"] == pytest.approx(np.sqrt(0.5 * 9))
    assert m["e_int"] == pytest.approx(0.5)
    assert m["e_loc"] == pytest.approx(0.2)


def test_full_cover_at_double_intensity(unit_domain):
    t = [(1.0, (0.2, 0.2), (0.4, 0.5))]
    m = mission.error_metrics(unit_domain, t, [(2.0, (0.2, 0.2), (0.4, 0.5))], beta_max=2.0)
    assert m["e_un"] == 0.0 and m["e_un_abs"] == pytest.approx(1.0)


_edge = st.floats(0.0, 1.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(_edge, _edge, _edge, _edge, st.floats(0.01, 10.0))
def test_e_un_below_one_iff_overlap(a, b, c, d, beta):
    dom = Domain((0.0, 0.0), (1.0, 1.0))
    true = [(1.0, (0.3, 0.3), (0.6, 0.7))]
    lo, hi = (min(a, b), min(c, d)), (max(a, b), max(c, d))
    m = mission.error_metrics(dom, true, [(beta, lo, hi)])
    overlap = min(hi[0], 0.6) > max(lo[0], 0.3) and min(hi[1], 0.7) > max(lo[1], 0.3)
    assert (m["e_un"] < 1.0) == overlap


def test_metrics_ignore_empty_towers(unit_domain):
    true = [(1.0, (0.2, 0.2), (0.4, 0.5))]
    est = [(1.0, (0.2, 0.2), (0.4, 0.5)), (2.0, (0.7, 0.1), (0.7, 0.6)), (0.0, (0.1, 0.1), (0.2, 0.2))]
    m = mission.error_metrics(unit_domain, true, est, beta_max=2.0)
    assert m["e_loc"] == 0.0 and m["e_un"] == 0.0


def test_metrics_zero_truth(unit_domain):
    with pytest.raises(ValueError):
        mission.error_metrics(unit_domain, [(0.0, (0.2, 0.2), (0.4, 0.5))], [])


def test_experimental_location_error():
    """Hardware estimate (3140, 1.69, 1.76, 1.77, 1.85) against a source centred at (1.8, 1.8) in a 2.2 m room."""
    room = Domain((0.0, 0.0), (2.2, 2.2))
    true = [(3000.0, (1.75, 1.75), (1.85, 1.85))]
    est = [(3140.0, (1.69, 1.76), (1.77, 1.85))]
    m = mission.error_metrics(room, true, est, beta_max=4000.0)
    assert round(m["e_loc"], 2) == 0.03


def test_initial_waypoints(unit_domain):
    w = mission.initial_waypoints(unit_domain, 12)
    assert len(w) == 12 and all(unit_domain.contains(x) for x in w)
    d = Domain((0, 0), (1, 1), obstacles=[((0.4, 0.4), (0.6, 0.6))])
    assert all(d.contains(x) for x in mission.initial_waypoints(d, 9))


def test_no_source_halts(desk):
    cfg = mission.merge_config(mission.DESK_CONFIG, {"source": [{"beta": 0.0, "lower": [0.55, 0.25],
                                                                 "upper": [0.75, 0.45]}]})
    sc = mission.Scenario(**{**desk.__dict__, "truth_field": np.zeros_like(desk.truth_field), "cfg": cfg})
    r = mission.run_asi(cfg, seed=0, scenario=sc)
    assert r.status == "no_source" and "no source detected" in r.message
    assert not r.converged and len(r.waypoints) == 12


def test_noise_free_exact_start_stops_immediately(desk, monkeypatch):
    """With sigma = 0, readings taken from the reduced model itself and SA returning the truth, the first check passes."""
    cfg = mission.merge_config(mission.DESK_CONFIG, {"mission": {"sigma": 0.0}})
    p_true = mission.SourceParams.from_towers(desk.true_towers, [desk.domain.bounding_box], beta_max=2.0)
    coeffs = desk.rom.reduced_solve(p_true)

    def rom_measure(mesh, c, points, sigma, rng=None):
        y = desk.rom.eval_basis(np.atleast_2d(points)) @ coeffs
        return y, np.zeros_like(y)

    monkeypatch.setattr(mission, "measure", rom_measure)
    monkeypatch.setattr(mission.si, "sa_initialize", lambda *a, **k: p_true.copy())
    r = mission.run_asi(cfg, seed=0, scenario=desk)
    assert r.converged and len(r.steps) == 1 and r.steps[0]["delta_p"] <= 1e-3
    assert len(r.waypoints) == cfg["mission"]["m_bar"]


@pytest.fixture(scope="module")
def report(desk):
    return mission.run_asi(desk.cfg, seed=3, scenario=desk)


def test_mission_invariants(report, desk):
    cfg = desk.cfg["mission"]
    assert cfg["m_bar"] <= len(report.waypoints) <= cfg["m_max"]
    assert all(desk.domain.contains(x) for x in report.waypoints)
    assert len(report.readings) == len(report.waypoints)
    assert [s["m"] for s in report.steps] == list(range(cfg["m_bar"], cfg["m_bar"] + len(report.steps)))
    assert 15 < report.snr_db < 25


def test_write_outputs(report, desk, tmp_path):
    mission.write_outputs(report, tmp_path, desk)
    data = json.loads((tmp_path / "report.json").read_text())
    assert "wall_time" not in json.dumps(data)
    assert data["n_measurements"] == len(report.waypoints)
    rows = (tmp_path / "trace.csv").read_text().splitlines()
    assert len(rows) == len(report.steps) + 1
    with np.load(tmp_path / "fields.npz") as z:
        assert z["estimate_c"].shape == (desk.mesh.n_nodes,)
    assert json.loads((tmp_path / "timing.json").read_text())["wall_time_s"] > 0


def test_config_merge_and_load(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"mission": {"m_max": 20}, "seed": 9}))
    cfg = mission.load_config(tmp_path / "c.json")
    assert cfg["mission"]["m_max"] == 20 and cfg["mission"]["m_bar"] == 12 and cfg["seed"] == 9
    assert mission.DESK_CONFIG["mission"]["m_max"] == 30
