import numpy as np
import pytest

from asi.flowfield import (analytic_flow, load_flow, max_divergence, peclet, resample_flow, save_flow,
                           total_diffusivity)
from asi.geometry import build_mesh


@pytest.mark.parametrize("kappa0, mu, rho, sc, floor, expected", [
    (1.1e-5, 0.0, 1.0, 1.0, 0.0, 1.1e-5),
    (1.1e-5, 2e-4, 1.0, 1.0, 1e-3, 1e-3),
    (1e-3, 8.4e-4, 1.2, 0.7, 0.0, 2e-3),
])
def test_total_diffusivity(kappa0, mu, rho, sc, floor, expected):
    assert total_diffusivity(kappa0, mu, rho, sc, floor) == pytest.approx(expected, rel=1e-12)


def test_total_diffusivity_rejects_bad_input():
    with pytest.raises(ValueError):
        total_diffusivity(1e-3, -1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        total_diffusivity(1e-3, 0.0, 0.0, 1.0)


def test_peclet():
    assert peclet(1.0, 1.0, 0.4) == pytest.approx(2.5)
    assert peclet(1.0, 1.0, 0.04) == pytest.approx(25.0)
    assert peclet(0.0, 3.0, 0.1) == 0.0
    with pytest.raises(ValueError):
        peclet(1.0, 1.0, 0.0)


def test_desk_flow_peclet():
    from asi.mission import DESK_CONFIG
    f = DESK_CONFIG["flow"]
    assert peclet(f["params"]["u_max"], DESK_CONFIG["domain"]["characteristic_length"], f["kappa"]) == pytest.approx(2.5)


def test_uniform_flow(unit_domain):
    m = build_mesh(unit_domain, 7, 5)
    f = analytic_flow("uniform", m, velocity=(1.0, 0.0))
    assert np.array_equal(f.velocity, np.tile([1.0, 0.0], (m.n_nodes, 1)))


def test_channel_no_slip(unit_domain):
    m = build_mesh(unit_domain, 9, 9)
    f = analytic_flow("channel", m, u_max=2.0)
    wall = (m.nodes[:, 1] == 0.0) | (m.nodes[:, 1] == 1.0)
    assert np.all(f.velocity[wall] == 0.0)
    assert f.velocity[:, 0].max() == pytest.approx(2.0)


def test_recirculation_solenoidal(unit_domain):
    m = build_mesh(unit_domain, 81, 81)
    f = analytic_flow("recirculation", m, u_max=1.0, inlet=0.3)
    # central differences of an analytic solenoidal field: O(h^2) residual
    assert max_divergence(m, f.velocity) < 5e-3


def test_floor_applied(unit_domain):
    m = build_mesh(unit_domain, 5, 5)
    f = analytic_flow("uniform", m, kappa=1e-6, floor=1e-3)
    assert np.all(f.diffusivity == 1e-3)


def test_nonpositive_diffusivity_rejected(unit_domain):
    m = build_mesh(unit_domain, 5, 5)
    with pytest.raises(ValueError):
        analytic_flow("uniform", m, kappa=0.0)


def test_save_load_roundtrip(tmp_path, unit_domain):
    m = build_mesh(unit_domain, 6, 4)
    f = analytic_flow("recirculation", m, kappa=0.01, u_max=0.5)
    save_flow(f, tmp_path / "flow.csv")
    g = load_flow(tmp_path / "flow.csv", m)
    assert np.array_equal(f.velocity, g.velocity)
    assert np.array_equal(f.diffusivity, g.diffusivity)


def test_wrong_row_count(tmp_path, unit_domain):
    m = build_mesh(unit_domain, 6, 4)
    save_flow(analytic_flow("uniform", m), tmp_path / "flow.csv")
    with pytest.raises(ValueError, match="rows"):
        load_flow(tmp_path / "flow.csv", build_mesh(unit_domain, 5, 4))


def test_resample_linear_field_exact(unit_domain):
    coarse, fine = build_mesh(unit_domain, 5, 5), build_mesh(unit_domain, 9, 9)
    f = analytic_flow("uniform", coarse, kappa=1.0)
    f.velocity[:] = np.column_stack([coarse.nodes[:, 0], 2 * coarse.nodes[:, 1]])
    g = resample_flow(f, coarse, fine)
    assert np.allclose(g.velocity, np.column_stack([fine.nodes[:, 0], 2 * fine.nodes[:, 1]]), atol=1e-14)
