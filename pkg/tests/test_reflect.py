import numpy as np
import pytest

from obliqueldp.geometry import (
    CoefficientField,
    Disk,
    Interval,
    constant_coefficients,
    normal_field,
    oblique_from_tangent,
)
from obliqueldp.reflect import (
    Control,
    TimeGrid,
    flow_check,
    holder_half_quotient,
    reflect_step,
    solve_reflected_ode,
    solve_skorokhod_picard,
    validate_reflected_path,
)


def _disk_setup(kappa=0.5):
    disk = Disk(1.0)
    return disk, oblique_from_tangent(disk, kappa)


def test_time_grid_uniform_and_refine():
    g = TimeGrid.uniform(0.0, 1.0, 8)
    assert g.n_steps == 8
    assert g.t0 == 0.0 and g.t_end == 1.0
    np.testing.assert_allclose(g.dts, 0.125)
    r = g.refine()
    assert r.n_steps == 16
    np.testing.assert_allclose(r.nodes[::2], g.nodes, atol=1e-15)


def test_control_action_of_constant_control():
    g = TimeGrid.uniform(0.0, 2.0, 64)
    a = Control.from_function(g, lambda t: np.array([0.3, -0.4]))
    # 0.5 * |a|^2 * T with |a| = 0.5, T = 2
    assert a.action() == pytest.approx(0.25, abs=1e-12)
    z = Control.zero(g, 3)
    assert z.action() == 0.0
    assert z.m == 3


def test_reflect_step_leaves_interior_points_alone():
    disk, field = _disk_setup()
    p = np.array([0.2, 0.1])
    q, dz = reflect_step(disk, field, p)
    np.testing.assert_allclose(q, p, atol=0.0)
    np.testing.assert_allclose(dz, 0.0, atol=0.0)


def test_reflect_step_oblique_pushback_fixed_points():
    # fixed points computed independently with a root solver on
    # c = p - lambda * gamma(c) constrained to the boundary
    disk, field = _disk_setup(0.5)
    q, dz = reflect_step(disk, field, np.array([1.05, 0.30]))
    np.testing.assert_allclose(q, [0.972142668073, 0.234389916403], atol=1e-8)
    np.testing.assert_allclose(dz, [0.077857331927, 0.065610083597], atol=1e-8)

    q2, dz2 = reflect_step(disk, field, np.array([0.4, -1.2]))
    np.testing.assert_allclose(q2, [0.217712434447, -0.976012958873], atol=1e-8)
    np.testing.assert_allclose(dz2, [0.182287565553, -0.223987041127], atol=1e-8)
    # pushback direction is parallel to the field at the contact point
    g = field(q2)
    cross = dz2[0] * g[1] - dz2[1] * g[0]
    assert abs(cross) < 1e-9


def test_one_dimensional_drift_sticks_to_endpoint():
    iv = Interval(-1.0, 1.0)
    field = normal_field(iv)
    coeffs = constant_coefficients([2.0], [[1.0]])
    grid = TimeGrid.uniform(0.0, 1.0, 4096)
    path = solve_reflected_ode(iv, field, coeffs, None, 0.0, [0.5], grid)
    # free motion reaches the right endpoint at t = 0.25 and stays there
    k_hit = int(np.argmax(path.points[:, 0] >= 1.0 - 1e-12))
    assert grid.nodes[k_hit] == pytest.approx(0.25, abs=1e-12)
    assert path.points[-1, 0] == pytest.approx(1.0, abs=1e-12)
    # the constraint absorbs drift 2 over the remaining 0.75 of time
    assert path.total_variation == pytest.approx(1.5, abs=1e-3)
    rep = validate_reflected_path(iv, field, path)
    assert rep.ok()
    assert rep.n_reflections > 3000


def test_oblique_disk_drift_against_fine_reference():
    # reference endpoint from the same scheme at 2**20 steps
    ref_end = np.array([0.952455157167, -0.304678803966])
    disk, field = _disk_setup(0.5)
    coeffs = constant_coefficients([2.0, 0.0], np.eye(2))

    ends = {}
    for n in (2 ** 12, 2 ** 14):
        grid = TimeGrid.uniform(0.0, 1.0, n)
        path = solve_reflected_ode(disk, field, coeffs, None, 0.0, [0.0, 0.0], grid)
        ends[n] = path.points[-1]
        rep = validate_reflected_path(disk, field, path)
        assert rep.ok()
        assert rep.n_reflections > 0
    err_lo = np.linalg.norm(ends[2 ** 12] - ref_end)
    err_hi = np.linalg.norm(ends[2 ** 14] - ref_end)
    assert err_lo < 1.5e-4
    # first-order stepping: two refinement levels shrink the error ~4x
    assert 2.5 < err_lo / err_hi < 6.0


def test_total_variation_on_oblique_disk_case():
    ref_tv = 1.095263940102  # value at 2**20 steps
    disk, field = _disk_setup(0.5)
    coeffs = constant_coefficients([2.0, 0.0], np.eye(2))
    grid = TimeGrid.uniform(0.0, 1.0, 2 ** 14)
    path = solve_reflected_ode(disk, field, coeffs, None, 0.0, [0.0, 0.0], grid)
    assert path.total_variation == pytest.approx(ref_tv, rel=2e-3)


def test_holder_quotient_stable_under_refinement():
    disk, field = _disk_setup(0.5)
    coeffs = constant_coefficients([2.0, 0.0], np.eye(2))
    vals = []
    for n in (2 ** 12, 2 ** 13):
        grid = TimeGrid.uniform(0.0, 1.0, n)
        path = solve_reflected_ode(disk, field, coeffs, None, 0.0, [0.0, 0.0], grid)
        vals.append(holder_half_quotient(path))
    assert vals[0] == pytest.approx(np.sqrt(2.0), rel=1e-3)
    assert 0.5 < vals[0] / vals[1] < 2.0


def test_controlled_path_moves_against_drift():
    disk, field = _disk_setup(0.5)
    coeffs = constant_coefficients([2.0, 0.0], np.eye(2))
    grid = TimeGrid.uniform(0.0, 1.0, 1024)
    # control cancels the drift exactly: b - sigma a = 0
    a = Control.from_function(grid, lambda t: np.array([2.0, 0.0]))
    path = solve_reflected_ode(disk, field, coeffs, a, 0.0, [0.0, 0.0], grid)
    np.testing.assert_allclose(path.points[-1], [0.0, 0.0], atol=1e-12)
    assert path.total_variation == 0.0


def _state_dependent_disk_coeffs():
    return CoefficientField(
        b=lambda t, x: np.array([1.0 - 0.8 * x[0], 0.3 * x[1]]),
        sigma=lambda t, x: np.eye(2),
        m=2,
        lipschitz_x=0.9,
    )


def test_picard_matches_stepper_and_contracts():
    disk, field = _disk_setup(0.5)
    coeffs = _state_dependent_disk_coeffs()
    grid = TimeGrid.uniform(0.0, 1.0, 512)
    tol = 1e-10
    direct = solve_reflected_ode(disk, field, coeffs, None, 0.0, [0.9, 0.0], grid)
    fixed, diag = solve_skorokhod_picard(disk, field, coeffs, None, 0.0, [0.9, 0.0],
                                         grid, tol=tol)
    sup = float(np.max(np.linalg.norm(direct.points - fixed.points, axis=1)))
    assert sup <= 3.0 * tol
    assert diag.max_ratio <= 0.6
    assert all(it <= 200 for it in diag.iterations)


def test_picard_window_splitting_via_eta():
    disk, field = _disk_setup(0.5)
    coeffs = _state_dependent_disk_coeffs()
    grid = TimeGrid.uniform(0.0, 1.0, 256)
    _, diag = solve_skorokhod_picard(disk, field, coeffs, None, 0.0, [0.0, 0.0],
                                     grid, tol=1e-10, eta=0.25)
    assert diag.window_count == 4


def test_flow_restart_property():
    disk, field = _disk_setup(0.5)
    coeffs = constant_coefficients([2.0, 0.0], np.eye(2))
    grid = TimeGrid.uniform(0.0, 1.0, 1024)
    rep = flow_check(disk, field, coeffs, None, 0.0, [0.0, 0.0], grid, s_mid=0.5)
    assert rep.restart_time == 0.5
    assert rep.defect < 1e-10
    with pytest.raises(ValueError):
        flow_check(disk, field, coeffs, None, 0.0, [0.0, 0.0], grid, s_mid=1.5)


def test_start_outside_closure_rejected():
    disk, field = _disk_setup()
    coeffs = constant_coefficients([0.0, 0.0], np.eye(2))
    grid = TimeGrid.uniform(0.0, 1.0, 16)
    with pytest.raises(ValueError):
        solve_reflected_ode(disk, field, coeffs, None, 0.0, [2.0, 0.0], grid)
