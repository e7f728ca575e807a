import math

import numpy as np
import pytest

from tests.conftest import (
    make_single_junction,
    make_single_vessel,
    newton_rri_reference,
    rri_coeffs,
)
from vascrom.network import (
    BoundaryCondition,
    Fluid,
    Junction,
    JunctionOutlet,
    VascularNetwork,
    Vessel,
    generate_symmetric_tree,
    network_from_dict,
    network_to_dict,
    poiseuille_elements,
)
from vascrom.nondim import CoefficientSet
from vascrom.solver import (
    ConvergenceError,
    Solution,
    SolverConfig,
    SolverError,
    VarIndex,
    assemble_standard_residual,
    export_solution,
    kkt_report,
    mass_conservation_error,
    solve_opt,
    solve_steady_standard,
    solve_transient_standard,
    _standard_system,
)

FLUID = Fluid()


# -- config validation -----------------------------------------------------


def test_config_rejects_unknown_mode():
    with pytest.raises(SolverError, match="mode"):
        SolverConfig(mode="banana")


def test_config_rejects_bad_transient_grid():
    with pytest.raises(SolverError):
        SolverConfig(mode="transient", dt=0.0)
    with pytest.raises(SolverError):
        SolverConfig(mode="transient", n_steps=0)


def test_config_rejects_nonpositive_tolerances():
    with pytest.raises(SolverError):
        SolverConfig(newton_tol=0.0)


# -- standard engine residual and Jacobian ---------------------------------


def test_residual_vanishes_on_hand_solution():
    net = make_single_vessel(bc_r=100.0, inflow=10.0)
    idx = VarIndex(net)
    r_v, _ = net.vessels["v0"].elements(net.fluid)
    x = np.zeros(idx.n)
    x[idx("v0", "q_in")] = 10.0
    x[idx("v0", "q_out")] = 10.0
    x[idx("v0", "p_out")] = 1000.0
    x[idx("v0", "p_in")] = 1000.0 + r_v * 10.0
    res = assemble_standard_residual(net, x)
    assert np.max(np.abs(res)) < 1e-12


def test_jacobian_matches_finite_differences():
    net = generate_symmetric_tree(depth=2)
    # stenosis on one vessel exercises the quadratic terms too
    data = network_to_dict(net)
    data["vessels"][1]["stenosis_area"] = 0.5 * data["vessels"][1]["area"]
    net = network_from_dict(data)
    idx = VarIndex(net)
    rng = np.random.default_rng(4)
    x = rng.uniform(0.5, 2.0, idx.n) * 100.0
    x_prev = x + rng.normal(scale=5.0, size=idx.n)
    res, jac = _standard_system(net, x, x_prev, 1e-3, 100.0, idx)
    eps = 1e-4
    for col in range(idx.n):
        xp = x.copy()
        xp[col] += eps
        rp = assemble_standard_residual(net, xp, x_prev, 1e-3, 100.0, idx)
        xm = x.copy()
        xm[col] -= eps
        rm = assemble_standard_residual(net, xm, x_prev, 1e-3, 100.0, idx)
        fd = (rp - rm) / (2 * eps)
        # relative to the row's own magnitude: cancellation in the central
        # difference is amplified by |res| on the stiff pressure rows
        scale = np.maximum(1.0, np.maximum(np.abs(jac[:, col]), np.abs(res) * eps))
        assert np.max(np.abs(jac[:, col] - fd) / scale) < 1e-6


# -- standard engine solves ------------------------------------------------


def test_steady_single_vessel_inlet_pressure():
    net = make_single_vessel(bc_r=100.0, inflow=10.0)
    sol = solve_steady_standard(net)
    assert sol.inlet_pressure[0] == pytest.approx(1010.0530964914873, rel=1e-10)
    assert sol.q("v0")[0] == pytest.approx(10.0, rel=1e-12)


def test_steady_single_vessel_with_stenosis():
    net = make_single_vessel(bc_r=100.0, inflow=10.0, stenosis_area=0.5)
    r_v, _ = net.vessels["v0"].elements(net.fluid)
    r_s = net.vessels["v0"].stenosis_r(net.fluid)
    assert r_s > 0
    expected = 100.0 * 10.0 + r_v * 10.0 + r_s * 100.0
    sol = solve_steady_standard(net)
    assert sol.inlet_pressure[0] == pytest.approx(expected, rel=1e-10)


def test_steady_symmetric_tree_splits_evenly():
    net = generate_symmetric_tree(depth=3, inflow=80.0)
    sol = solve_steady_standard(net)
    for leaf in net.leaf_vessels():
        assert sol.q(leaf)[0] == pytest.approx(10.0, rel=1e-9)
    assert mass_conservation_error(sol) < 1e-10


def test_steady_nonzero_distal_pressure_offsets_inlet():
    p_d = 2000.0
    base = solve_steady_standard(make_single_vessel(bc_r=100.0, inflow=10.0))
    shifted = solve_steady_standard(
        make_single_vessel(bc_r=100.0, inflow=10.0, pd=p_d)
    )
    assert shifted.inlet_pressure[0] - base.inlet_pressure[0] == pytest.approx(
        p_d, rel=1e-10
    )


def test_transient_constant_inflow_matches_steady():
    net = generate_symmetric_tree(depth=2, inflow=50.0)
    steady = solve_steady_standard(net)
    cfg = SolverConfig(mode="transient", dt=1e-3, n_steps=20)
    trans = solve_transient_standard(net, cfg)
    assert np.allclose(trans.states[-1], steady.states[0], rtol=1e-9, atol=1e-9)


def test_transient_requires_transient_mode():
    net = make_single_vessel()
    with pytest.raises(SolverError, match="transient"):
        solve_transient_standard(net, SolverConfig(mode="steady"))


def test_zero_inflow_gives_zero_state():
    net = make_single_vessel(inflow=0.0)
    sol = solve_steady_standard(net)
    assert np.max(np.abs(sol.states)) < 1e-12


def _rl_vessel_network(inflow_series, capacitance=0.0):
    vessels = {
        "v0": Vessel(id="v0", length=2.0, area=0.8, capacitance=capacitance)
    }
    bcs = [
        BoundaryCondition(vessel_id="v0", kind="FLOW", value=inflow_series),
        BoundaryCondition(vessel_id="v0", kind="RESISTANCE", r=200.0),
    ]
    return VascularNetwork(fluid=FLUID, vessels=vessels, junctions=[],
                           boundary_conditions=bcs)


def test_backward_euler_first_order_in_time():
    """Inlet pressure error on an R-L vessel under a smooth ramped inflow
    halves (to within 20%) when the step size halves."""
    period = 0.08
    t_end = 0.04

    def q_of(t):
        return 50.0 * (1.0 - np.cos(2 * np.pi * t / period))

    def qdot_of(t):
        return 50.0 * (2 * np.pi / period) * np.sin(2 * np.pi * t / period)

    errors = []
    dts = [4e-3, 2e-3, 1e-3]
    for dt in dts:
        n_steps = int(round(t_end / dt))
        ts = dt * np.arange(n_steps + 1)
        net = _rl_vessel_network((ts, q_of(ts)))
        r_v, l_v = net.vessels["v0"].elements(net.fluid)
        sol = solve_transient_standard(
            net, SolverConfig(mode="transient", dt=dt, n_steps=n_steps)
        )
        exact = 200.0 * q_of(t_end) + r_v * q_of(t_end) + l_v * qdot_of(t_end)
        errors.append(abs(sol.inlet_pressure[-1] - exact))
    orders = [
        math.log2(errors[i] / errors[i + 1]) for i in range(len(errors) - 1)
    ]
    for p in orders:
        assert 0.8 <= p <= 1.2


# -- optimization engine ---------------------------------------------------


def test_opt_single_junction_hand_value():
    # each outlet carries q=5 into a 100 Ba*s/cm^3 BC: P_out = 500;
    # junction drop = 1*5 + 0.01*5*|5| = 5.25
    net = make_single_junction(rri_coeffs(1.0, 0.01, 0.5))
    sol = solve_opt(net, SolverConfig(mode="steady"), engine="rri")
    assert sol.inlet_pressure[0] == pytest.approx(505.25, abs=1e-8)
    assert sol.diagnostics[0]["objective"] < 1e-16
    assert mass_conservation_error(sol) < 1e-10


def test_opt_ri_engine_ignores_quadratic_term():
    net = make_single_junction(rri_coeffs(1.0, 0.01, 0.5))
    sol = solve_opt(net, SolverConfig(mode="steady"), engine="ri")
    # without the quadratic term the drop is 1*5 = 5
    assert sol.inlet_pressure[0] == pytest.approx(505.0, abs=1e-8)


def test_opt_matches_ri_when_quadratic_zero():
    net = make_single_junction(rri_coeffs(2.0, 0.0, 0.3), phi=0.5)
    rri = solve_opt(net, SolverConfig(mode="steady"), engine="rri")
    ri = solve_opt(net, SolverConfig(mode="steady"), engine="ri")
    assert np.allclose(rri.states, ri.states, rtol=1e-9, atol=1e-9)


def _coefficient_tree(depth, seed, r_quad=0.0):
    """Random asymmetric tree with linear junction coefficients whose flow
    splits are set from the independent root-finder solution."""
    rng = np.random.default_rng(seed)
    data = network_to_dict(generate_symmetric_tree(depth=depth))
    for bc in data["boundary_conditions"]:
        if bc["kind"] == "RESISTANCE":
            bc["value"]["R"] *= rng.uniform(0.5, 2.0)
    net = network_from_dict(data)
    for j in net.junctions:
        for o in j.outlets:
            o.coefficients = CoefficientSet(
                kind="RRI",
                r_lin=rng.uniform(50.0, 500.0),
                r_quad=r_quad,
                l=rng.uniform(0.1, 1.0),
            )
    flows, _ = newton_rri_reference(net)
    for j in net.junctions:
        q_parent = flows[j.inlet_vessel]
        j.outlets[0].flow_split = flows[j.outlets[0].vessel_id] / q_parent
        j.outlets[1].flow_split = 1.0 - j.outlets[0].flow_split
    return net


@pytest.mark.parametrize("depth,seed", [(1, 1), (2, 2), (3, 3)])
def test_opt_linear_matches_independent_root_finder(depth, seed):
    net = _coefficient_tree(depth, seed)
    flows, pressures = newton_rri_reference(net)
    sol = solve_opt(net, SolverConfig(mode="steady"), engine="rri")
    for vid in net.vessels:
        assert sol.q(vid)[0] == pytest.approx(flows[vid], rel=1e-6)
        assert sol.p(vid)[0] == pytest.approx(pressures[vid], rel=1e-6)
    assert mass_conservation_error(sol) < 1e-10


def test_opt_ill_posed_quadratic_pair_stays_feasible():
    # equal and opposite quadratic coefficients admit no exact solution; the
    # solver must still return a feasible point with a positive objective
    net = make_single_junction(
        rri_coeffs(0.0, 1.0, 0.0), rri_coeffs(0.0, -1.0, 0.0), phi=0.5
    )
    sol = solve_opt(net, SolverConfig(mode="steady"), engine="rri")
    diag = sol.diagnostics[0]
    assert diag["constraint_violation"] <= 1e-8
    assert diag["objective"] > 1e-6
    assert math.isfinite(diag["objective"])


def test_opt_transient_constant_inflow_matches_steady():
    net = make_single_junction(rri_coeffs(1.0, 0.01, 0.5))
    steady = solve_opt(net, SolverConfig(mode="steady"), engine="rri")
    trans = solve_opt(
        net, SolverConfig(mode="transient", dt=1e-3, n_steps=10), engine="rri"
    )
    assert np.allclose(trans.states[-1], steady.states[0], rtol=1e-8, atol=1e-8)


def test_opt_objective_invariant_under_inflow_rescaling():
    """The residuals are flow-normalized, so a linear network solved at 10x
    the inflow reports a comparable (still tiny) objective."""
    for scale in (1.0, 10.0):
        net = make_single_junction(rri_coeffs(2.0, 0.0, 0.0), inflow=10.0 * scale)
        sol = solve_opt(net, SolverConfig(mode="steady"), engine="rri")
        assert sol.diagnostics[0]["objective"] < 1e-14


def test_opt_requires_coefficients():
    net = generate_symmetric_tree(depth=1)
    with pytest.raises(SolverError, match="coefficients"):
        solve_opt(net, SolverConfig(mode="steady"), engine="rri")


def test_opt_requires_flow_splits():
    net = make_single_junction(rri_coeffs(1.0, 0.0, 0.0))
    for j in net.junctions:
        for o in j.outlets:
            o.flow_split = None
    with pytest.raises(SolverError, match="flow split"):
        solve_opt(net, SolverConfig(mode="steady"), engine="rri")


def test_opt_unknown_engine_rejected():
    net = make_single_junction(rri_coeffs(1.0, 0.0, 0.0))
    with pytest.raises(SolverError, match="engine"):
        solve_opt(net, SolverConfig(mode="steady"), engine="spectral")


def test_kkt_report_recomputes_solution_diagnostics():
    net = _coefficient_tree(2, seed=9)
    cfg = SolverConfig(mode="transient", dt=2e-3, n_steps=5)
    sol = solve_opt(net, cfg, engine="rri")
    report = kkt_report(sol)
    assert len(report) == len(sol.times)
    for rec, diag in zip(report, sol.diagnostics):
        assert rec["objective"] == pytest.approx(diag["objective"], abs=1e-12)
        assert rec["constraint_violation"] == pytest.approx(
            diag["constraint_violation"], abs=1e-12
        )
        assert rec["stationarity"] <= 10 * max(
            diag["stationarity"], cfg.stationarity_tol
        )


def test_kkt_report_rejects_standard_solutions():
    sol = solve_steady_standard(make_single_vessel())
    with pytest.raises(SolverError):
        kkt_report(sol)


# -- mass conservation across engines --------------------------------------


def test_mass_conservation_both_engines():
    net = _coefficient_tree(3, seed=11)
    opt = solve_opt(net, SolverConfig(mode="steady"), engine="rri")
    assert mass_conservation_error(opt) <= 1e-10
    std = solve_steady_standard(generate_symmetric_tree(depth=3))
    assert mass_conservation_error(std) <= 1e-10


# -- export ----------------------------------------------------------------


def test_export_solution_files(tmp_path):
    import csv
    import json

    net = make_single_junction(rri_coeffs(1.0, 0.01, 0.5))
    sol = solve_opt(net, SolverConfig(mode="steady"), engine="rri")
    export_solution(sol, tmp_path)
    with open(tmp_path / "solution.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0][0] == "t"
    assert "P_v0_in" in rows[0]
    p_in = float(rows[1][rows[0].index("P_v0_in")])
    assert p_in == pytest.approx(sol.inlet_pressure[0], rel=1e-15)
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    assert diag["engine"] == "rri"
    assert len(diag["steps"]) == 1
