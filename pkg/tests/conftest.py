"""Shared fixtures and independent oracles for the test suite."""

import math

import numpy as np
import pytest
import scipy.optimize

from vascrom.network import (
    BoundaryCondition,
    Fluid,
    Junction,
    JunctionOutlet,
    VascularNetwork,
    Vessel,
)
from vascrom.nondim import CoefficientSet


def make_single_vessel(bc_r=100.0, inflow=10.0, length=1.0, area=1.0,
                       stenosis_area=None, kt=None, pd=0.0):
    vessels = {
        "v0": Vessel(id="v0", length=length, area=area,
                     stenosis_area=stenosis_area, kt=kt)
    }
    bcs = [
        BoundaryCondition(vessel_id="v0", kind="FLOW", value=inflow),
        BoundaryCondition(vessel_id="v0", kind="RESISTANCE", r=bc_r, pd=pd),
    ]
    return VascularNetwork(fluid=Fluid(), vessels=vessels, junctions=[],
                           boundary_conditions=bcs)


def make_single_junction(coeffs1, coeffs2=None, phi=0.5, bc_r1=100.0,
                         bc_r2=100.0, inflow=10.0, outlet_area=0.5):
    """One junction, two leaf outlets with resistance BCs."""
    if coeffs2 is None:
        coeffs2 = coeffs1
    vessels = {
        "v0": Vessel(id="v0", length=1.0, area=1.0),
        "v1": Vessel(id="v1", length=1.0, area=outlet_area),
        "v2": Vessel(id="v2", length=1.0, area=outlet_area),
    }
    outlets = [
        JunctionOutlet(vessel_id="v1", angle=0.6, attributed_length=0.9,
                       residual_length=0.1, coefficients=coeffs1,
                       flow_split=phi),
        JunctionOutlet(vessel_id="v2", angle=0.6, attributed_length=0.9,
                       residual_length=0.1, coefficients=coeffs2,
                       flow_split=1.0 - phi),
    ]
    bcs = [
        BoundaryCondition(vessel_id="v0", kind="FLOW", value=inflow),
        BoundaryCondition(vessel_id="v1", kind="RESISTANCE", r=bc_r1),
        BoundaryCondition(vessel_id="v2", kind="RESISTANCE", r=bc_r2),
    ]
    return VascularNetwork(fluid=Fluid(), vessels=vessels,
                           junctions=[Junction(id="j0", inlet_vessel="v0",
                                               outlets=outlets)],
                           boundary_conditions=bcs)


def rri_coeffs(r_lin, r_quad, l):
    return CoefficientSet(kind="RRI", r_lin=r_lin, r_quad=r_quad, l=l)


def newton_rri_reference(network, inflow=None):
    """Independent steady RRI solve via scipy root-finding.

    One flow and one pressure unknown per vessel (vessels are wires); the
    equations are junction mass balance, the junction pressure-drop law, the
    inflow condition, and the leaf resistance BCs.  Used as a cross-check
    oracle for the constrained-optimization engine.
    """
    vids = sorted(network.vessels)
    nv = len(vids)
    iq = {vid: i for i, vid in enumerate(vids)}
    ip = {vid: nv + i for i, vid in enumerate(vids)}
    root = network.inflow_bc.vessel_id
    if inflow is None:
        inflow = network.inflow_bc.steady_flow()
    leaf_bcs = {bc.vessel_id: bc for bc in network.boundary_conditions
                if bc.kind == "RESISTANCE"}

    def equations(x):
        res = []
        res.append(x[iq[root]] - inflow)
        for j in network.junctions:
            qj = x[iq[j.inlet_vessel]]
            res.append(qj - sum(x[iq[o.vessel_id]] for o in j.outlets))
            for o in j.outlets:
                c = o.coefficients
                q = x[iq[o.vessel_id]]
                drop = c.r_lin * q + c.quad() * q * abs(q)
                res.append(x[ip[j.inlet_vessel]] - x[ip[o.vessel_id]] - drop)
        for vid, bc in leaf_bcs.items():
            res.append(x[ip[vid]] - bc.r * x[iq[vid]] - bc.pd)
        return res

    x0 = np.zeros(2 * nv)
    x0[:nv] = inflow
    sol = scipy.optimize.root(equations, x0, method="hybr", tol=1e-14)
    # hybr can report "not making progress" once it hits roundoff on stiff
    # (large-resistance) systems; accept any root with a tiny scaled residual
    res = np.abs(equations(sol.x))
    scale = max(1.0, float(np.max(np.abs(sol.x))))
    assert sol.success or float(np.max(res)) / scale < 1e-10, sol.message
    flows = {vid: sol.x[iq[vid]] for vid in vids}
    pressures = {vid: sol.x[ip[vid]] for vid in vids}
    return flows, pressures


@pytest.fixture(scope="session")
def small_cohort():
    """60-junction oracle cohort shared by training-dependent tests."""
    from vascrom.datagen import build_cohort

    dataset, manifest = build_cohort(n=60, seed=7)
    return dataset, manifest


@pytest.fixture(scope="session")
def trained_bundle(small_cohort):
    """Models trained on the small cohort with a legitimate early stop."""
    from vascrom.mlp import ModelBundle, TrainingConfig, train_models

    dataset, _ = small_cohort
    models, report = train_models(
        dataset, config=TrainingConfig(seed=3, stop_val_mse=0.02)
    )
    return ModelBundle.from_training(dataset, models), report
