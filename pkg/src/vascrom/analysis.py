"""Post-processing: impedance spectra, pressure errors, depth statistics,
and in-tree coefficient fitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .network import MMHG_TO_BA, VascularNetwork
from .nondim import CoefficientSet
from .solver import Solution, SolverConfig, solve_opt


class AnalysisError(Exception):
    pass


@dataclass
class ImpedanceSpectrum:
    omega: np.ndarray  # rad/s, harmonics of 2*pi/period
    z: np.ndarray  # complex impedance

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.z)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.z)


def impedance(
    q: np.ndarray,
    dp: np.ndarray,
    period: float,
    dt: float,
    floor: float = 1e-10,
) -> ImpedanceSpectrum:
    """Z(w_k) = F(dP)_k / F(Q)_k at harmonics of 2*pi/period.

    Harmonics where |F(Q)| falls below floor*max|F(Q)| are dropped to avoid
    noise amplification.
    """
    q = np.asarray(q, float)
    dp = np.asarray(dp, float)
    if q.size != dp.size or q.size < 2:
        raise AnalysisError("Q and dP must have equal length >= 2")
    duration = q.size * dt
    n_periods = duration / period
    if abs(n_periods - round(n_periods)) > 1e-6:
        raise AnalysisError(
            f"series duration {duration:.6g} is not an integer number of periods"
        )
    n_periods = int(round(n_periods))
    qh = np.fft.rfft(q)
    ph = np.fft.rfft(dp)
    if np.max(np.abs(qh)) == 0:
        raise AnalysisError("all-zero flow signal")
    # harmonics of the fundamental are every n_periods-th rfft bin
    bins = np.arange(0, qh.size, n_periods)
    keep = np.abs(qh[bins]) > floor * np.max(np.abs(qh))
    bins = bins[keep]
    if bins.size == 0:
        raise AnalysisError("no harmonics above the magnitude floor")
    omega = 2.0 * math.pi / period * (bins // n_periods)
    return ImpedanceSpectrum(omega=omega, z=ph[bins] / qh[bins])


def write_impedance_csv(spectrum: ImpedanceSpectrum, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["omega", "re", "im", "mag", "phase"])
        for om, z in zip(spectrum.omega, spectrum.z):
            w.writerow(
                [
                    repr(float(om)),
                    repr(float(z.real)),
                    repr(float(z.imag)),
                    repr(float(abs(z))),
                    repr(float(np.angle(z))),
                ]
            )


def pressure_error(
    solution: Solution,
    reference: Solution,
    datum_pressure: float = 0.0,
) -> dict:
    """Max-over-time inlet pressure error vs a reference solution.

    absolute is in mmHg; relative divides by the reference inlet-pressure
    range above the (distal) datum.  Mean-over-time values are also reported.
    """
    if solution.times.size != reference.times.size or not np.allclose(
        solution.times, reference.times
    ):
        raise AnalysisError("solution and reference time grids do not match")
    p = solution.inlet_pressure
    p_ref = reference.inlet_pressure
    denom = float(np.max(np.abs(p_ref - datum_pressure)))
    if denom == 0:
        raise AnalysisError("reference pressure range is zero; relative error undefined")
    diff = np.abs(p - p_ref)
    return {
        "absolute_mmhg": float(np.max(diff)) / MMHG_TO_BA,
        "relative": float(np.max(diff)) / denom,
        "mean_absolute_mmhg": float(np.mean(diff)) / MMHG_TO_BA,
        "mean_relative": float(np.mean(diff)) / denom,
    }


def depth_statistics(
    network: VascularNetwork,
    solution: Solution,
    reference: Optional[Solution] = None,
    step: int = -1,
) -> list[dict]:
    """Per-junction flow/Reynolds statistics (normalized by tree-inlet values)
    grouped by depth = number of upstream bifurcations."""
    fluid = network.fluid
    x = solution.states[step]
    idx = solution.index
    root = network.inflow_bc.vessel_id
    q0 = x[idx(root, "q_in")]
    r0 = network.vessels[root].radius
    re0 = fluid.rho * (q0 / network.vessels[root].area) * 2 * r0 / fluid.mu
    records = []
    for j in network.junctions:
        v_in = network.vessels[j.inlet_vessel]
        q = x[idx(j.inlet_vessel, "q_in")]
        re = fluid.rho * (q / v_in.area) * 2 * v_in.radius / fluid.mu
        rec = {
            "junction": j.id,
            "depth": network.junction_depth(j),
            "normalized_flow": q / q0 if q0 else float("nan"),
            "normalized_re": re / re0 if re0 else float("nan"),
            "outlet_resistances": {},
        }
        p_in = x[idx(j.inlet_vessel, "p_out")]
        for o in j.outlets:
            dp = p_in - x[idx(o.vessel_id, "p_in")]
            q_out = x[idx(o.vessel_id, "q_in")]
            rec["outlet_resistances"][o.vessel_id] = dp / q_out if q_out else float("nan")
        if reference is not None:
            xr = reference.states[step]
            ir = reference.index
            rec["pressure_error_mmhg"] = (
                abs(x[idx(j.inlet_vessel, "p_in")] - xr[ir(j.inlet_vessel, "p_in")])
                / MMHG_TO_BA
            )
            p_in_r = xr[ir(j.inlet_vessel, "p_out")]
            rec["resistance_error"] = {}
            for o in j.outlets:
                dp_r = p_in_r - xr[ir(o.vessel_id, "p_in")]
                q_r = xr[ir(o.vessel_id, "q_in")]
                r_ref = dp_r / q_r if q_r else float("nan")
                rec["resistance_error"][o.vessel_id] = (
                    rec["outlet_resistances"][o.vessel_id] - r_ref
                )
        records.append(rec)
    return records


def fit_tree_coefficients(
    network: VascularNetwork,
    solutions: list[Solution],
    mode: str = "RRI",
) -> dict[tuple[str, str], CoefficientSet]:
    """Fit steady junction resistances from a sweep of steady solutions.

    RRI: dP = R_lin*Q + R_quad*Q^2 (needs >= 2 solutions);
    RI: dP = R_lin*Q (needs >= 1).  Inductance is neglected (steady data).
    Returns {(junction id, outlet vessel id): CoefficientSet}.
    """
    if mode not in ("RRI", "RI"):
        raise AnalysisError(f"unknown fit mode {mode!r}")
    need = 2 if mode == "RRI" else 1
    if len(solutions) < need:
        raise AnalysisError(f"{mode} fit needs at least {need} steady solutions")
    fits: dict[tuple[str, str], CoefficientSet] = {}
    for j in network.junctions:
        for o in j.outlets:
            qs, dps = [], []
            for sol in solutions:
                x = sol.states[-1]
                idx = sol.index
                qs.append(x[idx(o.vessel_id, "q_in")])
                dps.append(x[idx(j.inlet_vessel, "p_out")] - x[idx(o.vessel_id, "p_in")])
            q = np.array(qs)
            dp = np.array(dps)
            if mode == "RRI":
                a = np.column_stack([q, q**2])
                if np.linalg.matrix_rank(a, tol=1e-10 * np.abs(a).max()) < 2:
                    raise AnalysisError(
                        f"rank-deficient sweep for junction {j.id} outlet {o.vessel_id}"
                    )
                coef, *_ = np.linalg.lstsq(a, dp, rcond=None)
                fits[(j.id, o.vessel_id)] = CoefficientSet(
                    kind="RRI", r_lin=float(coef[0]), r_quad=float(coef[1]), l=0.0
                )
            else:
                if np.all(q == 0):
                    raise AnalysisError(
                        f"zero-flow sweep for junction {j.id} outlet {o.vessel_id}"
                    )
                r_lin = float(np.dot(q, dp) / np.dot(q, q))
                fits[(j.id, o.vessel_id)] = CoefficientSet(kind="RI", r_lin=r_lin, l=0.0)
    return fits


def resolve_with_fits(
    network: VascularNetwork,
    fits: dict[tuple[str, str], CoefficientSet],
    inflows: list[float],
    references: Optional[list[Solution]] = None,
) -> list[dict]:
    """Re-solve the tree with fitted coefficients at each sweep inflow and
    report inlet-pressure errors vs the reference solutions (if given)."""
    from .network import BoundaryCondition
    from .flowsplit import estimate_flow_splits

    engine = "rri" if next(iter(fits.values())).kind == "RRI" else "ri"
    if any(o.flow_split is None for j in network.junctions for o in j.outlets):
        estimate_flow_splits(network)
    for j in network.junctions:
        for o in j.outlets:
            o.coefficients = fits[(j.id, o.vessel_id)]
    rows = []
    original_bcs = network.boundary_conditions
    try:
        for i, q_in in enumerate(inflows):
            network.boundary_conditions = [
                BoundaryCondition(vessel_id=b.vessel_id, kind="FLOW", value=q_in)
                if b.kind == "FLOW"
                else b
                for b in original_bcs
            ]
            sol = solve_opt(network, SolverConfig(mode="steady"), engine=engine)
            row = {"inflow": q_in, "objective": sol.diagnostics[0]["objective"]}
            if references is not None:
                row.update(pressure_error(sol, references[i]))
            rows.append(row)
    finally:
        network.boundary_conditions = original_bcs
    return rows
