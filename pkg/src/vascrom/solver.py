"""Solution engines for 0D networks.

Two engines:
  * standard: per-vessel R/L/C elements with zero-pressure-drop junctions,
    solved by Newton iteration (backward Euler in time);
  * rri / ri: vessels act as wires, junctions carry fitted/predicted
    coefficients, solved as an equality-constrained least-squares problem.
    All constraints (mass conservation, wire continuity, boundary conditions)
    are linear, so they are eliminated exactly through a null-space
    parametrization and the junction residuals are minimized over the
    feasible affine subspace.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.optimize

from .network import VascularNetwork


class SolverError(Exception):
    pass


class ConvergenceError(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    mode: str = "steady"  # "steady" | "transient"
    dt: float = 1e-3
    n_steps: int = 100
    newton_tol: float = 1e-10  # residual inf-norm
    max_iterations: int = 50
    constraint_tol: float = 1e-8
    stationarity_tol: float = 1e-6

    def __post_init__(self):
        if self.mode not in ("steady", "transient"):
            raise SolverError(f"unknown mode {self.mode!r}")
        if self.mode == "transient" and (self.dt <= 0 or self.n_steps < 1):
            raise SolverError("transient mode needs dt > 0 and n_steps >= 1")
        if self.newton_tol <= 0 or self.constraint_tol <= 0 or self.stationarity_tol <= 0:
            raise SolverError("tolerances must be positive")


class VarIndex:
    """Maps (vessel, quantity) to a position in the unknown vector.

    Quantities per vessel: p_in, p_out, q_in, q_out.
    """

    QUANTITIES = ("p_in", "p_out", "q_in", "q_out")

    def __init__(self, network: VascularNetwork):
        self.vessel_ids = sorted(network.vessels)
        self.index = {
            (vid, q): 4 * i + k
            for i, vid in enumerate(self.vessel_ids)
            for k, q in enumerate(self.QUANTITIES)
        }
        self.n = 4 * len(self.vessel_ids)

    def __call__(self, vessel_id: str, quantity: str) -> int:
        return self.index[(vessel_id, quantity)]


@dataclass
class Solution:
    times: np.ndarray
    states: np.ndarray  # (n_times, n_vars)
    index: VarIndex
    network: VascularNetwork
    engine: str
    config: SolverConfig
    diagnostics: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def p(self, vessel_id: str, end: str = "in") -> np.ndarray:
        return self.states[:, self.index(vessel_id, f"p_{end}")]

    def q(self, vessel_id: str, end: str = "in") -> np.ndarray:
        return self.states[:, self.index(vessel_id, f"q_{end}")]

    @property
    def inlet_pressure(self) -> np.ndarray:
        return self.p(self.network.inflow_bc.vessel_id, "in")


def _inflow_at(network: VascularNetwork, t: float) -> float:
    bc = network.inflow_bc
    if isinstance(bc.value, tuple):
        ts, qs = bc.value
        return float(np.interp(t, ts, qs))
    return float(bc.value)


def mass_conservation_error(solution: Solution) -> float:
    """Largest junction or vessel mass-balance violation over all stored states."""
    net, idx = solution.network, solution.index
    worst = 0.0
    for x in solution.states:
        for vid in net.vessels:
            worst = max(worst, abs(x[idx(vid, "q_in")] - x[idx(vid, "q_out")]))
        for j in net.junctions:
            q = x[idx(j.inlet_vessel, "q_out")]
            for o in j.outlets:
                q -= x[idx(o.vessel_id, "q_in")]
            worst = max(worst, abs(q))
    return worst


# -- standard engine ------------------------------------------------------


def assemble_standard_residual(
    network: VascularNetwork,
    state: np.ndarray,
    state_prev: Optional[np.ndarray] = None,
    dt: Optional[float] = None,
    inflow: Optional[float] = None,
    index: Optional[VarIndex] = None,
) -> np.ndarray:
    """Residual of the standard 0D equations.  dt=None means steady
    (all time derivatives zero); otherwise backward differences against
    state_prev.
    """
    idx = index or VarIndex(network)
    r, _ = _standard_system(network, state, state_prev, dt, inflow, idx, want_jac=False)
    return r


def _standard_system(network, x, x_prev, dt, inflow, idx, want_jac=True):
    fluid = network.fluid
    if inflow is None:
        inflow = network.inflow_bc.steady_flow()
    n = idx.n
    eq = 0

    def deriv(i):
        if dt is None:
            return 0.0
        return (x[i] - x_prev[i]) / dt

    ddx = 0.0 if dt is None else 1.0 / dt

    n_eq = (
        2 * len(idx.vessel_ids)
        + 3 * len(network.junctions)
        + 1
        + sum(1 for b in network.boundary_conditions if b.kind == "RESISTANCE")
    )
    res = np.zeros(n_eq)
    jac = np.zeros((n_eq, n)) if want_jac else None

    for vid in idx.vessel_ids:
        v = network.vessels[vid]
        R, L = v.elements(fluid)
        Rs = v.stenosis_r(fluid)
        C = v.capacitance
        ip_in, ip_out = idx(vid, "p_in"), idx(vid, "p_out")
        iq_in, iq_out = idx(vid, "q_in"), idx(vid, "q_out")
        q_in, q_out = x[iq_in], x[iq_out]
        pdot_in = deriv(ip_in)
        qdot_in = deriv(iq_in)
        qdot_out = deriv(iq_out)

        # Eq 1: Q_in - Q_out = C (Pdot_in + R Qdot_in + 2 Rs |Q_in| Qdot_in)
        res[eq] = q_in - q_out - C * (pdot_in + R * qdot_in + 2 * Rs * abs(q_in) * qdot_in)
        if want_jac:
            jac[eq, iq_in] = 1.0 - C * (
                R * ddx + 2 * Rs * (np.sign(q_in) * qdot_in + abs(q_in) * ddx)
            )
            jac[eq, iq_out] = -1.0
            jac[eq, ip_in] = -C * ddx
        eq += 1

        # Eq 2: P_in - P_out = R Q_in + Rs Q_in |Q_in| + L Qdot_out
        res[eq] = x[ip_in] - x[ip_out] - R * q_in - Rs * q_in * abs(q_in) - L * qdot_out
        if want_jac:
            jac[eq, ip_in] = 1.0
            jac[eq, ip_out] = -1.0
            jac[eq, iq_in] = -R - 2 * Rs * abs(q_in)
            jac[eq, iq_out] = -L * ddx
        eq += 1

    for j in network.junctions:
        i_qout = idx(j.inlet_vessel, "q_out")
        i_pout = idx(j.inlet_vessel, "p_out")
        res[eq] = x[i_qout]
        if want_jac:
            jac[eq, i_qout] = 1.0
        for o in j.outlets:
            res[eq] -= x[idx(o.vessel_id, "q_in")]
            if want_jac:
                jac[eq, idx(o.vessel_id, "q_in")] = -1.0
        eq += 1
        for o in j.outlets:
            i_pin = idx(o.vessel_id, "p_in")
            res[eq] = x[i_pout] - x[i_pin]
            if want_jac:
                jac[eq, i_pout] = 1.0
                jac[eq, i_pin] = -1.0
            eq += 1

    root = network.inflow_bc.vessel_id
    res[eq] = x[idx(root, "q_in")] - inflow
    if want_jac:
        jac[eq, idx(root, "q_in")] = 1.0
    eq += 1

    for bc in network.boundary_conditions:
        if bc.kind != "RESISTANCE":
            continue
        ip, iq = idx(bc.vessel_id, "p_out"), idx(bc.vessel_id, "q_out")
        res[eq] = x[ip] - bc.r * x[iq] - bc.pd
        if want_jac:
            jac[eq, ip] = 1.0
            jac[eq, iq] = -bc.r
        eq += 1

    return res, jac


def _scaled_norm(res, jac, x):
    # residual relative to the magnitude of each equation's own terms, so
    # convergence is meaningful across the Ba-vs-cm^3/s magnitude spread
    scale = np.maximum(1.0, np.abs(jac) @ np.abs(x))
    return float(np.max(np.abs(res) / scale))


def _newton(network, x0, x_prev, dt, inflow, idx, config):
    x = x0.copy()
    for it in range(config.max_iterations):
        res, jac = _standard_system(network, x, x_prev, dt, inflow, idx)
        norm = _scaled_norm(res, jac, x)
        if norm <= config.newton_tol:
            return x, {"iterations": it, "residual_norm": norm}
        try:
            dx = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError as e:
            raise ConvergenceError(f"singular Jacobian at iteration {it}") from e
        x = x + dx
    res, jac = _standard_system(network, x, x_prev, dt, inflow, idx)
    norm = _scaled_norm(res, jac, x)
    if norm <= config.newton_tol:
        return x, {"iterations": config.max_iterations, "residual_norm": norm}
    raise ConvergenceError(
        f"Newton did not converge in {config.max_iterations} iterations "
        f"(scaled residual inf-norm {norm:.3e})"
    )


def _standard_initial_guess(network, idx, inflow):
    x = np.zeros(idx.n)
    for vid in idx.vessel_ids:
        x[idx(vid, "q_in")] = inflow
        x[idx(vid, "q_out")] = inflow
    return x


def solve_steady_standard(
    network: VascularNetwork, config: SolverConfig = SolverConfig()
) -> Solution:
    idx = VarIndex(network)
    inflow = network.inflow_bc.steady_flow()
    x0 = _standard_initial_guess(network, idx, inflow)
    x, diag = _newton(network, x0, None, None, inflow, idx, config)
    return Solution(
        times=np.array([0.0]),
        states=x[None, :],
        index=idx,
        network=network,
        engine="standard",
        config=config,
        diagnostics=[diag],
    )


def solve_transient_standard(
    network: VascularNetwork, config: SolverConfig
) -> Solution:
    if config.mode != "transient":
        raise SolverError("config.mode must be 'transient'")
    idx = VarIndex(network)
    times = config.dt * np.arange(config.n_steps + 1)
    steady_cfg = SolverConfig(
        mode="steady",
        newton_tol=config.newton_tol,
        max_iterations=config.max_iterations,
    )
    inflow0 = _inflow_at(network, times[0])
    x0 = _standard_initial_guess(network, idx, inflow0)
    x, diag0 = _newton(network, x0, None, None, inflow0, idx, steady_cfg)
    states = [x]
    diags = [diag0]
    for k in range(1, len(times)):
        inflow = _inflow_at(network, times[k])
        prev = states[-1]
        try:
            x, diag = _newton(network, prev, prev, config.dt, inflow, idx, config)
        except ConvergenceError as e:
            raise ConvergenceError(f"step {k} (t={times[k]:.6g}): {e}") from e
        states.append(x)
        diags.append(diag)
    return Solution(
        times=times,
        states=np.array(states),
        index=idx,
        network=network,
        engine="standard",
        config=config,
        diagnostics=diags,
    )


# -- RRI / RI optimization engine -----------------------------------------


class _OptProblem:
    """Linear constraints + junction residuals for one network/engine pair."""

    def __init__(self, network: VascularNetwork, engine: str):
        if engine not in ("rri", "ri"):
            raise SolverError(f"unknown optimization engine {engine!r}")
        self.network = network
        self.engine = engine
        self.idx = VarIndex(network)
        self.outlets = []
        for j in network.junctions:
            for o in j.outlets:
                if o.coefficients is None:
                    raise SolverError(
                        f"junction {j.id}: outlet {o.vessel_id} has no coefficients"
                    )
                if o.flow_split is None:
                    raise SolverError(
                        f"junction {j.id}: outlet {o.vessel_id} has no flow split"
                    )
                self.outlets.append((j, o))
        self.a, self.b_template, self.inflow_row = self._constraints()
        self.set_variable_scales(1.0, 1.0)

    def set_variable_scales(self, q_var: float, p_var: float) -> None:
        """Column-scale the unknowns so pressure and flow directions are
        comparable in the reduced least-squares problem; without this the
        optimizer stalls far from the attainable objective on deep trees."""
        d = np.ones(self.idx.n)
        for vid in self.idx.vessel_ids:
            d[self.idx(vid, "p_in")] = p_var
            d[self.idx(vid, "p_out")] = p_var
            d[self.idx(vid, "q_in")] = q_var
            d[self.idx(vid, "q_out")] = q_var
        self.d = d
        self.null = scipy.linalg.null_space(self.a * d[None, :])

    def _constraints(self):
        idx = self.idx
        net = self.network
        rows, rhs = [], []

        def add(coeffs: dict[int, float], b: float):
            row = np.zeros(idx.n)
            for i, c in coeffs.items():
                row[i] = c
            rows.append(row)
            rhs.append(b)

        for vid in idx.vessel_ids:
            add({idx(vid, "q_in"): 1.0, idx(vid, "q_out"): -1.0}, 0.0)
            add({idx(vid, "p_in"): 1.0, idx(vid, "p_out"): -1.0}, 0.0)
        for j in net.junctions:
            coeffs = {idx(j.inlet_vessel, "q_out"): 1.0}
            for o in j.outlets:
                coeffs[idx(o.vessel_id, "q_in")] = -1.0
            add(coeffs, 0.0)
        root = net.inflow_bc.vessel_id
        inflow_row = len(rows)
        add({idx(root, "q_in"): 1.0}, 0.0)  # rhs patched per step
        for bc in net.boundary_conditions:
            if bc.kind != "RESISTANCE":
                continue
            add(
                {idx(bc.vessel_id, "p_out"): 1.0, idx(bc.vessel_id, "q_out"): -bc.r},
                bc.pd,
            )
        return np.array(rows), np.array(rhs), inflow_row

    def rhs(self, inflow: float) -> np.ndarray:
        b = self.b_template.copy()
        b[self.inflow_row] = inflow
        return b

    def residuals(self, x, q_prev, dt, q_scale):
        """Objective residual vector and its Jacobian w.r.t. x."""
        idx = self.idx
        m = 2 * len(self.outlets)
        r = np.zeros(m)
        jac = np.zeros((m, idx.n))
        use_quad = self.engine == "rri"
        k = 0
        for j, o in self.outlets:
            c = o.coefficients
            rq = c.quad() if use_quad else 0.0
            i_pin = idx(j.inlet_vessel, "p_out")  # junction inlet pressure
            i_pout = idx(o.vessel_id, "p_in")
            i_q = idx(o.vessel_id, "q_in")
            i_qj = idx(j.inlet_vessel, "q_out")
            q = x[i_q]
            qdot = 0.0 if dt is None else (q - q_prev[i_q]) / dt
            dqdot = 0.0 if dt is None else 1.0 / dt
            dp_model = c.r_lin * q + rq * q * q + c.l * qdot
            r[k] = (x[i_pin] - x[i_pout] - dp_model) / q_scale**2
            jac[k, i_pin] = 1.0 / q_scale**2
            jac[k, i_pout] = -1.0 / q_scale**2
            jac[k, i_q] = -(c.r_lin + 2 * rq * q + c.l * dqdot) / q_scale**2
            k += 1
            r[k] = (o.flow_split * x[i_qj] - q) / q_scale
            jac[k, i_qj] = o.flow_split / q_scale
            jac[k, i_q] = -1.0 / q_scale
            k += 1
        return r, jac

    def solve_step(self, inflow, q_prev, dt, q_scale, config, x_start=None):
        b = self.rhs(inflow)
        a_scaled = self.a * self.d[None, :]
        y_part, *_ = np.linalg.lstsq(a_scaled, b, rcond=None)
        x_part = self.d * y_part
        n_basis = self.null
        if n_basis.shape[1] == 0 or not self.outlets:
            x = x_part
        else:
            if x_start is not None:
                z0 = n_basis.T @ ((x_start - x_part) / self.d)
            else:
                z0 = np.zeros(n_basis.shape[1])

            def fun(z):
                r, _ = self.residuals(
                    x_part + self.d * (n_basis @ z), q_prev, dt, q_scale
                )
                return r

            def jac(z):
                _, jx = self.residuals(
                    x_part + self.d * (n_basis @ z), q_prev, dt, q_scale
                )
                return (jx * self.d[None, :]) @ n_basis

            method = "lm" if 2 * len(self.outlets) >= n_basis.shape[1] else "trf"
            result = scipy.optimize.least_squares(
                fun, z0, jac=jac, method=method, xtol=1e-15, ftol=1e-15, gtol=1e-15,
                max_nfev=2000,
            )
            x = x_part + self.d * (n_basis @ result.x)

        # iterative refinement keeps constraint roundoff at machine level
        for _ in range(2):
            defect = self.a @ x - b
            if np.max(np.abs(defect)) < 1e-14 * max(1.0, np.max(np.abs(b))):
                break
            corr, *_ = np.linalg.lstsq(a_scaled, defect, rcond=None)
            x = x - self.d * corr

        r, jx = self.residuals(x, q_prev, dt, q_scale)
        z_val = float(np.sum(r**2))
        violation = float(np.max(np.abs(self.a @ x - b)))
        grad = (
            2.0 * ((jx * self.d[None, :]) @ n_basis).T @ r
            if n_basis.shape[1]
            else np.zeros(0)
        )
        stationarity = float(np.max(np.abs(grad))) if grad.size else 0.0
        diag = {
            "objective": z_val,
            "constraint_violation": violation,
            "stationarity": stationarity,
        }
        if violation > config.constraint_tol:
            raise ConvergenceError(
                f"constraint violation {violation:.3e} exceeds {config.constraint_tol:.1e}"
            )
        # an objective below tol^2 means normalized residuals below tol, which
        # is convergence regardless of the (scale-sensitive) gradient norm
        if stationarity > config.stationarity_tol and z_val > config.stationarity_tol**2:
            raise ConvergenceError(
                f"stationarity {stationarity:.3e} exceeds {config.stationarity_tol:.1e} "
                f"(objective {z_val:.3e})"
            )
        return x, diag


def _standard_warm_start(network, idx):
    cfg = SolverConfig(mode="steady")
    try:
        sol = solve_steady_standard(network, cfg)
        return sol.states[0]
    except (ConvergenceError, SolverError):
        return None


def solve_opt(
    network: VascularNetwork,
    config: SolverConfig = SolverConfig(),
    engine: str = "rri",
) -> Solution:
    """Constrained solve of an RRI/RI-augmented network.

    Mass conservation, wire continuity, and boundary conditions are satisfied
    to machine precision by construction; the junction pressure and flow-split
    residuals are minimized over the feasible subspace.
    """
    problem = _OptProblem(network, engine)
    warm = _standard_warm_start(network, problem.idx)

    def pick_scales(q_scale):
        p_var = max(1.0, q_scale)
        if warm is not None:
            i_p = [
                problem.idx(vid, q)
                for vid in problem.idx.vessel_ids
                for q in ("p_in", "p_out")
            ]
            p_var = max(p_var, float(np.max(np.abs(warm[i_p]))))
        problem.set_variable_scales(q_scale, p_var)
        return p_var

    if config.mode == "steady":
        inflow = network.inflow_bc.steady_flow()
        q_scale = abs(inflow)
        if q_scale == 0:
            q_scale = 1.0
        p_var = pick_scales(q_scale)
        x, diag = problem.solve_step(inflow, None, None, q_scale, config, x_start=warm)
        return Solution(
            times=np.array([0.0]),
            states=x[None, :],
            index=problem.idx,
            network=network,
            engine=engine,
            config=config,
            diagnostics=[diag],
            meta={"q_scale": q_scale, "p_var": p_var},
        )

    times = config.dt * np.arange(config.n_steps + 1)
    inflows = np.array([_inflow_at(network, t) for t in times])
    q_scale = float(np.max(np.abs(inflows)))  # peak inflow scales the objective
    if q_scale == 0:
        q_scale = 1.0
    p_var = pick_scales(q_scale)
    x, diag = problem.solve_step(inflows[0], None, None, q_scale, config, x_start=warm)
    states, diags = [x], [diag]
    for k in range(1, len(times)):
        prev = states[-1]
        try:
            x, diag = problem.solve_step(
                inflows[k], prev, config.dt, q_scale, config, x_start=prev
            )
        except ConvergenceError as e:
            raise ConvergenceError(f"step {k} (t={times[k]:.6g}): {e}") from e
        states.append(x)
        diags.append(diag)
    return Solution(
        times=times,
        states=np.array(states),
        index=problem.idx,
        network=network,
        engine=engine,
        config=config,
        diagnostics=diags,
        meta={"q_scale": q_scale, "p_var": p_var},
    )


def kkt_report(solution: Solution) -> list[dict]:
    """Recompute per-step objective, constraint violation, and stationarity
    from the stored states (independent of the solve's own diagnostics)."""
    if solution.engine not in ("rri", "ri"):
        raise SolverError("kkt_report applies to optimization-engine solutions")
    problem = _OptProblem(solution.network, solution.engine)
    q_scale = solution.meta["q_scale"]
    problem.set_variable_scales(q_scale, solution.meta.get("p_var", 1.0))
    out = []
    for k, t in enumerate(solution.times):
        x = solution.states[k]
        dt = None if solution.config.mode == "steady" or k == 0 else solution.config.dt
        q_prev = solution.states[k - 1] if dt is not None else None
        inflow = _inflow_at(solution.network, t)
        b = problem.rhs(inflow)
        r, jx = problem.residuals(x, q_prev, dt, q_scale)
        grad = (
            2.0 * ((jx * problem.d[None, :]) @ problem.null).T @ r
            if problem.null.shape[1]
            else np.zeros(0)
        )
        out.append(
            {
                "t": float(t),
                "objective": float(np.sum(r**2)),
                "constraint_violation": float(np.max(np.abs(problem.a @ x - b))),
                "stationarity": float(np.max(np.abs(grad))) if grad.size else 0.0,
            }
        )
    return out


# -- export ---------------------------------------------------------------


def export_solution(solution: Solution, outdir) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "solution.csv", "w", newline="") as f:
        w = csv.writer(f)
        header = ["t"]
        for vid in solution.index.vessel_ids:
            header += [f"P_{vid}_in", f"P_{vid}_out", f"Q_{vid}_in", f"Q_{vid}_out"]
        w.writerow(header)
        for t, x in zip(solution.times, solution.states):
            row = [repr(float(t))]
            for vid in solution.index.vessel_ids:
                row += [
                    repr(float(x[solution.index(vid, q)]))
                    for q in VarIndex.QUANTITIES
                ]
            w.writerow(row)
    with open(outdir / "diagnostics.json", "w") as f:
        json.dump(
            {
                "engine": solution.engine,
                "mode": solution.config.mode,
                "meta": solution.meta,
                "steps": solution.diagnostics,
            },
            f,
            indent=1,
        )
