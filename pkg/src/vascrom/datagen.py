"""Synthetic junction cohorts: sampling, waveforms, analytic ground truth,
time-series synthesis, and RRI/RI coefficient extraction."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .network import Fluid, InvalidGeometryError
from .nondim import (
    CharacteristicScales,
    CoefficientSet,
    DimensionlessGeometry,
    characteristic_scales,
    fit_znorm,
    apply_znorm,
    nondimensionalize_coeffs,
    redimensionalize_coeffs,
)

INLET_AREA_COHORT = 1.0  # cm^2, fixed for all synthetic junctions
DEFAULT_R_DIST2 = 1e5  # Ba s/cm^3
LAMBDA_FRACTIONS = (0.30, 0.40, 0.50, 0.60, 0.70, 0.80, 0.90)

COEFFICIENT_TAGS = ("rri_rlin", "rri_rquad", "rri_l", "ri_rlin", "ri_l")


class DatagenError(Exception):
    pass


class UnderdeterminedFitError(DatagenError):
    pass


# -- time series ----------------------------------------------------------


@dataclass
class TimeSeries:
    t: np.ndarray
    q: np.ndarray
    dp: np.ndarray
    qdot: Optional[np.ndarray] = None

    def __post_init__(self):
        self.t = np.asarray(self.t, float)
        self.q = np.asarray(self.q, float)
        self.dp = np.asarray(self.dp, float)
        if not (self.t.size == self.q.size == self.dp.size):
            raise DatagenError("t, Q, dP must have equal lengths")
        dt = np.diff(self.t)
        if self.t.size >= 2 and (np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12)):
            raise DatagenError("time grid must be uniform and strictly increasing")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])


def central_difference(q: np.ndarray, dt: float) -> np.ndarray:
    """Interior central differences, one-sided first order at the endpoints."""
    q = np.asarray(q, float)
    if q.size < 3:
        raise DatagenError("need at least 3 samples for differentiation")
    if dt <= 0:
        raise DatagenError("dt must be positive")
    qdot = np.empty_like(q)
    qdot[1:-1] = (q[2:] - q[:-2]) / (2.0 * dt)
    qdot[0] = (q[1] - q[0]) / dt
    qdot[-1] = (q[-1] - q[-2]) / dt
    return qdot


def systolic_waveform(
    re_max: float,
    l_c: float,
    fluid: Fluid,
    period: float = 0.4,
    n_steps: int = 200,
) -> tuple[np.ndarray, np.ndarray]:
    """Half-sine inlet flow over one systolic period.

    Q_max corresponds to plug flow at Reynolds number re_max through a circular
    section of radius l_c: Q_max = Re_max*mu*pi*l_c/(2*rho).
    """
    if re_max < 0 or period <= 0 or l_c <= 0:
        raise DatagenError("need re_max >= 0, period > 0, l_c > 0")
    t = np.linspace(0.0, period, n_steps)
    q_max = re_max * fluid.mu * math.pi * l_c / (2.0 * fluid.rho)
    return t, q_max * np.sin(math.pi * t / period)


def distal_resistance_for_split(
    phi: float, r_dist2: float = DEFAULT_R_DIST2, p_dist: float = 0.0
) -> float:
    """R_dist,1 achieving flow split phi with equal distal pressures."""
    if not (0.0 < phi < 1.0):
        raise DatagenError(f"flow split must lie in (0, 1), got {phi}")
    return (1.0 - phi) / phi * r_dist2


# -- sampling -------------------------------------------------------------


@dataclass(frozen=True)
class SamplingRanges:
    """Min/max of the base dimensionless descriptors (phi_2 = 1 - phi_1)."""

    alpha1: tuple[float, float] = (0.40, 1.2)
    alpha2: tuple[float, float] = (0.37, 1.2)
    lam1: tuple[float, float] = (15.0, 41.0)
    lam2: tuple[float, float] = (16.0, 42.0)
    theta1: tuple[float, float] = (0.05, 1.41)
    theta2: tuple[float, float] = (0.33, 1.51)
    phi1: tuple[float, float] = (0.15, 0.89)
    phi2: tuple[float, float] = (0.10, 0.85)

    SAMPLED = ("alpha1", "alpha2", "lam1", "lam2", "theta1", "theta2", "phi1")

    def __post_init__(self):
        for name in self.SAMPLED + ("phi2",):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise DatagenError(f"range {name}: need min < max")


@dataclass(frozen=True)
class SampledJunction:
    alpha1: float
    alpha2: float
    lam1: float
    lam2: float
    theta1: float
    theta2: float
    phi1: float

    @property
    def phi2(self) -> float:
        return 1.0 - self.phi1

    def geometry(self, outlet: int, lam_override: Optional[float] = None) -> DimensionlessGeometry:
        alphas = (self.alpha1, self.alpha2)
        lams = (self.lam1, self.lam2)
        thetas = (self.theta1, self.theta2)
        phis = (self.phi1, self.phi2)
        other = 1 - outlet
        return DimensionlessGeometry(
            alpha_self=alphas[outlet],
            alpha_other=alphas[other],
            lam_self=lam_override if lam_override is not None else lams[outlet],
            theta_self=thetas[outlet],
            theta_other=thetas[other],
            phi_self=phis[outlet],
        )


def latin_hypercube(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """(n, d) samples in [0, 1) with one sample per stratum in each dimension."""
    u = rng.random((n, d))
    out = np.empty((n, d))
    for j in range(d):
        perm = rng.permutation(n)
        out[:, j] = (perm + u[:, j]) / n
    return out


def sample_geometries(
    n: int, ranges: SamplingRanges = SamplingRanges(), seed: int = 0
) -> list[SampledJunction]:
    if n < 1:
        raise DatagenError("need n >= 1")
    rng = np.random.default_rng(seed)
    unit = latin_hypercube(n, len(SamplingRanges.SAMPLED), rng)
    out = []
    for row in unit:
        vals = {}
        for j, name in enumerate(SamplingRanges.SAMPLED):
            lo, hi = getattr(ranges, name)
            vals[name] = lo + (hi - lo) * row[j]
        out.append(SampledJunction(**vals))
    return out


# -- analytic ground-truth oracle -----------------------------------------

# Constants of the analytic coefficient map standing in for high-fidelity
# ground truth.  Fixed and documented here; do not change without updating
# every frozen expected value in the test suite.
ORACLE_ID = "analytic-rri-v1"
ORACLE_RLIN_LAM = 0.05
ORACLE_RLIN_THETA = 0.2
ORACLE_RQUAD_ALPHA = 0.4
ORACLE_RQUAD_PHI = 0.1
ORACLE_L_LAM = 0.1

# Generous validity box covering all row-level features produced by the
# cohort builder (lambda fractions shrink sampled lambdas to 30%).
ORACLE_BOX = {
    "alpha": (0.30, 1.30),
    "lam": (4.0, 45.0),
    "theta": (0.0, 1.60),
    "phi": (0.05, 0.95),
}


def oracle_coeffs(g: DimensionlessGeometry) -> CoefficientSet:
    """Smooth analytic map from dimensionless geometry to dimensionless RRI
    coefficients; monotone increasing in alpha^-2 and lambda.

    R_lin* = 0.05*alpha^-2*lam + 0.2*theta_1
    R_quad* = 0.4*(alpha^-2 - 1) + 0.1*(phi^-1 - 2)
    L* = 0.1*lam*alpha^-1
    """
    checks = [
        ("alpha", g.alpha_self),
        ("alpha", g.alpha_other),
        ("lam", g.lam_self),
        ("theta", g.theta_self),
        ("theta", g.theta_other),
        ("phi", g.phi_self),
    ]
    for name, val in checks:
        lo, hi = ORACLE_BOX[name]
        if not (lo <= val <= hi):
            raise DatagenError(
                f"geometry outside oracle validity box: {name}={val} not in [{lo}, {hi}]"
            )
    inv_a2 = g.alpha_self**-2
    return CoefficientSet(
        kind="RRI",
        r_lin=ORACLE_RLIN_LAM * inv_a2 * g.lam_self + ORACLE_RLIN_THETA * g.theta_self,
        r_quad=ORACLE_RQUAD_ALPHA * (inv_a2 - 1.0)
        + ORACLE_RQUAD_PHI * (1.0 / g.phi_self - 2.0),
        l=ORACLE_L_LAM * g.lam_self / g.alpha_self,
        dimensionless=True,
    )


# -- synthesis and fitting ------------------------------------------------


def synthesize_timeseries(
    coeffs: CoefficientSet, t: np.ndarray, q: np.ndarray
) -> TimeSeries:
    """Forward-evaluate dP = R_lin*Q + R_quad*Q^2 + L*Qdot on a uniform grid."""
    t = np.asarray(t, float)
    q = np.asarray(q, float)
    if t.size < 3:
        raise DatagenError("need at least 3 samples")
    dt = t[1] - t[0]
    qdot = central_difference(q, dt)
    dp = coeffs.r_lin * q + coeffs.quad() * q**2 + coeffs.l * qdot
    return TimeSeries(t=t, q=q, dp=dp, qdot=qdot)


_RRI_COLUMNS = ("Q", "Q^2", "Qdot")
_RI_COLUMNS = ("Q", "Qdot")


def _lstsq_fit(series: TimeSeries, columns: tuple[str, ...]) -> np.ndarray:
    qdot = series.qdot if series.qdot is not None else central_difference(series.q, series.dt)
    cols = {"Q": series.q, "Q^2": series.q**2, "Qdot": qdot}
    a = np.column_stack([cols[c] for c in columns])
    # Column scaling keeps the rank check meaningful across units.
    scale = np.linalg.norm(a, axis=0)
    if np.any(scale == 0):
        bad = columns[int(np.argmax(scale == 0))]
        raise UnderdeterminedFitError(f"design matrix column {bad!r} is identically zero")
    a_s = a / scale
    u, s, vt = np.linalg.svd(a_s, full_matrices=False)
    if s[-1] < 1e-10 * s[0]:
        direction = columns[int(np.argmax(np.abs(vt[-1])))]
        raise UnderdeterminedFitError(
            f"rank-deficient design matrix; deficient direction dominated by {direction!r}"
        )
    coef_s = vt.T @ ((u.T @ series.dp) / s)
    return coef_s / scale


def fit_rri(series: TimeSeries) -> CoefficientSet:
    c = _lstsq_fit(series, _RRI_COLUMNS)
    return CoefficientSet(kind="RRI", r_lin=c[0], r_quad=c[1], l=c[2])


def fit_ri(series: TimeSeries) -> CoefficientSet:
    c = _lstsq_fit(series, _RI_COLUMNS)
    return CoefficientSet(kind="RI", r_lin=c[0], l=c[1])


def r_squared(series: TimeSeries, coeffs: CoefficientSet) -> float:
    qdot = series.qdot if series.qdot is not None else central_difference(series.q, series.dt)
    pred = coeffs.r_lin * series.q + coeffs.quad() * series.q**2 + coeffs.l * qdot
    ss_tot = float(np.sum((series.dp - series.dp.mean()) ** 2))
    if ss_tot == 0:
        raise DatagenError("zero-variance dP; R^2 undefined")
    ss_res = float(np.sum((series.dp - pred) ** 2))
    return 1.0 - ss_res / ss_tot


# -- CSV ingestion --------------------------------------------------------


def ingest_timeseries_csv(path) -> TimeSeries:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t", "Q", "dP"]:
            raise DatagenError(f"{path}: expected header 't,Q,dP', got {header}")
        rows = []
        for i, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DatagenError(f"{path}:{i}: expected 3 columns")
            try:
                rows.append([float(x) for x in row])
            except ValueError as e:
                raise DatagenError(f"{path}:{i}: non-numeric cell") from e
    if not rows:
        raise DatagenError(f"{path}: no data rows")
    arr = np.array(rows)
    return TimeSeries(t=arr[:, 0], q=arr[:, 1], dp=arr[:, 2])


def write_timeseries_csv(series: TimeSeries, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "Q", "dP"])
        for t, q, dp in zip(series.t, series.q, series.dp):
            w.writerow([repr(float(t)), repr(float(q)), repr(float(dp))])


# -- cohort building ------------------------------------------------------


@dataclass(frozen=True)
class WaveformConfig:
    re_max: float = 5500.0
    period: float = 0.4
    n_steps: int = 200


def build_cohort(
    n: int,
    ranges: SamplingRanges = SamplingRanges(),
    waveform: WaveformConfig = WaveformConfig(),
    seed: int = 0,
    fluid: Fluid = Fluid(),
    noise_sigma: float = 0.0,
    re_c: Optional[float] = None,
):
    """Sample n junctions and extract 14 training rows each (2 outlets x 7
    outlet-length fractions).  Returns (TrainingDataset, manifest dict).
    """
    from .mlp import TrainingDataset  # deferred, avoids import cycle
    from .nondim import DEFAULT_RE_C

    if re_c is None:
        re_c = DEFAULT_RE_C
    junctions = sample_geometries(n, ranges, seed)
    l_c = math.sqrt(INLET_AREA_COHORT / math.pi)
    scales = characteristic_scales(l_c, fluid, re_c)
    t, q_inlet = systolic_waveform(
        waveform.re_max, l_c, fluid, waveform.period, waveform.n_steps
    )
    noise_seeds = np.random.SeedSequence(seed).spawn(len(junctions))

    features = []
    targets: dict[str, list[float]] = {tag: [] for tag in COEFFICIENT_TAGS}
    for jidx, junc in enumerate(junctions):
        noise_rng = np.random.default_rng(noise_seeds[jidx])
        for outlet in (0, 1):
            lam_total = (junc.lam1, junc.lam2)[outlet]
            phi = (junc.phi1, junc.phi2)[outlet]
            q_out = phi * q_inlet
            for frac in LAMBDA_FRACTIONS:
                g = junc.geometry(outlet, lam_override=frac * lam_total)
                truth = oracle_coeffs(g)
                dim = redimensionalize_coeffs(truth, scales)
                series = synthesize_timeseries(dim, t, q_out)
                if noise_sigma > 0:
                    series = TimeSeries(
                        t=series.t,
                        q=series.q,
                        dp=series.dp + noise_rng.normal(0.0, noise_sigma, series.dp.size),
                        qdot=series.qdot,
                    )
                rri = nondimensionalize_coeffs(fit_rri(series), scales)
                ri = nondimensionalize_coeffs(fit_ri(series), scales)
                features.append(g.vector())
                targets["rri_rlin"].append(rri.r_lin)
                targets["rri_rquad"].append(rri.r_quad)
                targets["rri_l"].append(rri.l)
                targets["ri_rlin"].append(ri.r_lin)
                targets["ri_l"].append(ri.l)

    x = np.array(features)
    y = {tag: np.array(v) for tag, v in targets.items()}

    n_rows = x.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5F17]))
    perm = rng.permutation(n_rows)
    n_train = int(round(0.9 * n_rows))
    train_idx, val_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])

    input_stats = fit_znorm(x[train_idx], names=DimensionlessGeometry.FEATURE_NAMES)
    target_stats = {tag: fit_znorm(y[tag][train_idx]) for tag in COEFFICIENT_TAGS}
    xz = apply_znorm(x, input_stats)
    yz = {tag: apply_znorm(y[tag], target_stats[tag]).ravel() for tag in COEFFICIENT_TAGS}

    ranges_obs = {
        name: (float(x[:, i].min()), float(x[:, i].max()))
        for i, name in enumerate(DimensionlessGeometry.FEATURE_NAMES)
    }
    dataset = TrainingDataset(
        inputs=xz,
        targets=yz,
        input_stats=input_stats,
        target_stats=target_stats,
        train_idx=train_idx,
        val_idx=val_idx,
        feature_ranges=ranges_obs,
        re_c=re_c,
    )
    manifest = {
        "n_junctions": n,
        "n_rows": n_rows,
        "seed": seed,
        "oracle": ORACLE_ID,
        "re_c": re_c,
        "ranges": {name: list(getattr(ranges, name)) for name in SamplingRanges.SAMPLED},
        "waveform": asdict(waveform),
        "noise_sigma": noise_sigma,
        "lambda_fractions": list(LAMBDA_FRACTIONS),
    }
    return dataset, manifest
