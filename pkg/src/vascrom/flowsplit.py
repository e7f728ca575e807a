"""A-priori flow-split estimation from downstream effective resistance.

Only vessel Poiseuille resistances and BC resistances enter the recursion;
stenosis and quadratic elements are ignored (a documented approximation).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .network import VascularNetwork


class FlowSplitError(Exception):
    pass


class UnsupportedConfigurationError(FlowSplitError):
    pass


@dataclass
class SplitEstimate:
    # junction id -> (phi_1, phi_2)
    splits: dict[str, tuple[float, float]]
    # vessel id -> effective downstream resistance including the vessel itself
    resistances: dict[str, float]


def effective_resistance(network: VascularNetwork, vessel_id: str) -> float:
    """Series-parallel reduction of the subtree rooted at vessel_id."""
    return _effective(network, vessel_id, set())


def _effective(network: VascularNetwork, vessel_id: str, seen: set[str]) -> float:
    if vessel_id in seen:
        raise FlowSplitError(f"cycle detected at vessel {vessel_id}")
    seen = seen | {vessel_id}
    vessel = network.vessels[vessel_id]
    r_vessel, _ = vessel.elements(network.fluid)
    junction = network.junction_of_inlet(vessel_id)
    if junction is None:
        bc = network.bc_of(vessel_id, "RESISTANCE")
        if bc is None:
            raise UnsupportedConfigurationError(
                f"vessel {vessel_id} does not end in a resistance BC"
            )
        return r_vessel + bc.r
    r1 = _effective(network, junction.outlets[0].vessel_id, seen)
    r2 = _effective(network, junction.outlets[1].vessel_id, seen)
    return r_vessel + 1.0 / (1.0 / r1 + 1.0 / r2)


def estimate_flow_splits(network: VascularNetwork) -> SplitEstimate:
    """phi_1 = R_2/(R_1 + R_2) at each junction; requires zero distal pressures.

    Flow splits are written back onto the junction outlets.
    """
    for bc in network.boundary_conditions:
        if bc.kind == "RESISTANCE" and bc.pd != 0.0:
            raise UnsupportedConfigurationError(
                f"nonzero distal pressure on {bc.vessel_id}; the split estimate "
                "assumes equal (zero) distal pressures"
            )
    splits: dict[str, tuple[float, float]] = {}
    resistances: dict[str, float] = {}
    for junction in network.junctions:
        r1 = effective_resistance(network, junction.outlets[0].vessel_id)
        r2 = effective_resistance(network, junction.outlets[1].vessel_id)
        phi1 = r2 / (r1 + r2)
        splits[junction.id] = (phi1, 1.0 - phi1)
        resistances[junction.outlets[0].vessel_id] = r1
        resistances[junction.outlets[1].vessel_id] = r2
        junction.outlets[0].flow_split = phi1
        junction.outlets[1].flow_split = 1.0 - phi1
    return SplitEstimate(splits=splits, resistances=resistances)


def write_split_report(estimate: SplitEstimate, path) -> None:
    out = {
        "junctions": [
            {"id": jid, "phi_1": phi[0], "phi_2": phi[1]}
            for jid, phi in estimate.splits.items()
        ],
        "effective_resistances": estimate.resistances,
    }
    with open(path, "w") as f:
        json.dump(out, f, indent=1)
