"""Regenerate the bundled desk-scale topologies from site coordinates."""
import json
from pathlib import Path

import numpy as np

from madispatch.topology import latency_from_coords

SITES = {
    "Bogota": (4.71, -74.07),
    "Caracas": (10.49, -66.88),
    "Quito": (-0.18, -78.47),
    "Lima": (-12.05, -77.04),
    "Santiago": (-33.45, -70.67),
    "BuenosAires": (-34.60, -58.38),
    "SaoPaulo": (-23.55, -46.63),
    "RioDeJaneiro": (-22.91, -43.17),
}
ACCESS = 0.0005  # s, switch-to-core hop added to every path

OUT = Path(__file__).resolve().parents[1] / "src" / "madispatch" / "data"


def build(name, controllers):
    names = list(SITES)
    coords = [SITES[s] for s in names]
    ctl_coords = [SITES[site] for site, _ in controllers]
    lat = latency_from_coords(ctl_coords, coords) + ACCESS
    sw = latency_from_coords(coords, coords)
    return {
        "name": name,
        "num_switches": len(names),
        "num_controllers": len(controllers),
        "switch_ids": names,
        "controller_ids": [f"C@{site}" for site, _ in controllers],
        "capacities": [float(a) for _, a in controllers],
        "latency": np.round(lat, 7).tolist(),
        "switch_latency": np.round(sw, 7).tolist(),
        "switch_coords": [list(c) for c in coords],
    }


if __name__ == "__main__":
    base = [("Bogota", 7500), ("Santiago", 6000), ("SaoPaulo", 9000)]
    five = base + [("Lima", 6500), ("BuenosAires", 8000)]
    for fname, name, ctl in (("desk_sa8.json", "desk-sa8-3ctl", base),
                             ("desk_sa8_5ctl.json", "desk-sa8-5ctl", five)):
        (OUT / fname).write_text(json.dumps(build(name, ctl), indent=1) + "\n")
