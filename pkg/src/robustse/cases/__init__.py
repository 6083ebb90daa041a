"""Bundled test networks and the synthetic network generator.

``four_bus`` is a small hand-checkable case. ``ring14`` is produced by
:func:`synthetic_case` with its default arguments; the file is kept in the
package so experiments do not depend on the generator staying unchanged.
"""

from __future__ import annotations

import cmath
from importlib import resources

from ..powerflow import Measurement, MeasurementPlan, PowerNetwork, parse_case
from ..rng import RngStream

__all__ = ["BUNDLED", "bundled_text", "load_bundled", "network_from_impedances", "synthetic_case"]

BUNDLED = ("four_bus", "ring14")


def bundled_text(name: str) -> str:
    if name not in BUNDLED:
        raise KeyError(f"no bundled case {name!r}; choose from {BUNDLED}")
    return resources.files(__name__).joinpath(f"{name}.case").read_text(encoding="utf-8")


def load_bundled(name: str):
    return parse_case(bundled_text(name))


def network_from_impedances(bus_ids, reference, branches, bus_shunts=None):
    """Network from series impedance and total line charging per branch.

    ``branches`` holds ``(i, j, r, x, b)`` with 0-based indices. The bus
    admittance matrix is assembled in the usual way (off-diagonal ``-y``,
    diagonal sum of incident ``y + jb/2`` plus any bus shunt susceptance from
    ``bus_shunts``) and stored as magnitude/angle; each line end gets a shunt
    of ``jb/2``.
    """
    k = len(bus_ids)
    diag = [0j] * k
    for i, b in (bus_shunts or {}).items():
        diag[i] += complex(0.0, b)
    lines = []
    for i, j, r, x, b in branches:
        y = 1.0 / complex(r, x)
        off = -y
        half = complex(0.0, b / 2.0)
        diag[i] += y + half
        diag[j] += y + half
        lines.append((i, j, abs(off), cmath.phase(off), abs(half), cmath.phase(half), abs(half), cmath.phase(half)))
    d = {i: (abs(v), cmath.phase(v)) for i, v in enumerate(diag) if v != 0}
    return PowerNetwork.from_lines(bus_ids, reference, lines, d)


def synthetic_case(bus_count: int = 14, chords: int = 6, seed: int = 2011):
    """A meshed test network: a ring plus random chords.

    Series reactance is drawn from U[0.05, 0.25], resistance from
    U[0.1, 0.4] times the reactance, and total line charging from
    U[0.1, 0.4], all per-unit; every third bus carries a shunt capacitor of
    U[0.1, 0.3]. Without shunt susceptance a uniform scaling of all voltage
    magnitudes is nearly unobservable at the flat start. Every bus is metered
    for P and Q injection and every line for P and Q flow at both ends; with
    flows metered at one end only, a handful of corrupted injections is often
    not identifiable by l1 decoding even at the true state.
    """
    if bus_count < 3:
        raise ValueError("need at least 3 buses")
    rng = RngStream(seed, 0)
    pairs = [(i, (i + 1) % bus_count) for i in range(bus_count)]
    present = {tuple(sorted(p)) for p in pairs}
    while len(present) < bus_count + chords:
        i, j = (int(v) for v in rng.choice(bus_count, 2))
        present.add((min(i, j), max(i, j)))
    branches = []
    for i, j in sorted(present):
        x, rr, b = rng.uniform(3)
        x = 0.05 + 0.2 * x
        branches.append((i, j, round(x * (0.1 + 0.3 * rr), 4), round(x, 4), round(0.1 + 0.3 * b, 4)))
    caps = {i: round(0.1 + 0.2 * float(rng.uniform(1)[0]), 4) for i in range(2, bus_count, 3)}
    net = network_from_impedances(range(1, bus_count + 1), 0, branches, caps)
    entries = [Measurement("PI", i) for i in range(bus_count)]
    entries += [Measurement("QI", i) for i in range(bus_count)]
    for i, j in net.lines():
        entries += [Measurement("PF", i, j), Measurement("QF", i, j)]
    for i, j in net.lines():
        entries += [Measurement("PF", j, i), Measurement("QF", j, i)]
    return net, MeasurementPlan(entries)


def _four_bus():
    # line charging and bus capacitors keep the uniform voltage-scale
    # direction well observable from the flat start
    branches = [
        (0, 1, 0.02, 0.06, 0.30),
        (0, 2, 0.08, 0.24, 0.25),
        (1, 2, 0.06, 0.18, 0.20),
        (1, 3, 0.06, 0.18, 0.20),
        (2, 3, 0.04, 0.12, 0.10),
    ]
    caps = {0: 0.2, 1: 0.3, 2: 0.2, 3: 0.3}
    net = network_from_impedances(range(1, 5), 0, branches, caps)
    m = Measurement
    entries = [m("PI", i) for i in range(4)] + [m("QI", i) for i in range(4)]
    for i, j in net.lines():
        entries += [m("PF", i, j), m("QF", i, j)]
    for i, j in net.lines():
        entries += [m("PF", j, i), m("QF", j, i)]
    return net, MeasurementPlan(entries)


def _rounded(net, digits=4):
    r = lambda a: [[round(float(v), digits) for v in row] for row in a]  # noqa: E731
    return PowerNetwork(net.bus_ids, net.reference, r(net.Y), r(net.theta), r(net.shunt_Y), r(net.shunt_theta))


def _regenerate():  # pragma: no cover - maintenance helper
    from ..powerflow import serialize_case

    root = resources.files(__name__)
    net, plan = _four_bus()
    header = "# 4-bus sample: admittances from r, x, b line data, rounded to 4 digits\n"
    (root / "four_bus.case").write_text(header + serialize_case(_rounded(net), plan))
    net, plan = synthetic_case()
    header = "# synthetic 14-bus ring with 6 chords: synthetic_case(14, 6, seed=2011)\n"
    (root / "ring14.case").write_text(header + serialize_case(net, plan))
