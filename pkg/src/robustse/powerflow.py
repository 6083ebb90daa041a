"""AC power network measurement model.

The measurement function maps bus voltage magnitudes ``E`` and angles
``delta`` to power injections and line flows::

    P_i  = sum_j E_i E_j Y_ij cos(theta_ij + delta_i - delta_j)
    Q_i  = sum_j E_i E_j Y_ij sin(theta_ij + delta_i - delta_j)
    P_ij = E_i E_j Y_ij cos(theta_ij + delta_i - delta_j)
           - E_i^2 Y_ij cos(theta_ij) + E_i^2 Ys_ij cos(thetas_ij)
    Q_ij = (same with sin)

The injection sums include the diagonal term ``j = i`` (``Y_ii``,
``theta_ii``). ``Ys_ij`` is the shunt admittance of line ``i-j`` at its
``i`` end. Angles are radians, magnitudes per-unit.

State layout: all ``k`` magnitudes, then the ``k - 1`` angles of the
non-reference buses in bus order (the reference angle is fixed at 0).

Case files are line-oriented UTF-8 text with ``#`` comments::

    [BUS]
    1 ref
    2
    [LINE]
    # i j Y theta Ysi thetasi Ysj thetasj
    1 2 10.0 1.69 0.05 1.5708 0.05 1.5708
    [DIAG]
    # i Y_ii theta_ii
    1 10.0 -1.45
    [MEAS]
    PI 1
    QF 1 2

Measurement order in ``[MEAS]`` is the order of ``h``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ParseError, ValidationError

__all__ = [
    "KINDS",
    "Measurement",
    "MeasurementPlan",
    "PowerNetwork",
    "StateVector",
    "evaluate_h",
    "flat_start",
    "jacobian",
    "parse_case",
    "read_state",
    "read_vector",
    "serialize_case",
    "write_state",
]

KINDS = ("PI", "QI", "PF", "QF")
SECTIONS = ("BUS", "LINE", "DIAG", "MEAS")


@dataclass(frozen=True)
class Measurement:
    """One metered quantity; bus positions are 0-based indices."""

    kind: str
    i: int
    j: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown measurement kind {self.kind!r}")
        is_flow = self.kind in ("PF", "QF")
        if is_flow and (self.j is None or self.j == self.i):
            raise ValueError("flow measurements need two distinct buses")
        if not is_flow and self.j is not None:
            raise ValueError("injection measurements take a single bus")


@dataclass(frozen=True)
class MeasurementPlan:
    entries: tuple[Measurement, ...]

    def __init__(self, entries: Iterable[Measurement]):
        object.__setattr__(self, "entries", tuple(entries))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, idx):
        return self.entries[idx]

    def validate(self, net: "PowerNetwork"):
        k = net.bus_count
        for pos, meas in enumerate(self.entries):
            for b in (meas.i, meas.j):
                if b is not None and not 0 <= b < k:
                    raise ValidationError(f"measurement {pos}: bus index {b} out of range")
            if meas.j is not None and net.Y[meas.i, meas.j] <= 0:
                raise ValidationError(
                    f"measurement {pos}: no line between buses "
                    f"{net.bus_ids[meas.i]} and {net.bus_ids[meas.j]}"
                )

    def index(self, kind: str, i: int, j: int | None = None) -> int:
        try:
            return self.entries.index(Measurement(kind, i, j))
        except ValueError:
            raise KeyError(f"{kind} {i} {j}" if j is not None else f"{kind} {i}") from None


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class PowerNetwork:
    """Bus admittance data.

    ``Y``/``theta`` hold magnitude and angle of the admittance for every bus
    pair including the diagonal. ``shunt_Y[i, j]``/``shunt_theta[i, j]`` hold
    the shunt admittance of line ``i-j`` at bus ``i``. Arrays are read-only.
    """

    def __init__(self, bus_ids, reference, Y, theta, shunt_Y=None, shunt_theta=None):
        self.bus_ids = tuple(int(b) for b in bus_ids)
        k = len(self.bus_ids)
        self.reference = int(reference)
        self.Y = _frozen(Y)
        self.theta = _frozen(theta)
        self.shunt_Y = _frozen(np.zeros((k, k)) if shunt_Y is None else shunt_Y)
        self.shunt_theta = _frozen(np.zeros((k, k)) if shunt_theta is None else shunt_theta)
        self._validate()

    def _validate(self):
        k = self.bus_count
        if k < 1:
            raise ValidationError("network needs at least one bus")
        if len(set(self.bus_ids)) != k:
            raise ValidationError("duplicate bus id")
        if not 0 <= self.reference < k:
            raise ValidationError("reference bus out of range")
        for name in ("Y", "theta", "shunt_Y", "shunt_theta"):
            arr = getattr(self, name)
            if arr.shape != (k, k):
                raise ValidationError(f"{name} must be {k}x{k}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} has non-finite entries")
        if np.any(self.Y < 0) or np.any(self.shunt_Y < 0):
            raise ValidationError("admittance magnitudes must be nonnegative")
        if not np.array_equal(self.Y > 0, (self.Y > 0).T):
            raise ValidationError("admittance sparsity pattern must be symmetric")

    @property
    def bus_count(self) -> int:
        return len(self.bus_ids)

    @property
    def state_dim(self) -> int:
        return 2 * self.bus_count - 1

    def index_of(self, bus_id: int) -> int:
        try:
            return self.bus_ids.index(int(bus_id))
        except ValueError:
            raise ValidationError(f"unknown bus id {bus_id}") from None

    def lines(self) -> list[tuple[int, int]]:
        """Connected pairs ``(i, j)`` with ``i < j``."""
        k = self.bus_count
        return [(i, j) for i in range(k) for j in range(i + 1, k) if self.Y[i, j] > 0]

    @classmethod
    def from_lines(cls, bus_ids, reference, lines, diag=None) -> "PowerNetwork":
        """Build from line records.

        ``lines`` holds ``(i, j, Y, theta, Ysi, thetasi, Ysj, thetasj)`` with
        0-based indices; ``diag`` maps ``i -> (Y_ii, theta_ii)``.
        """
        k = len(bus_ids)
        Y = np.zeros((k, k))
        th = np.zeros((k, k))
        sY = np.zeros((k, k))
        sth = np.zeros((k, k))
        for i, j, y, t, ysi, tsi, ysj, tsj in lines:
            Y[i, j] = Y[j, i] = y
            th[i, j] = th[j, i] = t
            sY[i, j], sth[i, j] = ysi, tsi
            sY[j, i], sth[j, i] = ysj, tsj
        for i, (y, t) in (diag or {}).items():
            Y[i, i], th[i, i] = y, t
        return cls(bus_ids, reference, Y, th, sY, sth)


@dataclass(frozen=True)
class StateVector:
    """Bus voltages; ``angles`` excludes the reference bus."""

    magnitudes: np.ndarray
    angles: np.ndarray
    reference: int = 0

    def __post_init__(self):
        mags = _frozen(np.ravel(self.magnitudes))
        angs = _frozen(np.ravel(self.angles))
        if angs.size != mags.size - 1:
            raise ValueError("need exactly one fewer angle than magnitudes")
        if not 0 <= self.reference < mags.size:
            raise ValueError("reference bus out of range")
        object.__setattr__(self, "magnitudes", mags)
        object.__setattr__(self, "angles", angs)

    @property
    def dim(self) -> int:
        return self.magnitudes.size + self.angles.size

    def full_angles(self) -> np.ndarray:
        return np.insert(self.angles, self.reference, 0.0)

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.magnitudes, self.angles])

    @classmethod
    def from_array(cls, x, reference: int = 0) -> "StateVector":
        x = np.asarray(x, dtype=float).ravel()
        if x.size % 2 != 1:
            raise ValueError("state dimension must be odd (2k - 1)")
        k = (x.size + 1) // 2
        return cls(x[:k], x[k:], reference)

    @classmethod
    def from_full(cls, magnitudes, angles, reference: int = 0) -> "StateVector":
        """From a full per-bus angle vector, re-referenced to the reference bus."""
        angles = np.asarray(angles, dtype=float)
        angles = angles - angles[reference]
        return cls(magnitudes, np.delete(angles, reference), reference)


def flat_start(net: PowerNetwork) -> StateVector:
    k = net.bus_count
    return StateVector(np.ones(k), np.zeros(k - 1), net.reference)


def _plan_arrays(plan):
    kinds = np.array([KINDS.index(m.kind) for m in plan], dtype=int)
    ii = np.array([m.i for m in plan], dtype=int)
    jj = np.array([m.i if m.j is None else m.j for m in plan], dtype=int)
    return kinds, ii, jj


def _terms(net, E, delta):
    A = net.theta + delta[:, None] - delta[None, :]
    EE = np.outer(E, E) * net.Y
    return A, EE * np.cos(A), EE * np.sin(A)


def evaluate_full(net: PowerNetwork, plan: MeasurementPlan, E, delta) -> np.ndarray:
    """``h`` for explicit per-bus magnitudes and angles (no reference pinning)."""
    E = np.asarray(E, dtype=float)
    delta = np.asarray(delta, dtype=float)
    kinds, ii, jj = _plan_arrays(plan)
    _, C, S = _terms(net, E, delta)
    E2 = E[ii] ** 2
    Yij, thij = net.Y[ii, jj], net.theta[ii, jj]
    sY, sth = net.shunt_Y[ii, jj], net.shunt_theta[ii, jj]
    pf = C[ii, jj] - E2 * Yij * np.cos(thij) + E2 * sY * np.cos(sth)
    qf = S[ii, jj] - E2 * Yij * np.sin(thij) + E2 * sY * np.sin(sth)
    if not len(plan):
        return np.zeros(0)
    return np.choose(kinds, [C.sum(axis=1)[ii], S.sum(axis=1)[ii], pf, qf])


def evaluate_h(net: PowerNetwork, plan: MeasurementPlan, x: StateVector) -> np.ndarray:
    """Measurement vector ``h(x)`` in plan order."""
    _check_state(net, x)
    return evaluate_full(net, plan, x.magnitudes, x.full_angles())


def _check_state(net, x):
    if x.magnitudes.size != net.bus_count:
        raise ValueError(
            f"state has {x.magnitudes.size} buses, network has {net.bus_count}"
        )


def jacobian(net: PowerNetwork, plan: MeasurementPlan, x: StateVector) -> np.ndarray:
    """Analytic ``dh/dx`` (n x (2k-1)); columns follow the state layout."""
    _check_state(net, x)
    k = net.bus_count
    E = x.magnitudes
    delta = x.full_angles()
    A, C, S = _terms(net, E, delta)
    Ycos = net.Y * np.cos(A)
    Ysin = net.Y * np.sin(A)
    J = np.zeros((len(plan), 2 * k))  # magnitudes, then all k angles
    for r, meas in enumerate(plan):
        i = meas.i
        dE = J[r, :k]
        dd = J[r, k:]
        if meas.kind == "PI":
            dE += E[i] * Ycos[i]
            dE[i] += Ycos[i] @ E
            dd += S[i]
            dd[i] -= S[i].sum()
        elif meas.kind == "QI":
            dE += E[i] * Ysin[i]
            dE[i] += Ysin[i] @ E
            dd -= C[i]
            dd[i] += C[i].sum()
        else:
            j = meas.j
            if meas.kind == "PF":
                line = np.cos(net.theta[i, j])
                shunt = np.cos(net.shunt_theta[i, j])
                coupling, ang = Ycos[i, j], -S[i, j]
            else:
                line = np.sin(net.theta[i, j])
                shunt = np.sin(net.shunt_theta[i, j])
                coupling, ang = Ysin[i, j], C[i, j]
            dE[i] = E[j] * coupling - 2 * E[i] * (net.Y[i, j] * line - net.shunt_Y[i, j] * shunt)
            dE[j] = E[i] * coupling
            dd[i] = ang
            dd[j] = -ang
    return np.delete(J, k + x.reference, axis=1)


# -- case files ---------------------------------------------------------------


def _fields(text):
    if isinstance(text, (bytes, bytearray)):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(1, f"not UTF-8: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _num(tok, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(lineno, f"expected a number, got {tok!r}") from None
    if not math.isfinite(v):
        raise ParseError(lineno, f"non-finite number {tok!r}")
    return v


def _int(tok, lineno):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(lineno, f"expected an integer, got {tok!r}") from None


def parse_case(text: str | bytes) -> tuple[PowerNetwork, MeasurementPlan]:
    """Parse a case file into a network and measurement plan.

    Raises
    ------
    ParseError
        Malformed text (unknown section, wrong field count, bad number).
    ValidationError
        Well-formed text describing an invalid network.
    """
    section = None
    buses: list[tuple[int, int, bool]] = []  # (id, lineno, is_ref)
    lines_raw, diag_raw, meas_raw = [], [], []
    seen = set()
    for lineno, line in _fields(text):
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(lineno, f"bad section header {line!r}")
            section = line[1:-1].strip().upper()
            if section not in SECTIONS:
                raise ParseError(lineno, f"unknown section [{section}]")
            if section in seen:
                raise ParseError(lineno, f"duplicate section [{section}]")
            seen.add(section)
            continue
        if section is None:
            raise ParseError(lineno, "data before first section header")
        tok = line.split()
        if section == "BUS":
            if len(tok) not in (1, 2) or (len(tok) == 2 and tok[1].lower() != "ref"):
                raise ParseError(lineno, "bus rows are 'id' or 'id ref'")
            buses.append((_int(tok[0], lineno), lineno, len(tok) == 2))
        elif section == "LINE":
            if len(tok) != 8:
                raise ParseError(lineno, "line rows need 8 fields: i j Y theta Ysi thetasi Ysj thetasj")
            lines_raw.append(
                (lineno, _int(tok[0], lineno), _int(tok[1], lineno), *(_num(t, lineno) for t in tok[2:]))
            )
        elif section == "DIAG":
            if len(tok) != 3:
                raise ParseError(lineno, "diag rows need 3 fields: i Y_ii theta_ii")
            diag_raw.append((lineno, _int(tok[0], lineno), _num(tok[1], lineno), _num(tok[2], lineno)))
        else:
            kind = tok[0].upper()
            if kind not in KINDS:
                raise ParseError(lineno, f"unknown measurement {tok[0]!r}")
            want = 2 if kind in ("PI", "QI") else 3
            if len(tok) != want:
                raise ParseError(lineno, f"{kind} takes {want - 1} bus id(s)")
            meas_raw.append((lineno, kind, *(_int(t, lineno) for t in tok[1:])))

    if not buses:
        raise ValidationError("case has no buses")
    refs = [b for b in buses if b[2]]
    if len(refs) > 1:
        raise ValidationError(f"line {refs[1][1]}: more than one reference bus")
    ids = sorted(b[0] for b in buses)
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate bus id")
    pos = {b: n for n, b in enumerate(ids)}
    ref_id = refs[0][0] if refs else buses[0][0]

    def index(bus_id, lineno):
        if bus_id not in pos:
            raise ValidationError(f"line {lineno}: unknown bus id {bus_id}")
        return pos[bus_id]

    line_recs = []
    pairs = set()
    for lineno, a, b, y, t, ya, ta, yb, tb in lines_raw:
        i, j = index(a, lineno), index(b, lineno)
        if i == j:
            raise ValidationError(f"line {lineno}: line endpoints must differ")
        if (min(i, j), max(i, j)) in pairs:
            raise ValidationError(f"line {lineno}: duplicate line {a}-{b}")
        pairs.add((min(i, j), max(i, j)))
        if y <= 0:
            raise ValidationError(f"line {lineno}: line admittance must be positive, got {y}")
        if ya < 0 or yb < 0:
            raise ValidationError(f"line {lineno}: shunt admittance must be nonnegative")
        line_recs.append((i, j, y, t, ya, ta, yb, tb))
    diag = {}
    for lineno, a, y, t in diag_raw:
        i = index(a, lineno)
        if i in diag:
            raise ValidationError(f"line {lineno}: duplicate diagonal entry for bus {a}")
        if y < 0:
            raise ValidationError(f"line {lineno}: admittance must be nonnegative, got {y}")
        diag[i] = (y, t)
    net = PowerNetwork.from_lines(ids, pos[ref_id], line_recs, diag)

    entries = []
    for lineno, kind, *bus in meas_raw:
        i = index(bus[0], lineno)
        j = index(bus[1], lineno) if len(bus) == 2 else None
        if j is not None:
            if i == j:
                raise ValidationError(f"line {lineno}: flow needs two distinct buses")
            if (min(i, j), max(i, j)) not in pairs:
                raise ValidationError(f"line {lineno}: no line between {bus[0]} and {bus[1]}")
        entries.append(Measurement(kind, i, j))
    return net, MeasurementPlan(entries)


def _f(v):
    return repr(float(v))


def serialize_case(net: PowerNetwork, plan: MeasurementPlan) -> str:
    """Canonical case text; ``parse_case`` inverts it exactly."""
    ids = net.bus_ids
    order = sorted(range(net.bus_count), key=lambda n: ids[n])
    buf = io.StringIO()
    buf.write("[BUS]\n")
    for n in order:
        buf.write(f"{ids[n]} ref\n" if n == net.reference else f"{ids[n]}\n")
    buf.write("[LINE]\n")
    recs = []
    for i, j in net.lines():
        a, b = (i, j) if ids[i] < ids[j] else (j, i)
        recs.append((ids[a], ids[b], a, b))
    for ia, ib, a, b in sorted(recs):
        buf.write(
            f"{ia} {ib} {_f(net.Y[a, b])} {_f(net.theta[a, b])} "
            f"{_f(net.shunt_Y[a, b])} {_f(net.shunt_theta[a, b])} "
            f"{_f(net.shunt_Y[b, a])} {_f(net.shunt_theta[b, a])}\n"
        )
    buf.write("[DIAG]\n")
    for n in order:
        if net.Y[n, n] != 0 or net.theta[n, n] != 0:
            buf.write(f"{ids[n]} {_f(net.Y[n, n])} {_f(net.theta[n, n])}\n")
    buf.write("[MEAS]\n")
    for m in plan:
        if m.j is None:
            buf.write(f"{m.kind} {ids[m.i]}\n")
        else:
            buf.write(f"{m.kind} {ids[m.i]} {ids[m.j]}\n")
    return buf.getvalue()


# -- state and measurement vectors ---------------------------------------------


def write_state(net: PowerNetwork, x: StateVector) -> str:
    buf = io.StringIO()
    buf.write("bus,magnitude,angle\n")
    angles = x.full_angles()
    for n, bus in enumerate(net.bus_ids):
        buf.write(f"{bus},{_f(x.magnitudes[n])},{_f(angles[n])}\n")
    return buf.getvalue()


def read_state(net: PowerNetwork, text: str) -> StateVector:
    """Parse ``bus,magnitude,angle`` rows; every bus must appear once."""
    k = net.bus_count
    mags = np.full(k, np.nan)
    angs = np.full(k, np.nan)
    for lineno, line in _fields(text):
        tok = [t.strip() for t in line.split(",")]
        if tok[0].lower() == "bus":
            continue
        if len(tok) != 3:
            raise ParseError(lineno, "state rows are 'bus,magnitude,angle'")
        n = net.index_of(_int(tok[0], lineno))
        if not np.isnan(mags[n]):
            raise ValidationError(f"line {lineno}: bus {tok[0]} listed twice")
        mags[n] = _num(tok[1], lineno)
        angs[n] = _num(tok[2], lineno)
    if np.isnan(mags).any():
        raise ValidationError("state file is missing buses")
    if np.any(mags <= 0):
        raise ValidationError("voltage magnitudes must be positive")
    if angs[net.reference] != 0.0:
        raise ValidationError("reference bus angle must be 0")
    return StateVector(mags, np.delete(angs, net.reference), net.reference)


def read_vector(text: str) -> np.ndarray:
    """One number per line; a non-numeric first row is taken as a header."""
    out = []
    for n, (lineno, line) in enumerate(_fields(text)):
        tok = line.split(",")[-1].strip()
        try:
            out.append(float(tok))
        except ValueError:
            if n == 0:
                continue
            raise ParseError(lineno, f"expected a number, got {tok!r}") from None
    return np.array(out)
