"""Gate-level intermediate representation for parameterized circuits.

A circuit is immutable data: a gate list over indexed qubits with parameter
slots that are bound at simulation time, classical slots written by
mid-circuit measurements, and two grouping constructs for conditional
execution (classical predicate, or quantum control on non-zero registers).

Conventions used throughout the package:
  - Basis index ``i`` encodes qubit ``q`` as bit ``(i >> q) & 1``.
  - A k-qubit register listed as ``(q0, q1, ..)`` reads as a bit string with
    ``q0`` the most significant bit, so register code = sum(bit(qk) << (k-1-j)).

Text serialization (one gate per line, ``#`` comments, blank lines ignored)::

    circuit <n_qubits> <n_params> <n_classical_slots>
    ry <qubit> <param_slot>
    cry <control> <target> <param_slot>
    cnot <control> <target>
    x <qubit>
    measure <qubit> <classical_slot>
    reset <qubit>
    cond <predicate>          # classical condition, body until matching 'end'
      ...
    end
    qctl <q,q,q> <q,q,q>      # quantum condition: every register non-zero
      ...
    end

Predicates are s-expressions: ``(bit <slot> <0|1>)``, ``(nonzero <slot>...)``,
``(and <pred> <pred>)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

from .errors import FormatError


# ---------------------------------------------------------------------------
# Classical predicates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlotEquals:
    slot: int
    value: int

    def slots(self) -> tuple[int, ...]:
        return (self.slot,)

    def evaluate(self, record) -> bool:
        return record[self.slot] == self.value


@dataclass(frozen=True)
class SlotsNonZero:
    """True when at least one of the referenced classical slots holds 1."""

    slot_ids: tuple[int, ...]

    def slots(self) -> tuple[int, ...]:
        return self.slot_ids

    def evaluate(self, record) -> bool:
        return any(record[s] for s in self.slot_ids)


@dataclass(frozen=True)
class And:
    left: "Predicate"
    right: "Predicate"

    def slots(self) -> tuple[int, ...]:
        return self.left.slots() + self.right.slots()

    def evaluate(self, record) -> bool:
        return self.left.evaluate(record) and self.right.evaluate(record)


Predicate = Union[SlotEquals, SlotsNonZero, And]


# ---------------------------------------------------------------------------
# Gates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ry:
    qubit: int
    param_slot: int


@dataclass(frozen=True)
class CRy:
    control: int
    qubit: int
    param_slot: int


@dataclass(frozen=True)
class CNot:
    control: int
    qubit: int


@dataclass(frozen=True)
class PauliX:
    qubit: int


@dataclass(frozen=True)
class Measure:
    qubit: int
    slot: int


@dataclass(frozen=True)
class Reset:
    qubit: int


@dataclass(frozen=True)
class Conditioned:
    """Apply `body` only when the classical predicate holds."""

    condition: Predicate
    body: tuple["Gate", ...]


@dataclass(frozen=True)
class ControlledOnNonZero:
    """Apply `body` on the subspace where every register is not |0..0>.

    The quantum analogue of the non-NONE condition; realized by the dense
    backend as a block application over the predicate-true basis mask.
    """

    registers: tuple[tuple[int, ...], ...]
    body: tuple["Gate", ...]


Gate = Union[Ry, CRy, CNot, PauliX, Measure, Reset, Conditioned, ControlledOnNonZero]


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    n_params: int
    n_classical_slots: int
    gates: tuple[Gate, ...]


def ry_matrix(theta: float) -> np.ndarray:
    """Rotation about Y: [[cos(t/2), -sin(t/2)], [sin(t/2), cos(t/2)]]."""
    if not math.isfinite(theta):
        raise ValueError(f"ry_matrix requires finite angle, got {theta!r}")
    c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------------------
# Walking
# ---------------------------------------------------------------------------

def walk_gates(gates: tuple[Gate, ...]) -> Iterator[Gate]:
    """Yield leaf gates, descending into conditioned groups."""
    for g in gates:
        if isinstance(g, (Conditioned, ControlledOnNonZero)):
            yield from walk_gates(g.body)
        else:
            yield g


def _gate_qubits(g: Gate) -> tuple[int, ...]:
    if isinstance(g, (Ry, PauliX, Measure, Reset)):
        return (g.qubit,)
    if isinstance(g, (CRy, CNot)):
        return (g.control, g.qubit)
    raise TypeError(f"not a leaf gate: {g!r}")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_circuit(c: Circuit) -> ValidationReport:
    """Structural checks; violations are reported as data, never raised."""
    bad: list[str] = []
    written: set[int] = set()
    used_params: set[int] = set()

    def check_qubit(q: int, what: str) -> None:
        if not 0 <= q < c.n_qubits:
            bad.append(f"qubit index out of range: {what} {q} (n_qubits={c.n_qubits})")

    def check_slot(s: int, what: str) -> None:
        if not 0 <= s < c.n_classical_slots:
            bad.append(f"classical slot out of range: {what} {s}")

    def check_param(p: int) -> None:
        if not 0 <= p < c.n_params:
            bad.append(f"param slot out of range: {p} (n_params={c.n_params})")
        else:
            used_params.add(p)

    def visit(gates: tuple[Gate, ...], group_measured_qubits: set[int] | None) -> None:
        for g in gates:
            if isinstance(g, Conditioned):
                for s in g.condition.slots():
                    check_slot(s, "predicate slot")
                    if 0 <= s < c.n_classical_slots and s not in written:
                        bad.append(f"predicate reads unwritten classical slot {s}")
                inner: set[int] = set()
                visit(g.body, inner)
                for q in inner & _quantum_controls(g.body):
                    bad.append(f"conditioned group measures qubit {q} also used as quantum control")
            elif isinstance(g, ControlledOnNonZero):
                for reg in g.registers:
                    for q in reg:
                        check_qubit(q, "control register qubit")
                visit(g.body, group_measured_qubits)
            else:
                for q in _gate_qubits(g):
                    check_qubit(q, "gate qubit")
                if isinstance(g, (CRy, CNot)) and g.control == g.qubit:
                    bad.append(f"control equals target on qubit {g.qubit}")
                if isinstance(g, (Ry, CRy)):
                    check_param(g.param_slot)
                if isinstance(g, Measure):
                    check_slot(g.slot, "measure slot")
                    written.add(g.slot)
                    if group_measured_qubits is not None:
                        group_measured_qubits.add(g.qubit)

    visit(c.gates, None)
    for p in range(c.n_params):
        if p not in used_params:
            bad.append(f"param slot {p} unused")
    return ValidationReport(tuple(bad))


def _quantum_controls(gates: tuple[Gate, ...]) -> set[int]:
    out: set[int] = set()
    for g in walk_gates(gates):
        if isinstance(g, (CRy, CNot)):
            out.add(g.control)
    return out


# ---------------------------------------------------------------------------
# Stats
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CircuitStats:
    gate_count: int
    two_qubit_gate_count: int
    measure_count: int
    depth: int


def circuit_stats(c: Circuit) -> CircuitStats:
    """Leaf-gate counts plus depth.

    Depth is the longest chain of leaf gates linked by a shared qubit or
    classical slot; gates inside a conditioned group additionally depend on
    the group's predicate slots (or control-register qubits).
    """
    gate_count = 0
    two_q = 0
    measures = 0
    level: dict[tuple[str, int], int] = {}
    depth = 0

    def resources(g: Gate, extra: tuple[tuple[str, int], ...]) -> tuple[tuple[str, int], ...]:
        res = [("q", q) for q in _gate_qubits(g)]
        if isinstance(g, Measure):
            res.append(("c", g.slot))
        return tuple(res) + extra

    def visit(gates: tuple[Gate, ...], extra: tuple[tuple[str, int], ...]) -> None:
        nonlocal gate_count, two_q, measures, depth
        for g in gates:
            if isinstance(g, Conditioned):
                visit(g.body, extra + tuple(("c", s) for s in g.condition.slots()))
            elif isinstance(g, ControlledOnNonZero):
                more = tuple(("q", q) for reg in g.registers for q in reg)
                visit(g.body, extra + more)
            else:
                gate_count += 1
                if isinstance(g, (CRy, CNot)):
                    two_q += 1
                if isinstance(g, Measure):
                    measures += 1
                res = resources(g, extra)
                d = 1 + max((level.get(r, 0) for r in res), default=0)
                for r in res:
                    level[r] = d
                depth = max(depth, d)

    visit(c.gates, ())
    return CircuitStats(gate_count, two_q, measures, depth)


# ---------------------------------------------------------------------------
# Text serialization
# ---------------------------------------------------------------------------

def _predicate_to_text(p: Predicate) -> str:
    if isinstance(p, SlotEquals):
        return f"(bit {p.slot} {p.value})"
    if isinstance(p, SlotsNonZero):
        return "(nonzero " + " ".join(str(s) for s in p.slot_ids) + ")"
    if isinstance(p, And):
        return f"(and {_predicate_to_text(p.left)} {_predicate_to_text(p.right)})"
    raise TypeError(f"unknown predicate {p!r}")


def circuit_to_text(c: Circuit) -> str:
    lines = [f"circuit {c.n_qubits} {c.n_params} {c.n_classical_slots}"]

    def emit(gates: tuple[Gate, ...], indent: int) -> None:
        pad = "  " * indent
        for g in gates:
            if isinstance(g, Ry):
                lines.append(f"{pad}ry {g.qubit} {g.param_slot}")
            elif isinstance(g, CRy):
                lines.append(f"{pad}cry {g.control} {g.qubit} {g.param_slot}")
            elif isinstance(g, CNot):
                lines.append(f"{pad}cnot {g.control} {g.qubit}")
            elif isinstance(g, PauliX):
                lines.append(f"{pad}x {g.qubit}")
            elif isinstance(g, Measure):
                lines.append(f"{pad}measure {g.qubit} {g.slot}")
            elif isinstance(g, Reset):
                lines.append(f"{pad}reset {g.qubit}")
            elif isinstance(g, Conditioned):
                lines.append(f"{pad}cond {_predicate_to_text(g.condition)}")
                emit(g.body, indent + 1)
                lines.append(f"{pad}end")
            elif isinstance(g, ControlledOnNonZero):
                regs = " ".join(",".join(str(q) for q in reg) for reg in g.registers)
                lines.append(f"{pad}qctl {regs}")
                emit(g.body, indent + 1)
                lines.append(f"{pad}end")
            else:
                raise TypeError(f"unknown gate {g!r}")

    emit(c.gates, 1)
    return "\n".join(lines) + "\n"


class _PredParser:
    def __init__(self, text: str):
        self.toks = text.replace("(", " ( ").replace(")", " ) ").split()
        self.pos = 0

    def _next(self) -> str:
        if self.pos >= len(self.toks):
            raise FormatError("unexpected end of predicate")
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def parse(self) -> Predicate:
        if self._next() != "(":
            raise FormatError("predicate must start with '('")
        head = self._next()
        if head == "bit":
            slot, value = int(self._next()), int(self._next())
            self._expect(")")
            return SlotEquals(slot, value)
        if head == "nonzero":
            ids = []
            while self.toks[self.pos] != ")":
                ids.append(int(self._next()))
            self._expect(")")
            return SlotsNonZero(tuple(ids))
        if head == "and":
            left = self.parse()
            right = self.parse()
            self._expect(")")
            return And(left, right)
        raise FormatError(f"unknown predicate head {head!r}")

    def _expect(self, tok: str) -> None:
        if self._next() != tok:
            raise FormatError(f"expected {tok!r} in predicate")


def circuit_from_text(text: str) -> Circuit:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith("circuit "):
        raise FormatError("missing 'circuit' header line")
    try:
        _, nq, npar, ncl = lines[0].split()
        header = (int(nq), int(npar), int(ncl))
    except ValueError as exc:
        raise FormatError(f"bad header: {lines[0]!r}") from exc

    pos = 1

    def parse_block(terminated: bool) -> tuple[Gate, ...]:
        nonlocal pos
        out: list[Gate] = []
        while pos < len(lines):
            parts = lines[pos].split(maxsplit=1)
            op = parts[0]
            rest = parts[1] if len(parts) > 1 else ""
            pos += 1
            if op == "end":
                if not terminated:
                    raise FormatError("unmatched 'end'")
                return tuple(out)
            if op == "ry":
                q, p = rest.split()
                out.append(Ry(int(q), int(p)))
            elif op == "cry":
                ctl, q, p = rest.split()
                out.append(CRy(int(ctl), int(q), int(p)))
            elif op == "cnot":
                ctl, q = rest.split()
                out.append(CNot(int(ctl), int(q)))
            elif op == "x":
                out.append(PauliX(int(rest)))
            elif op == "measure":
                q, s = rest.split()
                out.append(Measure(int(q), int(s)))
            elif op == "reset":
                out.append(Reset(int(rest)))
            elif op == "cond":
                pred = _PredParser(rest).parse()
                out.append(Conditioned(pred, parse_block(True)))
            elif op == "qctl":
                regs = tuple(tuple(int(q) for q in grp.split(",")) for grp in rest.split())
                out.append(ControlledOnNonZero(regs, parse_block(True)))
            else:
                raise FormatError(f"unknown opcode {op!r}")
        if terminated:
            raise FormatError("missing 'end'")
        return tuple(out)

    gates = parse_block(False)
    return Circuit(header[0], header[1], header[2], gates)
