"""Builders for the molecular generative circuits.

Two variants share one parameter layout:

  - hybrid: 3N+2 qubits; every atom pair reuses one shared 2-qubit bond
    register that is measured and reset between pairs.
  - static: N(N+2) qubits; every pair owns a dedicated bond register
    (no mid-circuit reset).

Register map (hybrid): atom ``i`` occupies qubits ``3i..3i+2``; the shared
bond register is ``(3N, 3N+1)``. Static replaces the shared register with
``(3N+2k, 3N+2k+1)`` for pair index ``k``. Classical slots mirror the qubit
map: atom bits at ``3i..3i+2``, pair ``k`` bits at ``3N+2k, 3N+2k+1``.

Per free atom the block is three Ry layers interleaved with two CNOTs that
both target the register's last qubit, plus (for every free atom after the
first) one controlled Ry whose control is the previous free atom's last
qubit. That gives 9 parameters for the first free atom, 10 for each later
one, and 2 per sampled pair: with all N atoms free the total is N^2+9N-1.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .circuit import (
    And,
    Circuit,
    CNot,
    Conditioned,
    ControlledOnNonZero,
    CRy,
    Gate,
    Measure,
    PauliX,
    Reset,
    Ry,
    SlotsNonZero,
)
from .errors import ConfigError

ATOM_KINDS = ("NONE", "C", "O", "N", "S", "P", "F", "Cl")
BOND_KINDS = ("none", "single", "double", "triple")

VARIANTS = ("hybrid", "static")
CONDITIONINGS = ("early_measured", "quantum_controlled")


@dataclass(frozen=True)
class AtomCodebook:
    """3-bit code -> atom kind; code 0 must be NONE and codes must be distinct."""

    kinds: tuple[str, ...] = ATOM_KINDS

    def __post_init__(self):
        if len(self.kinds) != 8 or len(set(self.kinds)) != 8:
            raise ValueError("atom codebook must map 8 codes to 8 distinct kinds")
        if self.kinds[0] != "NONE":
            raise ValueError("atom code 0 must be NONE")

    def kind(self, code: int) -> str:
        return self.kinds[code]

    def code(self, kind: str) -> int:
        return self.kinds.index(kind)


@dataclass(frozen=True)
class BondCodebook:
    """2-bit code -> bond kind; code 0 must be 'none'."""

    kinds: tuple[str, ...] = BOND_KINDS

    def __post_init__(self):
        if len(self.kinds) != 4 or len(set(self.kinds)) != 4:
            raise ValueError("bond codebook must map 4 codes to 4 distinct kinds")
        if self.kinds[0] != "none":
            raise ValueError("bond code 0 must be 'none'")

    def kind(self, code: int) -> str:
        return self.kinds[code]

    def order(self, code: int) -> int:
        """Bond order for a code; 0 means no bond."""
        return code


DEFAULT_ATOM_CODEBOOK = AtomCodebook()
DEFAULT_BOND_CODEBOOK = BondCodebook()


class Mode(enum.Enum):
    DE_NOVO = "de_novo"
    SCAFFOLD = "scaffold"
    LINKER = "linker"


@dataclass(frozen=True)
class ModeSpec:
    """Which sites are sampled and which are clamped to a fixed fragment."""

    mode: Mode
    fixed_atoms: dict[int, str] = field(default_factory=dict)
    fixed_bonds: dict[tuple[int, int], int] = field(default_factory=dict)

    @staticmethod
    def de_novo() -> "ModeSpec":
        return ModeSpec(Mode.DE_NOVO)

    @staticmethod
    def scaffold(atoms: dict[int, str], bonds: dict[tuple[int, int], int]) -> "ModeSpec":
        return ModeSpec(Mode.SCAFFOLD, dict(atoms), {_norm_pair(p): o for p, o in bonds.items()})

    @staticmethod
    def linker(frag_a: dict[int, str], frag_b: dict[int, str],
               bonds: dict[tuple[int, int], int]) -> "ModeSpec":
        atoms = dict(frag_a)
        overlap = set(frag_a) & set(frag_b)
        if overlap:
            raise ConfigError(f"linker fragments overlap on sites {sorted(overlap)}")
        atoms.update(frag_b)
        spec = ModeSpec(Mode.LINKER, atoms, {_norm_pair(p): o for p, o in bonds.items()})
        object.__setattr__(spec, "_fragments", (frozenset(frag_a), frozenset(frag_b)))
        return spec

    def free_sites(self, n_atoms: int) -> tuple[int, ...]:
        return tuple(s for s in range(n_atoms) if s not in self.fixed_atoms)

    def validate(self, n_atoms: int) -> None:
        for s in self.fixed_atoms:
            if not 0 <= s < n_atoms:
                raise ConfigError(f"fixed atom site {s} out of range for n_atoms={n_atoms}")
            if self.fixed_atoms[s] == "NONE":
                raise ConfigError(f"fixed atom at site {s} cannot be NONE")
        for (i, j), order in self.fixed_bonds.items():
            if i >= j:
                raise ConfigError(f"fixed bond pair must be ordered, got ({i},{j})")
            if i not in self.fixed_atoms or j not in self.fixed_atoms:
                raise ConfigError(f"fixed bond ({i},{j}) touches a non-fixed site")
            if order not in (1, 2, 3):
                raise ConfigError(f"fixed bond ({i},{j}) has bad order {order}")
        if self.mode is Mode.DE_NOVO and (self.fixed_atoms or self.fixed_bonds):
            raise ConfigError("de_novo mode must not fix atoms or bonds")
        if self.mode is Mode.SCAFFOLD and not self.fixed_atoms:
            raise ConfigError("scaffold mode requires a nonempty fixed core")
        if self.mode is Mode.LINKER:
            frags = getattr(self, "_fragments", None)
            if frags is None:
                frags = _split_fragments(self.fixed_atoms, self.fixed_bonds)
            if len(frags) != 2 or not frags[0] or not frags[1]:
                raise ConfigError("linker mode requires exactly two disjoint fixed fragments")
            for (i, j) in self.fixed_bonds:
                same = any(i in f and j in f for f in frags)
                if not same:
                    raise ConfigError(f"fixed bond ({i},{j}) crosses linker fragments")
        if not self.free_sites(n_atoms):
            raise ConfigError("mode leaves no free sites to sample")


def _norm_pair(p: tuple[int, int]) -> tuple[int, int]:
    i, j = p
    return (i, j) if i < j else (j, i)


def _split_fragments(atoms: dict[int, str], bonds: dict[tuple[int, int], int]):
    """Connected components of the fixed subgraph."""
    remaining = set(atoms)
    comps = []
    while remaining:
        seed = min(remaining)
        comp = {seed}
        frontier = [seed]
        while frontier:
            v = frontier.pop()
            for (i, j) in bonds:
                w = j if i == v else i if j == v else None
                if w is not None and w in remaining and w not in comp:
                    comp.add(w)
                    frontier.append(w)
        comps.append(frozenset(comp))
        remaining -= comp
    return comps


# ---------------------------------------------------------------------------
# Scaling formulas
# ---------------------------------------------------------------------------

def param_count(n_atoms: int) -> int:
    """Total parameter slots for N free atoms: N^2 + 9N - 1."""
    _check_n(n_atoms)
    return n_atoms * n_atoms + 9 * n_atoms - 1


def qubit_count(n_atoms: int, variant: str) -> int:
    """hybrid: 3N+2 (shared bond register); static: N(N+2)."""
    _check_n(n_atoms)
    if variant == "hybrid":
        return 3 * n_atoms + 2
    if variant == "static":
        return n_atoms * (n_atoms + 2)
    raise ValueError(f"unknown variant {variant!r}")


def _check_n(n_atoms: int) -> None:
    if n_atoms < 1:
        raise ValueError(f"n_atoms must be >= 1, got {n_atoms}")


def atom_pairs(n_atoms: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n_atoms) for j in range(i + 1, n_atoms)]


# ---------------------------------------------------------------------------
# Parameter layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamLayout:
    """Disjoint slot ranges covering [0, total).

    For a free atom with a 10-slot range the first slot drives its incoming
    controlled Ry; the remaining nine are the three Ry layers in qubit-major
    order. Fixed sites and fixed/fixed pairs carry no slots.
    """

    n_atoms: int
    atom_slots: dict[int, range]
    bond_slots: dict[tuple[int, int], range]
    total: int

    def covers(self) -> bool:
        seen: set[int] = set()
        for r in list(self.atom_slots.values()) + list(self.bond_slots.values()):
            for s in r:
                if s in seen:
                    return False
                seen.add(s)
        return seen == set(range(self.total))


def _sampled_pairs(n_atoms: int, mode: ModeSpec) -> list[tuple[int, int]]:
    """Pairs that get a bond module: at least one free endpoint, not clamped."""
    fixed = mode.fixed_atoms
    out = []
    for (i, j) in atom_pairs(n_atoms):
        if (i, j) in mode.fixed_bonds:
            continue
        if i in fixed and j in fixed:
            continue
        out.append((i, j))
    return out


def build_layout(n_atoms: int, mode: ModeSpec) -> ParamLayout:
    free = mode.free_sites(n_atoms)
    atom_slots: dict[int, range] = {}
    cursor = 0
    for k, site in enumerate(free):
        width = 9 if k == 0 else 10
        atom_slots[site] = range(cursor, cursor + width)
        cursor += width
    bond_slots: dict[tuple[int, int], range] = {}
    for pair in _sampled_pairs(n_atoms, mode):
        bond_slots[pair] = range(cursor, cursor + 2)
        cursor += 2
    return ParamLayout(n_atoms, atom_slots, bond_slots, cursor)


# ---------------------------------------------------------------------------
# Circuit builders
# ---------------------------------------------------------------------------

def build_hybrid_ansatz(
    n_atoms: int,
    mode: ModeSpec | None = None,
    conditioning: str = "early_measured",
    atom_codebook: AtomCodebook = DEFAULT_ATOM_CODEBOOK,
) -> tuple[Circuit, ParamLayout]:
    return _build(n_atoms, mode, conditioning, "hybrid", atom_codebook)


def build_static_ansatz(
    n_atoms: int,
    mode: ModeSpec | None = None,
    atom_codebook: AtomCodebook = DEFAULT_ATOM_CODEBOOK,
) -> tuple[Circuit, ParamLayout]:
    # Static bond registers are never reset, so classical conditioning costs
    # nothing extra and keeps the circuit two-local for the MPS backend.
    return _build(n_atoms, mode, "early_measured", "static", atom_codebook)


def _build(n_atoms, mode, conditioning, variant, atom_codebook) -> tuple[Circuit, ParamLayout]:
    _check_n(n_atoms)
    if conditioning not in CONDITIONINGS:
        raise ValueError(f"unknown conditioning {conditioning!r}")
    if mode is None:
        mode = ModeSpec.de_novo()
    mode.validate(n_atoms)
    layout = build_layout(n_atoms, mode)
    early = conditioning == "early_measured"

    n_qubits = qubit_count(n_atoms, variant)
    pairs = atom_pairs(n_atoms)
    n_classical = 3 * n_atoms + 2 * len(pairs)
    pair_index = {p: k for k, p in enumerate(pairs)}

    gates: list[Gate] = []
    free = mode.free_sites(n_atoms)
    prev_free_last: int | None = None

    for site in range(n_atoms):
        q0 = 3 * site
        if site in mode.fixed_atoms:
            code = atom_codebook.code(mode.fixed_atoms[site])
            for k in range(3):
                if (code >> (2 - k)) & 1:
                    gates.append(PauliX(q0 + k))
        else:
            slots = layout.atom_slots[site]
            it = iter(slots)
            if site != free[0]:
                gates.append(CRy(prev_free_last, q0, next(it)))
            layer = [next(it) for _ in range(9)]
            gates.extend(Ry(q0 + k, layer[k]) for k in range(3))
            gates.append(CNot(q0, q0 + 2))
            gates.extend(Ry(q0 + k, layer[3 + k]) for k in range(3))
            gates.append(CNot(q0 + 1, q0 + 2))
            gates.extend(Ry(q0 + k, layer[6 + k]) for k in range(3))
            prev_free_last = q0 + 2
        if early:
            gates.extend(Measure(q0 + k, 3 * site + k) for k in range(3))

    for (i, j) in _sampled_pairs(n_atoms, mode):
        k = pair_index[(i, j)]
        if variant == "hybrid":
            b0, b1 = 3 * n_atoms, 3 * n_atoms + 1
        else:
            b0, b1 = 3 * n_atoms + 2 * k, 3 * n_atoms + 2 * k + 1
        p = layout.bond_slots[(i, j)]
        body = (Ry(b0, p[0]), Ry(b1, p[1]))
        if early:
            pred = And(
                SlotsNonZero((3 * i, 3 * i + 1, 3 * i + 2)),
                SlotsNonZero((3 * j, 3 * j + 1, 3 * j + 2)),
            )
            gates.append(Conditioned(pred, body + (CNot(b0, b1),)))
        else:
            reg_i = (3 * i, 3 * i + 1, 3 * i + 2)
            reg_j = (3 * j, 3 * j + 1, 3 * j + 2)
            gates.append(ControlledOnNonZero((reg_i, reg_j), body))
            gates.append(CNot(b0, b1))
        slot = 3 * n_atoms + 2 * k
        gates.append(Measure(b0, slot))
        gates.append(Measure(b1, slot + 1))
        if variant == "hybrid":
            gates.append(Reset(b0))
            gates.append(Reset(b1))

    if not early:
        for site in range(n_atoms):
            gates.extend(Measure(3 * site + k, 3 * site + k) for k in range(3))

    circuit = Circuit(n_qubits, layout.total, n_classical, tuple(gates))
    return circuit, layout
