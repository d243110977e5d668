"""Decode shot records into molecular graphs and analyze them.

Decoding drops NONE sites (compacting indices), honors a bond code only when
both endpoints are present, and injects fixed scaffold/linker atoms and bonds
before compaction. Validity means nonempty, valence-bounded, and connected;
hydrogens are implicit and fill leftover valence.

Uniqueness counting uses an exact canonical key: iterative color refinement
on (element, neighbor-color/bond-order multiset) with individualization
branching on tied color classes, so equal keys hold iff the labeled graphs
are isomorphic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .ansatz import (
    AtomCodebook,
    BondCodebook,
    DEFAULT_ATOM_CODEBOOK,
    DEFAULT_BOND_CODEBOOK,
    ModeSpec,
    atom_pairs,
)
from .errors import FormatError

DEFAULT_VALENCE = {"C": 4, "N": 3, "O": 2, "S": 6, "P": 5, "F": 1, "Cl": 1}


@dataclass(frozen=True)
class MoleculeGraph:
    atoms: tuple[str, ...]
    bonds: tuple[tuple[int, int, int], ...]  # (i, j, order), i < j
    shot_id: int | None = None


@dataclass(frozen=True)
class ValidationResult:
    valid: bool
    failures: tuple[str, ...]


def decode_shot(
    record: tuple,
    n_atoms: int,
    atom_codebook: AtomCodebook = DEFAULT_ATOM_CODEBOOK,
    bond_codebook: BondCodebook = DEFAULT_BOND_CODEBOOK,
    mode: ModeSpec | None = None,
    shot_id: int | None = None,
) -> MoleculeGraph:
    """record = (atom codes, bond codes in lexicographic pair order)."""
    atom_codes, bond_codes = record
    pairs = atom_pairs(n_atoms)
    if len(atom_codes) != n_atoms or len(bond_codes) != len(pairs):
        raise FormatError(
            f"record shape mismatch: got {len(atom_codes)} atom codes / "
            f"{len(bond_codes)} bond codes for n_atoms={n_atoms}")
    if mode is None:
        mode = ModeSpec.de_novo()

    kinds = [atom_codebook.kind(int(c)) for c in atom_codes]
    for site, kind in mode.fixed_atoms.items():
        kinds[site] = kind

    site_bonds: dict[tuple[int, int], int] = {}
    for k, (i, j) in enumerate(pairs):
        if (i, j) in mode.fixed_bonds:
            continue
        if i in mode.fixed_atoms and j in mode.fixed_atoms:
            continue
        if kinds[i] == "NONE" or kinds[j] == "NONE":
            continue  # codes attached to an absent atom are discarded
        order = bond_codebook.order(int(bond_codes[k]))
        if order:
            site_bonds[(i, j)] = order
    site_bonds.update(mode.fixed_bonds)

    new_index: dict[int, int] = {}
    atoms: list[str] = []
    for site, kind in enumerate(kinds):
        if kind != "NONE":
            new_index[site] = len(atoms)
            atoms.append(kind)
    bonds = tuple(sorted(
        (new_index[i], new_index[j], order) for (i, j), order in site_bonds.items()))
    return MoleculeGraph(tuple(atoms), bonds, shot_id)


def validate(mol: MoleculeGraph, valence: dict[str, int] | None = None) -> ValidationResult:
    """Nonempty, per-atom bond-order sums within valence, and connected."""
    valence = DEFAULT_VALENCE if valence is None else valence
    failures: list[str] = []
    n = len(mol.atoms)
    if n == 0:
        return ValidationResult(False, ("empty_molecule",))

    order_sum = [0] * n
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j, order in mol.bonds:
        order_sum[i] += order
        order_sum[j] += order
        adj[i].append(j)
        adj[j].append(i)
    for i, kind in enumerate(mol.atoms):
        if order_sum[i] > valence[kind]:
            failures.append(f"valence_exceeded:{i}")

    seen = {0}
    frontier = [0]
    while frontier:
        v = frontier.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                frontier.append(w)
    if len(seen) != n:
        failures.append("disconnected")
    return ValidationResult(not failures, tuple(failures))


# ---------------------------------------------------------------------------
# Canonical key
# ---------------------------------------------------------------------------

def canonical_key(mol: MoleculeGraph) -> str:
    n = len(mol.atoms)
    if n == 0:
        return ""
    adj: list[dict[int, int]] = [{} for _ in range(n)]
    for i, j, order in mol.bonds:
        adj[i][j] = order
        adj[j][i] = order

    def refine(colors: list[int]) -> list[int]:
        while True:
            sigs = [
                (colors[v], tuple(sorted((colors[u], o) for u, o in adj[v].items())))
                for v in range(n)
            ]
            rank = {s: k for k, s in enumerate(sorted(set(sigs)))}
            new = [rank[s] for s in sigs]
            if new == colors:
                return colors
            colors = new

    def serialize(colors: list[int]) -> str:
        order = sorted(range(n), key=lambda v: colors[v])
        pos = {v: k for k, v in enumerate(order)}
        atoms = ",".join(mol.atoms[v] for v in order)
        edges = sorted(
            (min(pos[i], pos[j]), max(pos[i], pos[j]), o) for i, j, o in mol.bonds)
        return atoms + "|" + ";".join(f"{a}-{b}:{o}" for a, b, o in edges)

    def search(colors: list[int]) -> str:
        colors = refine(colors)
        cells: dict[int, list[int]] = {}
        for v, c in enumerate(colors):
            cells.setdefault(c, []).append(v)
        target = None
        for c in sorted(cells):
            if len(cells[c]) > 1:
                target = cells[c]
                break
        if target is None:
            return serialize(colors)
        best = None
        for v in target:
            branched = list(colors)
            branched[v] = n  # a fresh color, splitting the cell
            key = search(branched)
            if best is None or key < best:
                best = key
        return best

    elements = sorted(set(mol.atoms))
    init = [elements.index(a) for a in mol.atoms]
    return search(init)


# ---------------------------------------------------------------------------
# SMILES
# ---------------------------------------------------------------------------

_BOND_TEXT = {1: "", 2: "=", 3: "#"}
_ELEMENTS = ("Cl", "C", "O", "N", "S", "P", "F")  # two-letter symbol first


class UnsupportedStructureError(Exception):
    pass


def to_smiles(mol: MoleculeGraph) -> str:
    """Spanning-tree SMILES with ring-closure digits; connected input only."""
    n = len(mol.atoms)
    if n == 0:
        raise UnsupportedStructureError("empty molecule")
    adj: list[dict[int, int]] = [{} for _ in range(n)]
    for i, j, order in mol.bonds:
        adj[i][j] = order
        adj[j][i] = order

    ring_digit: dict[tuple[int, int], int] = {}
    ring_labels: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    next_digit = [1]

    # Depth-first spanning tree; non-tree edges become ring closures.
    tree: list[list[int]] = [[] for _ in range(n)]
    seen = {0}
    parent = {0: -1}

    def explore(v: int) -> None:
        for w in sorted(adj[v]):
            if w not in seen:
                seen.add(w)
                parent[w] = v
                tree[v].append(w)
                explore(w)
            elif parent[v] != w and (min(v, w), max(v, w)) not in ring_digit:
                d = next_digit[0]
                next_digit[0] += 1
                if d > 99:
                    raise UnsupportedStructureError("too many ring closures")
                ring_digit[(min(v, w), max(v, w))] = d
                ring_labels[v].append((d, adj[v][w]))
                ring_labels[w].append((d, adj[v][w]))

    explore(0)
    if len(seen) != n:
        raise UnsupportedStructureError("disconnected molecule")

    def digit_text(d: int) -> str:
        return str(d) if d < 10 else f"%{d:02d}"

    def write(v: int, bond_in: int) -> str:
        out = _BOND_TEXT[bond_in] if bond_in else ""
        out += mol.atoms[v]
        for d, order in sorted(ring_labels[v]):
            out += _BOND_TEXT[order] + digit_text(d)
        children = tree[v]
        for k, w in enumerate(children):
            sub = write(w, adj[v][w])
            if k < len(children) - 1:
                out += "(" + sub + ")"
            else:
                out += sub
        return out

    return write(0, 0)


def parse_smiles(text: str) -> MoleculeGraph:
    """Minimal reader for this package's own output (round-trip checks)."""
    atoms: list[str] = []
    bonds: list[tuple[int, int, int]] = []
    stack: list[int] = []
    open_rings: dict[int, tuple[int, int]] = {}
    prev = -1
    pending = 1
    pos = 0
    while pos < len(text):
        ch = text[pos]
        if ch == "(":
            stack.append(prev)
            pos += 1
        elif ch == ")":
            if not stack:
                raise FormatError("unbalanced ')' in SMILES")
            prev = stack.pop()
            pos += 1
        elif ch == "=":
            pending = 2
            pos += 1
        elif ch == "#":
            pending = 3
            pos += 1
        elif ch == "-":
            pending = 1
            pos += 1
        elif ch.isdigit() or ch == "%":
            if ch == "%":
                digit = int(text[pos + 1:pos + 3])
                pos += 3
            else:
                digit = int(ch)
                pos += 1
            if digit in open_rings:
                other, order = open_rings.pop(digit)
                order = max(order, pending)
                bonds.append((min(prev, other), max(prev, other), order))
            else:
                open_rings[digit] = (prev, pending)
            pending = 1
        else:
            for sym in _ELEMENTS:
                if text.startswith(sym, pos):
                    atoms.append(sym)
                    idx = len(atoms) - 1
                    if prev >= 0:
                        bonds.append((min(prev, idx), max(prev, idx), pending))
                    prev = idx
                    pending = 1
                    pos += len(sym)
                    break
            else:
                raise FormatError(f"unexpected SMILES character {ch!r} at {pos}")
    if open_rings:
        raise FormatError("unclosed ring bond in SMILES")
    return MoleculeGraph(tuple(atoms), tuple(sorted(bonds)))


# ---------------------------------------------------------------------------
# Fragments (fixed scaffolds and linker endpoints)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fragment:
    """A fixed sub-structure: element list plus internal bonds."""

    atoms: tuple[str, ...]
    bonds: tuple[tuple[int, int, int], ...] = field(default_factory=tuple)

    def as_molecule(self) -> MoleculeGraph:
        return MoleculeGraph(self.atoms, tuple(sorted(self.bonds)))

    def check_chemistry(self, valence: dict[str, int] | None = None) -> None:
        result = validate(self.as_molecule(), valence)
        if not result.valid:
            raise FormatError(f"fragment is not chemically valid: {result.failures}")


def load_fragment(path) -> Fragment:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict) or "atoms" not in data:
        raise FormatError(f"{path}: fragment file needs an 'atoms' list")
    atoms = tuple(data["atoms"])
    for a in atoms:
        if a not in DEFAULT_VALENCE:
            raise FormatError(f"{path}: unknown element {a!r}")
    bonds = []
    for entry in data.get("bonds", []):
        i, j, order = entry
        if not (0 <= i < len(atoms) and 0 <= j < len(atoms) and i != j):
            raise FormatError(f"{path}: bad bond endpoint in {entry}")
        if order not in (1, 2, 3):
            raise FormatError(f"{path}: bad bond order in {entry}")
        bonds.append((min(i, j), max(i, j), order))
    frag = Fragment(atoms, tuple(sorted(bonds)))
    frag.check_chemistry()
    return frag
