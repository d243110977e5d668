"""Matrix-product-state backend.

One rank-3 tensor per qubit with legs (left bond, physical, right bond) and
an explicit orthogonality center. Two-site gates contract the pair, apply
the 4x4 unitary, and split by SVD with a relative singular-value threshold
plus a hard bond-dimension cap; discarded weight is logged per gate. Gates
on non-adjacent qubits are routed with swap chains and swapped back, so
callers always address logical qubit indices.

Mid-circuit measurement samples the single-site density at the
orthogonality center, projects, and renormalizes; reset is measure plus a
conditional X. Exact mode is chi_max=2**16 with threshold 0.

Trajectory sampling mirrors the dense backend, including the branch-prefix
memo tree and the one-draw-per-sampling-point substream protocol, so magic
numbers like total-variation tolerances carry over between backends.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .circuit import Circuit, ControlledOnNonZero
from .errors import CapacityError, NumericalError
from .sampling import SampleBatch, codes_from_slots, shot_rng
from .statevec import compile_program, sample_bit

EXACT_CHI = 1 << 16
DEFAULT_THRESHOLD = 1e-12
DEFAULT_MPS_CACHE_BYTES = 256 * 1024 * 1024


@dataclass
class TruncationRecord:
    discarded: float
    bond_dim: int


@dataclass
class TruncationLog:
    """Aggregated per-gate truncation accounting for one run."""

    per_gate_discarded: dict[int, float] = field(default_factory=dict)
    per_gate_bond_dim: dict[int, int] = field(default_factory=dict)
    max_bond_dim: int = 1
    total_discarded: float = 0.0

    def add(self, gate_index: int, rec: TruncationRecord) -> None:
        cur = self.per_gate_discarded.get(gate_index, 0.0)
        self.per_gate_discarded[gate_index] = max(cur, rec.discarded)
        curb = self.per_gate_bond_dim.get(gate_index, 1)
        self.per_gate_bond_dim[gate_index] = max(curb, rec.bond_dim)
        self.max_bond_dim = max(self.max_bond_dim, rec.bond_dim)
        self.total_discarded += rec.discarded

    def rows(self) -> list[tuple[int, float, int]]:
        return [(i, self.per_gate_discarded[i], self.per_gate_bond_dim[i])
                for i in sorted(self.per_gate_discarded)]


class MpsState:
    def __init__(self, n_sites: int, chi_max: int = EXACT_CHI,
                 threshold: float = DEFAULT_THRESHOLD):
        if n_sites < 1:
            raise ValueError("need at least one site")
        self.tensors = [np.zeros((1, 2, 1), dtype=np.complex128) for _ in range(n_sites)]
        for t in self.tensors:
            t[0, 0, 0] = 1.0
        self.center = 0
        self.chi_max = chi_max
        self.threshold = threshold

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    def bond_dims(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    def nbytes(self) -> int:
        return sum(t.nbytes for t in self.tensors)

    def copy(self) -> "MpsState":
        out = MpsState.__new__(MpsState)
        out.tensors = [t.copy() for t in self.tensors]
        out.center = self.center
        out.chi_max = self.chi_max
        out.threshold = self.threshold
        return out

    def norm_sq(self) -> float:
        t = self.tensors[self.center]
        return float(np.real(np.vdot(t, t)))

    # -- canonical form ----------------------------------------------------

    def _shift_right(self) -> None:
        i = self.center
        t = self.tensors[i]
        dl, _, dr = t.shape
        q, r = np.linalg.qr(t.reshape(dl * 2, dr))
        k = q.shape[1]
        self.tensors[i] = q.reshape(dl, 2, k)
        self.tensors[i + 1] = np.tensordot(r, self.tensors[i + 1], axes=(1, 0))
        self.center = i + 1

    def _shift_left(self) -> None:
        i = self.center
        t = self.tensors[i]
        dl, _, dr = t.shape
        a = t.reshape(dl, 2 * dr)
        q, r = np.linalg.qr(a.conj().T)          # a = r^H q^H
        k = q.shape[1]
        self.tensors[i] = q.conj().T.reshape(k, 2, dr)
        self.tensors[i - 1] = np.tensordot(self.tensors[i - 1], r.conj().T, axes=(2, 0))
        self.center = i - 1

    def move_center(self, site: int) -> None:
        while self.center < site:
            self._shift_right()
        while self.center > site:
            self._shift_left()

    def to_dense(self) -> np.ndarray:
        """Full amplitude vector, index bit q = qubit q (for small tests)."""
        acc = self.tensors[0]
        for t in self.tensors[1:]:
            acc = np.tensordot(acc, t, axes=(acc.ndim - 1, 0))
        vec = acc.reshape(-1)  # site 0 is the most significant axis here
        n = self.n_sites
        return vec.reshape([2] * n).transpose(tuple(range(n - 1, -1, -1))).reshape(-1)


def apply_one_site(state: MpsState, u2: np.ndarray, site: int) -> None:
    state.tensors[site] = np.einsum("ab,lbr->lar", u2, state.tensors[site])


def apply_two_site(state: MpsState, site: int, u4: np.ndarray) -> TruncationRecord:
    """Apply a 4x4 unitary on (site, site+1); basis order (bit_site, bit_site+1)."""
    if not 0 <= site < state.n_sites - 1:
        raise ValueError(f"two-site gate at {site} out of range")
    if state.center < site or state.center > site + 1:
        state.move_center(site)
    a, b = state.tensors[site], state.tensors[site + 1]
    dl, dr = a.shape[0], b.shape[2]
    theta = np.tensordot(a, b, axes=(2, 0))                # (dl, p1, p2, dr)
    theta = np.tensordot(u4.reshape(2, 2, 2, 2), theta, axes=((2, 3), (1, 2)))
    theta = theta.transpose(2, 0, 1, 3).reshape(dl * 2, 2 * dr)
    try:
        u, s, vh = np.linalg.svd(theta, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed at site {site}: {exc}") from exc
    total = float(np.sum(s * s))
    if total <= 0.0:
        raise NumericalError(f"zero-norm state after gate at site {site}")
    keep = s.shape[0]
    if state.threshold > 0.0:
        keep = int(np.count_nonzero(s >= state.threshold * s[0]))
    keep = max(1, min(keep, state.chi_max))
    discarded = float(np.sum(s[keep:] ** 2)) / total
    s = s[:keep]
    s = s / np.linalg.norm(s)
    state.tensors[site] = u[:, :keep].reshape(dl, 2, keep)
    state.tensors[site + 1] = (s[:, None] * vh[:keep]).reshape(keep, 2, dr)
    state.center = site + 1
    return TruncationRecord(discarded, keep)


_SWAP = np.zeros((4, 4), dtype=np.complex128)
_SWAP[0, 0] = _SWAP[1, 2] = _SWAP[2, 1] = _SWAP[3, 3] = 1.0


def _reorder_pair(u4: np.ndarray) -> np.ndarray:
    """Exchange the roles of the two qubits in a 4x4 unitary."""
    perm = (0, 2, 1, 3)
    return u4[np.ix_(perm, perm)]


def route_and_apply(state: MpsState, qa: int, qb: int, u4: np.ndarray,
                    log: TruncationLog | None = None, gate_index: int = -1,
                    ) -> tuple[TruncationRecord, int]:
    """Apply u4 (basis order (qa, qb)) to possibly distant qubits.

    The farther qubit is swapped next to the nearer one, the gate applied,
    and the swaps undone; returns the gate's truncation record and the
    number of swap applications (2*(distance-1)).
    """
    if qa == qb:
        raise ValueError("two-site gate needs distinct qubits")
    lo, hi = (qa, qb) if qa < qb else (qb, qa)
    mat = u4 if qa < qb else _reorder_pair(u4)
    n_swaps = 0
    for s in range(hi - 1, lo, -1):
        rec = apply_two_site(state, s, _SWAP)
        n_swaps += 1
        if log is not None:
            log.add(gate_index, rec)
    rec = apply_two_site(state, lo, mat)
    if log is not None:
        log.add(gate_index, rec)
    for s in range(lo + 1, hi):
        rec2 = apply_two_site(state, s, _SWAP)
        n_swaps += 1
        if log is not None:
            log.add(gate_index, rec2)
    return rec, n_swaps


def site_prob_one(state: MpsState, site: int) -> float:
    state.move_center(site)
    t = state.tensors[site]
    branch = t[:, 1, :]
    return float(np.real(np.sum(branch * branch.conj())))


def _project_site(state: MpsState, site: int, bit: int, p: float) -> None:
    t = state.tensors[site]
    t[:, 1 - bit, :] = 0.0
    t *= 1.0 / math.sqrt(p)


def measure_site(state: MpsState, site: int, rng) -> tuple[int, MpsState]:
    p1 = site_prob_one(state, site)
    p0 = 1.0 - p1
    if not (p1 >= 1e-14 or p0 >= 1e-14):
        raise NumericalError(f"both branch probabilities below 1e-14 at site {site}")
    bit = sample_bit(p1, rng)
    _project_site(state, site, bit, p1 if bit else p0)
    return bit, state


def reset_site(state: MpsState, site: int, rng) -> MpsState:
    bit, state = measure_site(state, site, rng)
    if bit:
        apply_one_site(state, np.array([[0, 1], [1, 0]], dtype=np.complex128), site)
    return state


# ---------------------------------------------------------------------------
# Gate matrices for compiled instructions
# ---------------------------------------------------------------------------

def _u_ry(c: float, s: float) -> np.ndarray:
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


def _u_cry(c: float, s: float) -> np.ndarray:
    u = np.eye(4, dtype=np.complex128)
    u[2, 2], u[2, 3], u[3, 2], u[3, 3] = c, -s, s, c
    return u


_CNOT = np.zeros((4, 4), dtype=np.complex128)
_CNOT[0, 0] = _CNOT[1, 1] = _CNOT[3, 2] = _CNOT[2, 3] = 1.0
_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)


# ---------------------------------------------------------------------------
# Trajectory engine
# ---------------------------------------------------------------------------

@dataclass
class _MpsNode:
    ip: int
    site: int
    slot: int
    p1: float
    state: MpsState | None


class _MpsTrajectoryEngine:
    def __init__(self, circuit: Circuit, params, chi_max: int, threshold: float,
                 cache_bytes: int, log: TruncationLog):
        if any(isinstance(g, ControlledOnNonZero) for g in _groups(circuit.gates)):
            raise ValueError(
                "quantum-controlled conditioning is unsupported on the MPS backend; "
                "build the ansatz with conditioning='early_measured'")
        self.circuit = circuit
        self.prog = compile_program(circuit, params)
        self.chi_max = chi_max
        self.threshold = threshold
        self.cache: dict[tuple[int, ...], _MpsNode] = {}
        self.cache_budget = cache_bytes
        self.cache_used = 0
        self.log = log

    def _evolve(self, state: MpsState, ip: int, record) -> int:
        prog = self.prog
        n_prog = len(prog)
        log = self.log
        while ip < n_prog:
            op = prog[ip]
            kind = op[0]
            if kind == "ry":
                apply_one_site(state, _u_ry(op[2], op[3]), op[1])
            elif kind == "cry":
                route_and_apply(state, op[1], op[2], _u_cry(op[3], op[4]), log, ip)
            elif kind == "cnot":
                route_and_apply(state, op[1], op[2], _CNOT, log, ip)
            elif kind == "x":
                apply_one_site(state, _X, op[1])
            elif kind == "jumpifnot":
                if not op[1].evaluate(record):
                    ip = op[2]
                    continue
            else:
                return ip
            ip += 1
        return -1

    def _make_node(self, state: MpsState, ip: int, record) -> _MpsNode:
        stop = self._evolve(state, ip, record)
        if stop < 0:
            return _MpsNode(-1, -1, -1, 0.0, None)
        op = self.prog[stop]
        site = op[1]
        slot = op[2] if op[0] == "measure" else -1
        p1 = site_prob_one(state, site)
        if not (p1 >= 1e-14 or 1.0 - p1 >= 1e-14):
            raise NumericalError(f"both branch probabilities below 1e-14 at site {site}")
        return _MpsNode(stop, site, slot, p1, state)

    def _apply_outcome(self, state: MpsState, node: _MpsNode, bit: int) -> None:
        _project_site(state, node.site, bit, node.p1 if bit else 1.0 - node.p1)
        if node.slot < 0 and bit:
            apply_one_site(state, _X, node.site)

    def _try_cache(self, hist, node: _MpsNode) -> bool:
        cost = node.state.nbytes() if node.state is not None else 0
        if self.cache_used + cost > self.cache_budget:
            return False
        self.cache[hist] = node
        self.cache_used += cost
        return True

    def root(self) -> _MpsNode:
        node = self.cache.get(())
        if node is None:
            state = MpsState(self.circuit.n_qubits, self.chi_max, self.threshold)
            record = np.zeros(self.circuit.n_classical_slots, dtype=np.uint8)
            node = self._make_node(state, 0, record)
            self.cache[()] = node
            self.cache_used += node.state.nbytes() if node.state is not None else 0
        return node

    def run_shot(self, rng, out_slots: np.ndarray) -> int:
        record = out_slots
        record[:] = 0
        hist: tuple[int, ...] = ()
        node = self.root()
        private: MpsState | None = None
        max_chi = 1
        while node.ip >= 0:
            bit = sample_bit(node.p1, rng)
            if node.slot >= 0:
                record[node.slot] = bit
            hist = hist + (bit,)
            if private is None:
                child = self.cache.get(hist)
                if child is not None:
                    node = child
                    continue
                private = node.state.copy()
            self._apply_outcome(private, node, bit)
            node = self._make_node(private, node.ip + 1, record)
            if private is not None:
                max_chi = max(max_chi, max(private.bond_dims(), default=1))
            if self._try_cache(hist, node):
                private = None
        return max_chi


def _groups(gates):
    for g in gates:
        yield g
        if hasattr(g, "body"):
            yield from _groups(g.body)


def run_shots_mps(
    circuit: Circuit,
    params,
    n_shots: int,
    chi_max: int,
    threshold: float,
    seed: int,
    n_atoms: int,
    *,
    cache_bytes: int = DEFAULT_MPS_CACHE_BYTES,
    workers: int = 1,
    max_state_bytes: int = 4 * 1024 * 1024 * 1024,
) -> tuple[SampleBatch, TruncationLog]:
    """Trajectory sampling on the MPS backend; same record contract as dense."""
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    if circuit.n_classical_slots != n_atoms * (n_atoms + 2):
        raise ValueError("circuit classical layout does not match n_atoms")
    worst = _worst_case_bytes(circuit.n_qubits, chi_max)
    if worst > max_state_bytes:
        feasible = _max_feasible_chi(circuit.n_qubits, max_state_bytes)
        raise CapacityError(
            f"chi_max={chi_max} could need {worst / 2**30:.1f} GiB of tensors; "
            f"largest feasible chi under the budget is {feasible}")

    t0 = time.perf_counter()
    if workers > 1 and n_shots >= 2 * workers:
        slots, log, max_chi = _run_parallel(
            circuit, params, n_shots, chi_max, threshold, seed, cache_bytes, workers)
    else:
        slots, log, max_chi = _run_range(
            circuit, params, chi_max, threshold, seed, 0, n_shots, cache_bytes)
    log.max_bond_dim = max(log.max_bond_dim, max_chi)
    atoms, bonds = codes_from_slots(slots, n_atoms)
    batch = SampleBatch(n_atoms, atoms, bonds, seed, wall_time=time.perf_counter() - t0)
    return batch, log


def _worst_case_bytes(n_sites: int, chi_max: int) -> int:
    half = n_sites // 2
    total = 0
    for i in range(n_sites):
        dl = min(2 ** min(i, half), chi_max)
        dr = min(2 ** min(n_sites - 1 - i, half), chi_max)
        total += 16 * dl * 2 * dr
    return total


def _max_feasible_chi(n_sites: int, budget: int) -> int:
    chi = 1
    while chi < EXACT_CHI and _worst_case_bytes(n_sites, chi * 2) <= budget:
        chi *= 2
    return chi


def _run_range(circuit, params, chi_max, threshold, seed, start, stop, cache_bytes):
    log = TruncationLog()
    engine = _MpsTrajectoryEngine(circuit, params, chi_max, threshold, cache_bytes, log)
    out = np.zeros((stop - start, circuit.n_classical_slots), dtype=np.uint8)
    max_chi = 1
    for s in range(start, stop):
        max_chi = max(max_chi, engine.run_shot(shot_rng(seed, s), out[s - start]))
    return out, log, max_chi


def _run_parallel(circuit, params, n_shots, chi_max, threshold, seed, cache_bytes, workers):
    import multiprocessing as mp

    bounds = np.linspace(0, n_shots, workers + 1).astype(int)
    jobs = [(circuit, params, chi_max, threshold, seed, int(a), int(b), cache_bytes // workers)
            for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    ctx = mp.get_context("fork")
    with ctx.Pool(len(jobs)) as pool:
        results = pool.starmap(_run_range, jobs)
    slots = np.concatenate([r[0] for r in results], axis=0)
    log = TruncationLog()
    for _, sublog, _ in results:
        for ip, d in sublog.per_gate_discarded.items():
            log.per_gate_discarded[ip] = max(log.per_gate_discarded.get(ip, 0.0), d)
        for ip, b in sublog.per_gate_bond_dim.items():
            log.per_gate_bond_dim[ip] = max(log.per_gate_bond_dim.get(ip, 1), b)
        log.max_bond_dim = max(log.max_bond_dim, sublog.max_bond_dim)
        log.total_discarded += sublog.total_discarded
    max_chi = max(r[2] for r in results)
    return slots, log, max_chi
