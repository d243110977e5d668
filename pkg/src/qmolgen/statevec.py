"""Dense state-vector backend.

Shots are simulated as independent trajectories: unitaries evolve the full
2^n amplitude array, mid-circuit measurements sample and collapse it. Since
evolution between sampling points is deterministic given the outcome
history, states reached along a branch prefix are memoized (up to a byte
budget) and replayed for later shots that take the same prefix; results are
bit-identical to uncached execution because each shot consumes one uniform
draw per Measure/Reset from its own counter-based substream.

`enumerate_distribution` is the exact oracle: a depth-first sweep over all
measurement branches, multiplying branch weights.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .circuit import (
    Circuit,
    CNot,
    Conditioned,
    ControlledOnNonZero,
    CRy,
    Measure,
    PauliX,
    Reset,
    Ry,
)
from .errors import CapacityError, NumericalError
from .sampling import SampleBatch, codes_from_slots, shot_rng

DEFAULT_QUBIT_CAP = 30
DEFAULT_BRANCH_CAP = 1 << 20
DEFAULT_CACHE_BYTES = 256 * 1024 * 1024
_PRUNE_EPS = 1e-16

# Sampling points whose outcome probability is within this margin of 0 or 1
# are treated as deterministic and consume no randomness. Keeping the draw
# stream free of foregone outcomes aligns substreams across circuit variants
# (hybrid resets always follow measurements of the same qubits), so common
# random numbers give exact cross-variant comparisons.
DETERMINISTIC_EPS = 1e-12


def sample_bit(p1: float, rng) -> int:
    if p1 <= DETERMINISTIC_EPS:
        return 0
    if p1 >= 1.0 - DETERMINISTIC_EPS:
        return 1
    return 1 if rng.random() < p1 else 0


def zero_state(n_qubits: int) -> np.ndarray:
    state = np.zeros(1 << n_qubits, dtype=np.complex128)
    state[0] = 1.0
    return state


def _angle(params, slot) -> float:
    if slot >= len(params):
        raise ValueError(f"param slot {slot} unbound (vector has {len(params)} entries)")
    theta = float(params[slot])
    if not math.isfinite(theta):
        raise ValueError(f"non-finite parameter at slot {slot}")
    return theta


def apply_gate(state: np.ndarray, gate, params=()) -> np.ndarray:
    """Apply one unitary leaf gate in place and return the state."""
    if isinstance(gate, Ry):
        t = _angle(params, gate.param_slot)
        kernels.ry_kernel(state, math.cos(t / 2), math.sin(t / 2), gate.qubit)
    elif isinstance(gate, CRy):
        t = _angle(params, gate.param_slot)
        kernels.cry_kernel(state, math.cos(t / 2), math.sin(t / 2), gate.control, gate.qubit)
    elif isinstance(gate, CNot):
        kernels.cnot_kernel(state, gate.control, gate.qubit)
    elif isinstance(gate, PauliX):
        kernels.x_kernel(state, gate.qubit)
    elif isinstance(gate, ControlledOnNonZero):
        masks = _register_masks(gate.registers)
        for g in gate.body:
            if isinstance(g, Ry):
                t = _angle(params, g.param_slot)
                kernels.masked_ry_kernel(state, math.cos(t / 2), math.sin(t / 2), g.qubit, masks)
            elif isinstance(g, CNot):
                kernels.masked_cnot_kernel(state, g.control, g.qubit, masks)
            else:
                raise TypeError(f"unsupported gate inside quantum-controlled group: {g!r}")
    else:
        raise TypeError(f"apply_gate cannot handle {gate!r}; use the measurement helpers")
    return state


def _register_masks(registers) -> np.ndarray:
    masks = np.zeros(len(registers), dtype=np.uint64)
    for k, reg in enumerate(registers):
        m = 0
        for q in reg:
            m |= 1 << q
        masks[k] = m
    return masks


def measure_and_collapse(state: np.ndarray, qubit: int, rng) -> tuple[int, np.ndarray]:
    p1 = kernels.prob_one_kernel(state, qubit)
    p0 = 1.0 - p1
    if not (p1 >= 1e-14 or p0 >= 1e-14):
        raise NumericalError(f"both branch probabilities below 1e-14 at qubit {qubit}")
    bit = sample_bit(p1, rng)
    p = p1 if bit else p0
    kernels.project_kernel(state, qubit, bit, 1.0 / math.sqrt(p))
    return bit, state


def reset_qubit(state: np.ndarray, qubit: int, rng) -> np.ndarray:
    bit, state = measure_and_collapse(state, qubit, rng)
    if bit:
        kernels.x_kernel(state, qubit)
    return state


# ---------------------------------------------------------------------------
# Program compilation
# ---------------------------------------------------------------------------
#
# Instructions (tuples, dispatched on [0]):
#   ("ry",   qubit, c, s, masks|None)
#   ("cry",  ctrl, qubit, c, s)
#   ("cnot", ctrl, qubit, masks|None)
#   ("x",    qubit)
#   ("jumpifnot", predicate, target_ip)
#   ("measure", qubit, slot)
#   ("reset", qubit)

def compile_program(circuit: Circuit, params) -> list[tuple]:
    if len(params) != circuit.n_params:
        raise ValueError(
            f"parameter vector length {len(params)} != n_params {circuit.n_params}")
    prog: list[tuple] = []

    def emit(gates, masks) -> None:
        for g in gates:
            if isinstance(g, Ry):
                t = _angle(params, g.param_slot)
                prog.append(("ry", g.qubit, math.cos(t / 2), math.sin(t / 2), masks))
            elif isinstance(g, CRy):
                if masks is not None:
                    raise TypeError("controlled Ry inside quantum-controlled group unsupported")
                t = _angle(params, g.param_slot)
                prog.append(("cry", g.control, g.qubit, math.cos(t / 2), math.sin(t / 2)))
            elif isinstance(g, CNot):
                prog.append(("cnot", g.control, g.qubit, masks))
            elif isinstance(g, PauliX):
                if masks is not None:
                    raise TypeError("X inside quantum-controlled group unsupported")
                prog.append(("x", g.qubit))
            elif isinstance(g, Measure):
                if masks is not None:
                    raise TypeError("measurement inside quantum-controlled group unsupported")
                prog.append(("measure", g.qubit, g.slot))
            elif isinstance(g, Reset):
                if masks is not None:
                    raise TypeError("reset inside quantum-controlled group unsupported")
                prog.append(("reset", g.qubit))
            elif isinstance(g, Conditioned):
                if masks is not None:
                    raise TypeError("classical condition inside quantum-controlled group unsupported")
                placeholder = len(prog)
                prog.append(None)
                emit(g.body, masks)
                prog[placeholder] = ("jumpifnot", g.condition, len(prog))
            elif isinstance(g, ControlledOnNonZero):
                inner = _register_masks(g.registers) if masks is None else np.concatenate(
                    [masks, _register_masks(g.registers)])
                emit(g.body, inner)
            else:
                raise TypeError(f"unknown gate {g!r}")

    emit(circuit.gates, None)
    return prog


def _run_unitaries(state, prog, ip, record) -> int:
    """Evolve until the next sampling point (or end); returns its ip or -1."""
    n_prog = len(prog)
    while ip < n_prog:
        op = prog[ip]
        kind = op[0]
        if kind == "ry":
            _, q, c, s, masks = op
            if masks is None:
                kernels.ry_kernel(state, c, s, q)
            else:
                kernels.masked_ry_kernel(state, c, s, q, masks)
        elif kind == "cry":
            _, ctrl, q, c, s = op
            kernels.cry_kernel(state, c, s, ctrl, q)
        elif kind == "cnot":
            _, ctrl, q, masks = op
            if masks is None:
                kernels.cnot_kernel(state, ctrl, q)
            else:
                kernels.masked_cnot_kernel(state, ctrl, q, masks)
        elif kind == "x":
            kernels.x_kernel(state, op[1])
        elif kind == "jumpifnot":
            if not op[1].evaluate(record):
                ip = op[2]
                continue
        else:  # measure / reset
            return ip
        ip += 1
    return -1


# ---------------------------------------------------------------------------
# Trajectory sampling with branch-prefix memoization
# ---------------------------------------------------------------------------

@dataclass
class _Node:
    ip: int            # -1 when the trajectory is complete
    qubit: int
    slot: int          # -1 for reset sampling points
    p1: float
    state: np.ndarray | None  # snapshot before sampling; None when not cached


class _TrajectoryEngine:
    def __init__(self, circuit: Circuit, params, cache_bytes: int):
        self.circuit = circuit
        self.prog = compile_program(circuit, params)
        self.n_slots = circuit.n_classical_slots
        state_bytes = 16 * (1 << circuit.n_qubits)
        self.max_nodes = max(1, cache_bytes // state_bytes)
        self.cache: dict[tuple[int, ...], _Node] = {}
        self._scratch_record = np.zeros(self.n_slots, dtype=np.uint8)

    def _make_node(self, state, ip, record) -> _Node:
        stop = _run_unitaries(state, self.prog, ip, record)
        if stop < 0:
            return _Node(-1, -1, -1, 0.0, None)
        op = self.prog[stop]
        qubit = op[1]
        slot = op[2] if op[0] == "measure" else -1
        p1 = kernels.prob_one_kernel(state, qubit)
        if not (p1 >= 1e-14 or 1.0 - p1 >= 1e-14):
            raise NumericalError(f"both branch probabilities below 1e-14 at qubit {qubit}")
        return _Node(stop, qubit, slot, p1, state)

    def _apply_outcome(self, state, node: _Node, bit: int) -> None:
        p = node.p1 if bit else 1.0 - node.p1
        kernels.project_kernel(state, node.qubit, bit, 1.0 / math.sqrt(p))
        if node.slot < 0 and bit:  # reset puts the qubit back to |0>
            kernels.x_kernel(state, node.qubit)

    def root(self) -> _Node:
        node = self.cache.get(())
        if node is None:
            state = zero_state(self.circuit.n_qubits)
            record = self._scratch_record
            record[:] = 0
            node = self._make_node(state, 0, record)
            self.cache[()] = node
        return node

    def run_shot(self, rng, out_slots: np.ndarray) -> None:
        record = out_slots
        record[:] = 0
        hist: tuple[int, ...] = ()
        node = self.root()
        private: np.ndarray | None = None
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
            if len(self.cache) < self.max_nodes:
                # Adopt the private buffer as the cached snapshot; later
                # branches copy it on exit, so it is never mutated again.
                self.cache[hist] = node
                private = None


def run_shots(
    circuit: Circuit,
    params,
    n_shots: int,
    seed: int,
    n_atoms: int,
    *,
    qubit_cap: int = DEFAULT_QUBIT_CAP,
    cache_bytes: int = DEFAULT_CACHE_BYTES,
    workers: int = 1,
) -> SampleBatch:
    """Sample independent trajectories; deterministic in (seed, shot index)."""
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    if circuit.n_qubits > qubit_cap:
        raise CapacityError(
            f"dense backend needs 2^{circuit.n_qubits} amplitudes "
            f"({16 * (1 << circuit.n_qubits) / 2**30:.1f} GiB), over the "
            f"{qubit_cap}-qubit cap")
    if circuit.n_classical_slots != n_atoms * (n_atoms + 2):
        raise ValueError("circuit classical layout does not match n_atoms")

    t0 = time.perf_counter()
    if workers > 1 and n_shots >= 2 * workers:
        slots = _run_shots_parallel(circuit, params, n_shots, seed, cache_bytes, workers)
    else:
        slots = _run_shot_range(circuit, params, seed, 0, n_shots, cache_bytes)
    atoms, bonds = codes_from_slots(slots, n_atoms)
    return SampleBatch(n_atoms, atoms, bonds, seed, wall_time=time.perf_counter() - t0)


def _run_shot_range(circuit, params, seed, start, stop, cache_bytes) -> np.ndarray:
    engine = _TrajectoryEngine(circuit, params, cache_bytes)
    out = np.zeros((stop - start, circuit.n_classical_slots), dtype=np.uint8)
    for s in range(start, stop):
        engine.run_shot(shot_rng(seed, s), out[s - start])
    return out


def _run_shots_parallel(circuit, params, n_shots, seed, cache_bytes, workers) -> np.ndarray:
    import multiprocessing as mp

    bounds = np.linspace(0, n_shots, workers + 1).astype(int)
    jobs = [(circuit, params, seed, int(a), int(b), cache_bytes // workers)
            for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    ctx = mp.get_context("fork")
    with ctx.Pool(len(jobs)) as pool:
        chunks = pool.starmap(_run_shot_range, jobs)
    return np.concatenate(chunks, axis=0)


# ---------------------------------------------------------------------------
# Exact enumeration oracle
# ---------------------------------------------------------------------------

def enumerate_distribution(
    circuit: Circuit,
    params,
    *,
    branch_cap: int = DEFAULT_BRANCH_CAP,
) -> dict[tuple[int, ...], float]:
    """Exact outcome distribution keyed by the classical-slot value tuple."""
    prog = compile_program(circuit, params)
    n_measures = sum(1 for op in prog if op[0] == "measure")
    if n_measures < 64 and (1 << n_measures) > branch_cap:
        raise CapacityError(
            f"{n_measures} measurements imply up to 2^{n_measures} branches, "
            f"over the cap {branch_cap}")

    out: dict[tuple[int, ...], float] = {}
    explored = 0

    def dfs(state, ip, record, weight) -> None:
        nonlocal explored
        stop = _run_unitaries(state, prog, ip, record)
        if stop < 0:
            key = tuple(int(v) for v in record)
            out[key] = out.get(key, 0.0) + weight
            return
        explored += 1
        if explored > 4 * branch_cap:
            raise CapacityError("branch enumeration exceeded cap")
        op = prog[stop]
        qubit = op[1]
        p1 = kernels.prob_one_kernel(state, qubit)
        for bit in (0, 1):
            p = p1 if bit else 1.0 - p1
            if p * weight <= _PRUNE_EPS:
                continue
            sub = state.copy()
            kernels.project_kernel(sub, qubit, bit, 1.0 / math.sqrt(p))
            rec = record.copy()
            if op[0] == "measure":
                rec[op[2]] = bit
            elif bit:  # reset
                kernels.x_kernel(sub, qubit)
            dfs(sub, stop + 1, rec, weight * p)

    record = np.zeros(circuit.n_classical_slots, dtype=np.uint8)
    dfs(zero_state(circuit.n_qubits), 0, record, 1.0)
    return out
