"""Shot records and their serialization.

A shot is one classical record: N 3-bit atom codes plus one 2-bit code per
atom pair, in lexicographic pair order. Batches serialize to JSONL (header
line + one shot per line) and to a compact binary container; both formats
are versioned and byte-deterministic.

Per-shot randomness comes from a counter-based Philox stream keyed by
(seed, shot index), so shot s draws the same numbers no matter how shots
are ordered or partitioned across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

JSONL_FORMAT = "qmolgen-batch-jsonl"
BINARY_MAGIC = b"QMGB"
FORMAT_VERSION = 1


def shot_rng(seed: int, shot_index: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, shot_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class SampleBatch:
    n_atoms: int
    atom_codes: np.ndarray  # (shots, n_atoms) uint8, values 0..7
    bond_codes: np.ndarray  # (shots, n_pairs) uint8, values 0..3
    seed: int
    wall_time: float = 0.0  # metadata only; excluded from serialized records

    @property
    def n_shots(self) -> int:
        return int(self.atom_codes.shape[0])

    @property
    def n_pairs(self) -> int:
        return int(self.bond_codes.shape[1])

    def check(self) -> None:
        expected_pairs = self.n_atoms * (self.n_atoms - 1) // 2
        if self.bond_codes.shape != (self.n_shots, expected_pairs):
            raise FormatError("bond code array shape mismatch")
        if self.atom_codes.size and int(self.atom_codes.max()) > 7:
            raise FormatError("atom code out of range")
        if self.bond_codes.size and int(self.bond_codes.max()) > 3:
            raise FormatError("bond code out of range")


def codes_from_slots(slots: np.ndarray, n_atoms: int) -> tuple[np.ndarray, np.ndarray]:
    """Convert raw classical-slot bits (one row per shot) to code arrays.

    Slot layout follows the circuit builders: atom i bits at 3i..3i+2
    (most significant first), pair k bits at 3N+2k, 3N+2k+1.
    """
    shots = slots.shape[0]
    atoms = np.zeros((shots, n_atoms), dtype=np.uint8)
    for i in range(n_atoms):
        atoms[:, i] = (slots[:, 3 * i] << 2) | (slots[:, 3 * i + 1] << 1) | slots[:, 3 * i + 2]
    n_pairs = n_atoms * (n_atoms - 1) // 2
    bonds = np.zeros((shots, n_pairs), dtype=np.uint8)
    base = 3 * n_atoms
    for k in range(n_pairs):
        bonds[:, k] = (slots[:, base + 2 * k] << 1) | slots[:, base + 2 * k + 1]
    return atoms, bonds


def slot_key_to_codes(key: tuple[int, ...], n_atoms: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Group a flat slot-value outcome key into (atom codes, bond codes)."""
    atoms = tuple((key[3 * i] << 2) | (key[3 * i + 1] << 1) | key[3 * i + 2] for i in range(n_atoms))
    n_pairs = n_atoms * (n_atoms - 1) // 2
    base = 3 * n_atoms
    bonds = tuple((key[base + 2 * k] << 1) | key[base + 2 * k + 1] for k in range(n_pairs))
    return atoms, bonds


def empirical_distribution(batch: SampleBatch) -> dict[tuple, float]:
    """Outcome frequencies keyed by ((atom codes), (bond codes))."""
    counts: dict[tuple, int] = {}
    for s in range(batch.n_shots):
        key = (tuple(int(v) for v in batch.atom_codes[s]),
               tuple(int(v) for v in batch.bond_codes[s]))
        counts[key] = counts.get(key, 0) + 1
    total = batch.n_shots
    return {k: v / total for k, v in counts.items()}


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_batch_jsonl(batch: SampleBatch, path) -> None:
    batch.check()
    header = {
        "format": JSONL_FORMAT,
        "version": FORMAT_VERSION,
        "n_atoms": batch.n_atoms,
        "n_shots": batch.n_shots,
        "seed": batch.seed,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for s in range(batch.n_shots):
            rec = {
                "shot": s,
                "atoms": [int(v) for v in batch.atom_codes[s]],
                "bonds": [int(v) for v in batch.bond_codes[s]],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_batch_jsonl(path) -> SampleBatch:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != JSONL_FORMAT:
            raise FormatError(f"{path}: not a batch JSONL file")
        if header.get("version") != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {header.get('version')}")
        n_atoms, n_shots = header["n_atoms"], header["n_shots"]
        atoms = np.zeros((n_shots, n_atoms), dtype=np.uint8)
        bonds = np.zeros((n_shots, n_atoms * (n_atoms - 1) // 2), dtype=np.uint8)
        for line in fh:
            rec = json.loads(line)
            s = rec["shot"]
            atoms[s] = rec["atoms"]
            bonds[s] = rec["bonds"]
    batch = SampleBatch(n_atoms, atoms, bonds, header["seed"])
    batch.check()
    return batch


def save_batch_binary(batch: SampleBatch, path) -> None:
    batch.check()
    header = json.dumps(
        {
            "version": FORMAT_VERSION,
            "n_atoms": batch.n_atoms,
            "n_shots": batch.n_shots,
            "n_pairs": batch.n_pairs,
            "seed": batch.seed,
        },
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        fh.write(np.ascontiguousarray(batch.atom_codes).tobytes())
        fh.write(np.ascontiguousarray(batch.bond_codes).tobytes())


def load_batch_binary(path) -> SampleBatch:
    with open(path, "rb") as fh:
        if fh.read(4) != BINARY_MAGIC:
            raise FormatError(f"{path}: bad magic")
        hlen = int.from_bytes(fh.read(4), "little")
        header = json.loads(fh.read(hlen))
        if header["version"] != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version")
        n_atoms, n_shots, n_pairs = header["n_atoms"], header["n_shots"], header["n_pairs"]
        atoms = np.frombuffer(fh.read(n_shots * n_atoms), dtype=np.uint8).reshape(n_shots, n_atoms)
        bonds = np.frombuffer(fh.read(n_shots * n_pairs), dtype=np.uint8).reshape(n_shots, n_pairs)
    batch = SampleBatch(n_atoms, atoms.copy(), bonds.copy(), header["seed"])
    batch.check()
    return batch


def load_batch(path) -> SampleBatch:
    """Sniff JSONL vs binary by magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == BINARY_MAGIC:
        return load_batch_binary(path)
    return load_batch_jsonl(path)
