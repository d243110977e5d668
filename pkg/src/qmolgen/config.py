"""Run configuration: a single YAML file plus dotted-path CLI overrides.

Schema (all keys optional unless noted)::

    config_version: 1          # required
    n_atoms: 4                 # required
    variant: hybrid            # hybrid | static
    conditioning: early_measured   # early_measured | quantum_controlled
    backend: dense             # dense | mps
    chi_max: 64
    truncation_threshold: 1.0e-12
    exact_mps: false           # chi 2^16, threshold 0 (overrides the two above)
    shots: 1000
    seed: 7
    workers: 1
    dense_qubit_cap: 30
    output_dir: results/run
    mode:
      kind: de_novo            # de_novo | scaffold | linker
      scaffold_file: core.yaml
      linker_files: [a.yaml, b.yaml]
    optimizer:
      kind: bo                 # bo | cobyla
      budget: 150
      xi: 0.01
      candidates: 4096
      polish_steps: 16
      rhobeg: 0.5
      rhoend: 1.0e-4
    bench:
      variants: [hybrid]
      dense_atoms: [2, 3, 4, 5, 6, 7, 8]
      mps_atoms: [8, 12, 16, 20]
      dense_shots: null        # falls back to `shots`
      mps_shots: null
      repetitions: 3

Overrides use dotted paths, e.g. ``--set optimizer.budget=50``; values are
parsed as YAML scalars.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .ansatz import CONDITIONINGS, VARIANTS, ModeSpec
from .errors import ConfigError
from .molgraph import Fragment, load_fragment

CONFIG_VERSION = 1


@dataclass
class ModeConfig:
    kind: str = "de_novo"
    scaffold_file: str | None = None
    linker_files: list[str] = field(default_factory=list)


@dataclass
class OptimizerConfig:
    kind: str = "bo"
    budget: int = 150
    xi: float = 0.01
    candidates: int = 4096
    polish_steps: int = 16
    rhobeg: float = 0.5
    rhoend: float = 1e-4


@dataclass
class BenchConfig:
    variants: list[str] = field(default_factory=lambda: ["hybrid"])
    dense_atoms: list[int] = field(default_factory=list)
    mps_atoms: list[int] = field(default_factory=list)
    dense_shots: int | None = None
    mps_shots: int | None = None
    repetitions: int = 3


@dataclass
class RunConfig:
    n_atoms: int = 2
    variant: str = "hybrid"
    conditioning: str = "early_measured"
    backend: str = "dense"
    chi_max: int = 64
    truncation_threshold: float = 1e-12
    exact_mps: bool = False
    shots: int = 1000
    seed: int = 0
    workers: int = 1
    dense_qubit_cap: int = 30
    output_dir: str = "results/run"
    mode: ModeConfig = field(default_factory=ModeConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def validate(self) -> None:
        if self.n_atoms < 1:
            raise ConfigError("n_atoms must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.conditioning not in CONDITIONINGS:
            raise ConfigError(f"conditioning must be one of {CONDITIONINGS}")
        if self.backend not in ("dense", "mps"):
            raise ConfigError("backend must be dense or mps")
        if self.backend == "mps" and self.conditioning != "early_measured":
            raise ConfigError("the mps backend requires early_measured conditioning")
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if self.optimizer.kind not in ("bo", "cobyla"):
            raise ConfigError("optimizer.kind must be bo or cobyla")
        if self.mode.kind not in ("de_novo", "scaffold", "linker"):
            raise ConfigError("mode.kind must be de_novo, scaffold, or linker")
        if self.mode.kind == "scaffold" and not self.mode.scaffold_file:
            raise ConfigError("scaffold mode needs mode.scaffold_file")
        if self.mode.kind == "linker" and len(self.mode.linker_files) != 2:
            raise ConfigError("linker mode needs exactly two mode.linker_files")

    def mode_spec(self, base_dir: Path | None = None) -> ModeSpec:
        def resolve(p: str) -> Path:
            path = Path(p)
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            return path

        if self.mode.kind == "de_novo":
            return ModeSpec.de_novo()
        if self.mode.kind == "scaffold":
            frag = load_fragment(resolve(self.mode.scaffold_file))
            return scaffold_mode(frag, self.n_atoms)
        frag_a = load_fragment(resolve(self.mode.linker_files[0]))
        frag_b = load_fragment(resolve(self.mode.linker_files[1]))
        return linker_mode(frag_a, frag_b, self.n_atoms)

    def mps_settings(self) -> tuple[int, float]:
        if self.exact_mps:
            return (1 << 16, 0.0)
        return (self.chi_max, self.truncation_threshold)


def scaffold_mode(fragment: Fragment, n_atoms: int) -> ModeSpec:
    """Pin the fragment to sites 0..k-1; the rest are substitution sites."""
    k = len(fragment.atoms)
    if k >= n_atoms:
        raise ConfigError(f"scaffold with {k} atoms leaves no free sites at n_atoms={n_atoms}")
    atoms = {i: fragment.atoms[i] for i in range(k)}
    bonds = {(i, j): o for i, j, o in fragment.bonds}
    spec = ModeSpec.scaffold(atoms, bonds)
    spec.validate(n_atoms)
    return spec


def linker_mode(frag_a: Fragment, frag_b: Fragment, n_atoms: int) -> ModeSpec:
    """Pin fragment A to the first sites and B to the last; link the middle."""
    la, lb = len(frag_a.atoms), len(frag_b.atoms)
    if la + lb >= n_atoms:
        raise ConfigError("linker fragments leave no free sites")
    off = n_atoms - lb
    a_atoms = {i: frag_a.atoms[i] for i in range(la)}
    b_atoms = {off + i: frag_b.atoms[i] for i in range(lb)}
    bonds = {(i, j): o for i, j, o in frag_a.bonds}
    bonds.update({(off + i, off + j): o for i, j, o in frag_b.bonds})
    spec = ModeSpec.linker(a_atoms, b_atoms, bonds)
    spec.validate(n_atoms)
    return spec


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _apply_overrides(data: dict, overrides: list[str]) -> None:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like path.key=value")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {path!r} crosses a scalar")
        node[keys[-1]] = value


def _build(cls, data: dict, where: str):
    fields = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return data


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    data: dict = {}
    base_dir = None
    if path is not None:
        base_dir = Path(path).parent
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        data = loaded
        version = data.pop("config_version", None)
        if version != CONFIG_VERSION:
            raise ConfigError(
                f"{path}: config_version must be {CONFIG_VERSION}, got {version!r}")
    if overrides:
        _apply_overrides(data, overrides)
        data.pop("config_version", None)

    mode = ModeConfig(**_build(ModeConfig, data.pop("mode", {}) or {}, "mode"))
    opt = OptimizerConfig(**_build(OptimizerConfig, data.pop("optimizer", {}) or {}, "optimizer"))
    bench = BenchConfig(**_build(BenchConfig, data.pop("bench", {}) or {}, "bench"))
    try:
        cfg = RunConfig(mode=mode, optimizer=opt, bench=bench,
                        **_build(RunConfig, data, "config"))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    cfg._base_dir = base_dir  # type: ignore[attr-defined]
    return cfg


def config_base_dir(cfg: RunConfig) -> Path | None:
    return getattr(cfg, "_base_dir", None)
