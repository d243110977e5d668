"""Quantum-circuit molecular graph generation.

A qubit-reuse generative ansatz over heavy atoms and bonds, simulated
exactly on dense state-vector or matrix-product-state backends, decoded
into molecular graphs under structural constraints, and trained against a
validity-times-uniqueness objective with COBYLA or GP-based Bayesian
optimization.
"""

from .ansatz import (
    AtomCodebook,
    BondCodebook,
    DEFAULT_ATOM_CODEBOOK,
    DEFAULT_BOND_CODEBOOK,
    Mode,
    ModeSpec,
    ParamLayout,
    build_hybrid_ansatz,
    build_layout,
    build_static_ansatz,
    param_count,
    qubit_count,
)
from .circuit import (
    And,
    Circuit,
    CircuitStats,
    CNot,
    Conditioned,
    ControlledOnNonZero,
    CRy,
    Measure,
    PauliX,
    Reset,
    Ry,
    SlotEquals,
    SlotsNonZero,
    ValidationReport,
    circuit_from_text,
    circuit_stats,
    circuit_to_text,
    ry_matrix,
    validate_circuit,
)
from .errors import CapacityError, ConfigError, FormatError, NumericalError, QmolgenError
from .molgraph import (
    DEFAULT_VALENCE,
    Fragment,
    MoleculeGraph,
    ValidationResult,
    canonical_key,
    decode_shot,
    load_fragment,
    parse_smiles,
    to_smiles,
    validate,
)
from .mps import MpsState, TruncationLog, apply_two_site, measure_site, reset_site, route_and_apply, run_shots_mps
from .optim import (
    CobylaResult,
    GPModel,
    ObjectiveSample,
    bo_step,
    cobyla_minimize,
    expected_improvement,
    gp_fit,
    gp_posterior,
)
from .pipeline import (
    Metrics,
    compute_metrics,
    decode_batch,
    run_bench,
    run_decode,
    run_generate,
    run_train,
)
from .sampling import SampleBatch, empirical_distribution, load_batch, save_batch_binary, save_batch_jsonl
from .statevec import (
    apply_gate,
    enumerate_distribution,
    measure_and_collapse,
    reset_qubit,
    run_shots,
    zero_state,
)

__version__ = "0.1.0"
