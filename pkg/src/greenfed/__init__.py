"""Desk-scale simulator for energy-aware federated learning.

Width-scalable CNN training, ordered-dropout submodels, heterogeneous
aggregation, energy-budgeted client selection and a full energy ledger
over renewable excess-energy traces.
"""

from .datasets import (
    Dataset,
    balanced_noniid_partition,
    dirichlet_partition,
    load_idx_dataset,
    synthetic_blobs,
)
from .energy import (
    ClientProfile,
    EnergyLedger,
    EnergyTrace,
    HardwareClass,
    PowerDomain,
    energy_consumed,
    synth_solar_trace,
)
from .hetero import (
    RATE_LADDER,
    ClientUpdate,
    aggregate,
    extract_submodel,
    submodel_view,
)
from .nn import BnStats, CnnArch, SgdConfig, collect_sbn_stats, local_train, sgd_step
from .orchestrator import (
    RoundRecord,
    Scenario,
    SimConfig,
    build_synthetic_scenario,
    evaluate,
    run_baseline_fedzero_mode,
    run_simulation,
)
from .selection import (
    CandidateAssignment,
    ClientState,
    SelectionConfig,
    SelectionResult,
    compute_omega,
    determine_model_size,
    estimate_batches,
    select_clients,
    selection_probability,
    statistical_utility,
    update_after_round,
)

__version__ = "0.1.0"
