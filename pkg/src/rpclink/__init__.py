"""Desk-scale lab for timing-correlation deanonymization of blockchain RPC users.

Synthesizes ledgers and wallet packet-metadata traffic, recovers transaction
query timestamps from metadata alone, runs the multi-round candidate-window
intersection attack, and cross-checks the empirical rates against the
closed-form probabilistic model.
"""

from .analytics import (
    DistributionSet,
    ExpectedFi,
    ExpectedSuccess,
    ModelParams,
    appearance_prob,
    exclusion_prob,
    expected_fi,
    expected_success,
    success_rate,
)
from .attack import (
    AttackOutcome,
    CandidateSet,
    IntervalEstimate,
    OutcomeVariant,
    candidate_set,
    estimate_k,
    identify,
    intersect,
)
from .catalog import (
    ApiSpec,
    OverheadModel,
    Role,
    SizeRange,
    WalletProfile,
    builtin_profiles,
    get_profile,
    overlapping_apis,
    packet_size,
)
from .detector import (
    Classifier,
    FeatureVector,
    RuleConfig,
    TrainingSet,
    build_training_set,
    detect_tq,
    extract_features,
    feature_importance,
    rule_classify,
    size_filter,
    train,
)
from .experiment import (
    ExperimentReport,
    Scenario,
    run_experiment,
    run_trial,
    scenario_from_toml,
)
from .ledger import (
    ActivityModel,
    ActivityStats,
    Block,
    Ledger,
    LedgerConfig,
    Transaction,
    UserClass,
    classify_user,
    ingest_ledger,
    measure_activity,
    synth_ledger,
    transacting_threshold,
)
from .traffic import (
    JitterModel,
    PacketRecord,
    PacketTrace,
    SessionPlan,
    TxEvent,
    filter_rpc_flows,
    synth_session,
)

__version__ = "0.1.0"
