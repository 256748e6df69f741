"""Attack-path modeling over container/link threat models.

Build a model of systems, their links, and attack rules; enumerate every
path to a goal; derive signatures, compare what-if changes, reconcile scan
data; and run shared war-game sessions over HTTP.
"""
from .analysis import (
    AttackScenario,
    ChangeGroup,
    MatchResult,
    MetricsReport,
    ModelEdit,
    Signature,
    SocioEngFinding,
    apply_change_group,
    compare_models,
    extract_spot_model,
    extrapolate_variants,
    find_socioeng_points,
    generate_signatures,
    match_signature,
    sensitivity_report,
)
from .engine import (
    Binding,
    Firing,
    Trajectory,
    automatic_closure,
    enabled_bindings,
    fire_rule,
    goal_satisfied,
)
from .errors import (
    ClosureBudgetExceeded,
    EmptyFocus,
    InvalidEdit,
    InvalidGoal,
    InvalidSequence,
    KindMismatch,
    ModelMismatch,
    ModelValidationError,
    NonUnknownTarget,
    ParseError,
    PermissionDenied,
    ReplayDivergence,
    RuleNotEnabled,
    SandtableError,
    SchemaError,
    StaleDiscrepancies,
    UnknownSession,
    UnknownSubject,
)
from .ingest import (
    detect_discrepancies,
    apply_discrepancies,
    model_document,
    model_hash,
    parse_model_document,
    parse_observations,
    serialize_model,
    synthesize_observations,
)
from .model import (
    ABSENT,
    Assignment,
    ConditionAtom,
    Container,
    ConventionalFact,
    ConventionalRule,
    GenericRule,
    Goal,
    Impact,
    Link,
    Model,
    ModelIndex,
    UNKNOWN,
    validate_model,
)
from .search import (
    AttackPath,
    PathSet,
    SearchLimits,
    critical_access_filter,
    enumerate_paths,
    node_frequency,
    replay_path,
    rule_frequency,
)
from .state import WorldState, diff_states, initial_state, state_hash

__version__ = "0.1.0"

__all__ = [
    "ABSENT",
    "Assignment",
    "AttackPath",
    "AttackScenario",
    "Binding",
    "ChangeGroup",
    "ClosureBudgetExceeded",
    "ConditionAtom",
    "Container",
    "ConventionalFact",
    "ConventionalRule",
    "EmptyFocus",
    "Firing",
    "GenericRule",
    "Goal",
    "Impact",
    "InvalidEdit",
    "InvalidGoal",
    "InvalidSequence",
    "KindMismatch",
    "Link",
    "MatchResult",
    "MetricsReport",
    "Model",
    "ModelEdit",
    "ModelIndex",
    "ModelMismatch",
    "ModelValidationError",
    "NonUnknownTarget",
    "ParseError",
    "PathSet",
    "PermissionDenied",
    "ReplayDivergence",
    "RuleNotEnabled",
    "SandtableError",
    "SchemaError",
    "SearchLimits",
    "Signature",
    "SocioEngFinding",
    "StaleDiscrepancies",
    "Trajectory",
    "UNKNOWN",
    "UnknownSession",
    "UnknownSubject",
    "WorldState",
    "apply_change_group",
    "apply_discrepancies",
    "automatic_closure",
    "compare_models",
    "critical_access_filter",
    "detect_discrepancies",
    "diff_states",
    "enabled_bindings",
    "enumerate_paths",
    "extract_spot_model",
    "extrapolate_variants",
    "find_socioeng_points",
    "fire_rule",
    "generate_signatures",
    "goal_satisfied",
    "initial_state",
    "match_signature",
    "model_document",
    "model_hash",
    "node_frequency",
    "parse_model_document",
    "parse_observations",
    "replay_path",
    "rule_frequency",
    "sensitivity_report",
    "serialize_model",
    "state_hash",
    "synthesize_observations",
    "validate_model",
]
