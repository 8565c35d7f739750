"""Deterministic laboratory for software-controlled undervolting faults.

The package models the full chain end to end: the voltage mailbox word
format (`msr`), a calibrated multi-core fault simulator (`processor`,
`mca`), a small vector ISA with susceptible-pattern scanning (`isa`,
`scanner`), faultable victim workloads (`sha256sim`, `victims`), and the
three-phase attack workflow (`orchestrator`).  Everything downstream of a
seed is reproducible, including under parallel execution.
"""

from .errors import (
    AbortedByCrash,
    FormatError,
    InterpreterError,
    InvalidCore,
    InvariantError,
    NoWindowFound,
    ParseError,
    RangeError,
    SchemaError,
    UnknownCoreOrPState,
    UnknownStressor,
    VoltlabError,
)
from .msr import (
    MailboxCommand,
    MailboxOp,
    MsrWrite,
    PState,
    PStateInterface,
    VoltageDomain,
    VoltageMode,
    decode_mailbox,
    encode_mailbox,
    encode_offset,
    plan_pstate_request,
    pstate_frequency_mhz,
)
from .processor import (
    PlatformState,
    ProcessorProfile,
    VoltageRegion,
    bundled_profile_names,
    classify_voltage,
    load_profile,
    region_boundaries_mv,
)
from .isa import (
    MiniProgram,
    bundled_program,
    bundled_program_names,
    interpret,
    parse_program,
)
from .scanner import PatternHit, PatternKind, estimate_window, scan
from .mca import MachineCheck, MceKind, MceLog, MceRecord, SurfacedFault
from .sha256sim import HmacContext, hmac_sha256, sha256
from .victims import (
    CampaignResult,
    RunOutcome,
    RunStatus,
    run_hmac_victim,
    run_poc_enclave,
    run_test_loop,
    stressor_profile,
)
from .orchestrator import (
    FaultStats,
    ProbeReport,
    SystemConfig,
    VoltagePlan,
    phase1_find_window,
    phase2_probe_cores,
    phase3_attack,
    run_campaign,
    setup_system,
)

__version__ = "0.1.0"

__all__ = [
    "AbortedByCrash",
    "CampaignResult",
    "FaultStats",
    "FormatError",
    "HmacContext",
    "InterpreterError",
    "InvalidCore",
    "InvariantError",
    "MachineCheck",
    "MceKind",
    "MceLog",
    "MceRecord",
    "SurfacedFault",
    "MailboxCommand",
    "MailboxOp",
    "MiniProgram",
    "MsrWrite",
    "NoWindowFound",
    "ParseError",
    "PatternHit",
    "PatternKind",
    "PlatformState",
    "ProbeReport",
    "ProcessorProfile",
    "PState",
    "PStateInterface",
    "RangeError",
    "RunOutcome",
    "RunStatus",
    "SchemaError",
    "SystemConfig",
    "UnknownCoreOrPState",
    "UnknownStressor",
    "VoltageDomain",
    "VoltageMode",
    "VoltagePlan",
    "VoltageRegion",
    "VoltlabError",
    "bundled_profile_names",
    "bundled_program",
    "bundled_program_names",
    "classify_voltage",
    "decode_mailbox",
    "encode_mailbox",
    "encode_offset",
    "estimate_window",
    "hmac_sha256",
    "interpret",
    "load_profile",
    "parse_program",
    "region_boundaries_mv",
    "phase1_find_window",
    "phase2_probe_cores",
    "phase3_attack",
    "plan_pstate_request",
    "pstate_frequency_mhz",
    "run_campaign",
    "run_hmac_victim",
    "run_poc_enclave",
    "run_test_loop",
    "scan",
    "setup_system",
    "sha256",
    "stressor_profile",
    "__version__",
]
