"""Victim programs and the campaign primitives that drive them.

Three victims matter here: a probing test loop that re-runs a small vector
kernel and compares outputs, a branch-diversion target whose single store
feeds an integrity check, and an HMAC-SHA256 validator whose compression
stores are the fault surface.  Stressors are co-resident workloads pinned
to the victim's logical partner; they raise the victim core's temperature
and its appetite for faults.

Campaign runners here never iterate slice by slice.  The per-event and
per-slice probabilities averaged over supply noise are piecewise exact
(see processor.mean_event_fault_probability), so first-occurrence times
come from geometric draws and per-try fault counts from binomials.  The
distribution of observable outcomes is the same as a slice-level loop;
only the draw order differs, and that order is fixed and documented on
each runner.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import rng as rngmod
from .errors import (
    AbortedByCrash,
    InterpreterError,
    InvalidCore,
    InvariantError,
    UnknownStressor,
)
from .isa import MiniProgram, bundled_program, interpret
from .mca import MachineCheck, SurfacedFault
from .processor import (
    BitFlipPattern,
    CrashKind,
    PlatformState,
    ProcessorProfile,
    crash_kind_weights,
    draw_flip_pattern,
    effective_window_top_mv,
    mean_crash_probability,
    mean_event_fault_probability,
)
from .scanner import scan
from .sha256sim import EVENTS_PER_BLOCK, HmacContext

__all__ = [
    "CampaignResult",
    "RunOutcome",
    "RunStatus",
    "STRESSORS",
    "StressorSpec",
    "memory_diff",
    "run_hmac_victim",
    "run_poc_enclave",
    "run_test_loop",
    "stressor_profile",
]


# ---------------------------------------------------------------------------
# Stressors


@dataclass(frozen=True)
class StressorSpec:
    """What running a workload on the victim's logical partner does.

    `fault_multiplier` scales the calibrated per-event fault ceiling and is
    at least 1 ("none" is exactly 1).  `temp_boost_c` adds to the victim
    core's equilibrium temperature.  `program` names a bundled mini-ISA
    source when the stressor is one, None for native workloads.
    """

    name: str
    fault_multiplier: float
    temp_boost_c: float
    program: str | None = None

    def __post_init__(self):
        if self.fault_multiplier < 1.0:
            raise InvariantError("stressor multiplier is at least 1")


STRESSORS = {
    "shift_loop": StressorSpec("shift_loop", 24.75, 3.0, program="shift_stressor"),
    "twofish_avx": StressorSpec("twofish_avx", 2.0, 2.0),
    "none": StressorSpec("none", 1.0, 0.0),
}

# Alternate lookup keys accepted anywhere a stressor name is taken.
STRESSOR_ALIASES = {
    "listing2_shift_loop": "shift_loop",
    "listing2": "shift_loop",
    "shift": "shift_loop",
    "twofish": "twofish_avx",
}


def stressor_profile(name: str) -> StressorSpec:
    key = STRESSOR_ALIASES.get(name, name)
    try:
        return STRESSORS[key]
    except KeyError:
        raise UnknownStressor(
            f"unknown stressor {name!r}; know {sorted(STRESSORS)}"
        ) from None


# ---------------------------------------------------------------------------
# Run outcomes


class RunStatus(Enum):
    MATCH = "match"
    MISMATCH = "mismatch"
    CRASH = "crash"
    PROCESSOR_EXCEPTION = "processor_exception"


@dataclass(frozen=True)
class RunOutcome:
    """Terminal state of one test-loop run."""

    status: RunStatus
    iterations_executed: int
    diff: tuple[BitFlipPattern, ...] = ()
    crash: CrashKind | None = None
    exception: SurfacedFault | None = None

    def __post_init__(self):
        if self.status is RunStatus.MISMATCH and not self.diff:
            raise InvariantError("a mismatch carries a nonzero diff")
        if self.status is RunStatus.CRASH and self.crash is None:
            raise InvariantError("a crash outcome names its kind")
        if self.status is RunStatus.PROCESSOR_EXCEPTION and self.exception is None:
            raise InvariantError("an exception outcome names its kind")

    @classmethod
    def match(cls, iterations: int) -> "RunOutcome":
        return cls(RunStatus.MATCH, iterations)

    @classmethod
    def mismatch(cls, diff, iterations: int) -> "RunOutcome":
        return cls(RunStatus.MISMATCH, iterations, diff=tuple(diff))

    @classmethod
    def crashed(cls, kind: CrashKind, iterations: int) -> "RunOutcome":
        return cls(RunStatus.CRASH, iterations, crash=kind)

    @classmethod
    def excepted(cls, kind: SurfacedFault, iterations: int) -> "RunOutcome":
        return cls(RunStatus.PROCESSOR_EXCEPTION, iterations, exception=kind)


def memory_diff(before, after) -> tuple[BitFlipPattern, ...]:
    """Differences between two equal-sized memories, one pattern per
    differing 128-bit word (word index = byte offset // 16)."""
    if len(before) != len(after):
        raise InvariantError("memories must be the same size to diff")
    out = []
    for word in range(len(before) // 16):
        a = int.from_bytes(before[16 * word : 16 * word + 16], "little")
        b = int.from_bytes(after[16 * word : 16 * word + 16], "little")
        delta = a ^ b
        if delta:
            bits = frozenset(i for i in range(128) if delta >> i & 1)
            out.append(BitFlipPattern(word, bits))
    return tuple(out)


# ---------------------------------------------------------------------------
# Program geometry


@dataclass(frozen=True)
class _Geometry:
    """One fault-free execution plus where its eligible stores sit."""

    reference: object  # ExecutionResult
    store_slices: tuple[int, ...]  # slice offset of each eligible store execution
    store_insns: tuple[int, ...]  # instruction index behind each of those
    slices_per_iteration: int


def _resolve_program(program) -> MiniProgram:
    if isinstance(program, MiniProgram):
        return program
    return bundled_program(program)


def _geometry(program: MiniProgram, memory, xmm, scalar, max_slices) -> _Geometry:
    eligible = {hit.store_index for hit in scan(program)}
    trace: list[int] = []
    reference = interpret(
        program, memory, xmm=xmm, scalar=scalar, max_slices=max_slices, trace=trace
    )
    if not reference.halted:
        raise InterpreterError(
            f"{program.source_name}: does not halt within {max_slices} slices; "
            "a comparison loop needs a finishing victim"
        )
    store_slices = []
    store_insns = []
    for slice_index, insn_index in enumerate(trace):
        if insn_index in eligible:
            store_slices.append(slice_index)
            store_insns.append(insn_index)
    return _Geometry(reference, tuple(store_slices), tuple(store_insns), reference.slices)


def _any_of(p: float, n: float) -> float:
    # 1 - (1-p)^n, stable for tiny p and saturating at certainty.
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    return -math.expm1(n * math.log1p(-p))


def _truncated_geometric(u: float, p: float, n: int) -> int:
    # First-success index in 0..n-1 conditioned on at least one success
    # among n independent Bernoulli(p) trials.
    if p >= 1.0:
        return 0
    total = -math.expm1(n * math.log1p(-p))  # 1-(1-p)^n
    j = int(math.log1p(-u * total) / math.log1p(-p))
    return min(j, n - 1)


def _run_with_flips(program, memory, xmm, scalar, max_slices, geometry, flips):
    """Re-execute, XORing the given masks into eligible store executions.

    `flips` maps eligible-execution ordinal -> (mask, word_index_out list).
    """
    eligible = set(geometry.store_insns)
    counter = 0
    patterns: dict[int, BitFlipPattern] = {}

    def hook(store):
        nonlocal counter
        if store.insn_index not in eligible:
            return None
        ordinal = counter
        counter += 1
        if ordinal not in flips:
            return None
        mask = flips[ordinal]
        patterns[ordinal] = BitFlipPattern(
            store.address // 16,
            frozenset(i for i in range(128) if mask >> i & 1),
        )
        return store.value ^ mask

    result = interpret(
        program, memory, xmm=xmm, scalar=scalar, max_slices=max_slices, store_hook=hook
    )
    return result, patterns


# ---------------------------------------------------------------------------
# The probing test loop


def run_test_loop(
    program,
    env: PlatformState,
    max_iters: int,
    rng: np.random.Generator | None = None,
    *,
    memory=None,
    xmm=None,
    scalar=None,
    scenario: str = "probe",
    core: int | None = None,
    machine_check: MachineCheck | None = None,
    max_slices: int = 100_000,
) -> RunOutcome:
    """Reference once at nominal voltage, then iterate under `env`.

    Returns on the first iteration whose output differs from the reference
    (Mismatch with the bit-level diff), on a platform crash, or on a
    surfaced processor exception; Match after `max_iters` clean laps.  All
    failure modes are RunOutcome values, never exceptions.

    Draw order per run: first-fault iteration, first-crash slice, first-
    exception slice, then the winner's detail draws (faulted-event choice
    and flip patterns, crash kind, or exception kind).  First-occurrence
    times use the noise-averaged marginals, which is distribution-exact.
    """
    program = _resolve_program(program)
    if rng is None:
        rng = rngmod.stream(env.seed, "test-loop", env.pstate)
    profile = env.profile
    if core is None:
        core = env.victim_physical
        if core is None:
            core = 0
    core = profile.check_core(core)
    geom = _geometry(program, memory, xmm, scalar, max_slices)
    spi = geom.slices_per_iteration
    events = len(geom.store_slices)
    temp = float(env.core_temp_c[core])
    v_nom = env.nominal_voltage_mv()

    p_event = 0.0
    if events:
        p_event = mean_event_fault_probability(
            profile, core, env.pstate, scenario, env.stressor_fault_multiplier, v_nom, temp
        )
    q_iter = _any_of(p_event, events)
    g_slice = mean_crash_probability(profile, core, env.pstate, v_nom, temp)
    e_slice = 0.0
    if machine_check is not None and machine_check.surface_probability > 0.0:
        # Decode errors fire anywhere below the window top; the surfaced
        # fraction of them trips the victim program.
        n = profile.noise_mv
        top = effective_window_top_mv(profile, core, env.pstate, temp)
        if n > 0.0:
            below = min(max((top - v_nom + n) / (2.0 * n), 0.0), 1.0)
        else:
            below = 1.0 if v_nom <= top else 0.0
        e_slice = machine_check.decode_rate * machine_check.surface_probability * below

    if q_iter <= 0.0 and g_slice <= 0.0 and e_slice <= 0.0:
        return RunOutcome.match(max_iters)

    crash_slice = int(rng.geometric(g_slice)) - 1 if g_slice > 0.0 else None
    exc_slice = int(rng.geometric(e_slice)) - 1 if e_slice > 0.0 else None

    iter_base = 0  # iterations already survived
    while True:
        budget = max_iters - iter_base
        if budget <= 0:
            break
        fault_iter = None
        if q_iter > 0.0:
            draw = int(rng.geometric(q_iter))  # 1-based within remaining budget
            if draw <= budget:
                fault_iter = iter_base + draw - 1  # 0-based iteration index

        # Candidate (iteration, slice-within, precedence) triples; a crash
        # or exception during the faulting iteration preempts the output
        # comparison that happens at its end.
        candidates = []
        if crash_slice is not None and crash_slice < max_iters * spi:
            candidates.append((crash_slice // spi, crash_slice % spi, 0, "crash"))
        if exc_slice is not None and exc_slice < max_iters * spi:
            candidates.append((exc_slice // spi, exc_slice % spi, 1, "exception"))
        if fault_iter is not None:
            candidates.append((fault_iter, spi, 2, "fault"))
        candidates = [c for c in candidates if c[0] >= iter_base]
        if not candidates:
            break
        it, _, _, what = min(candidates)

        if what == "crash":
            kind = int(rng.choice(3, p=crash_kind_weights(profile.pstate_point(env.pstate).ratio)))
            kinds = (CrashKind.KERNEL_EXCEPTION, CrashKind.FREEZE, CrashKind.HARD_CRASH)
            return RunOutcome.crashed(kinds[kind], it)
        if what == "exception":
            which = (
                SurfacedFault.INVALID_OPCODE
                if rng.uniform() < 0.7
                else SurfacedFault.GENERAL_PROTECTION
            )
            return RunOutcome.excepted(which, it)

        # Fault wins: pick which eligible store faulted first, then give
        # each later store in the same iteration its independent chance.
        j = _truncated_geometric(float(rng.uniform()), p_event, events)
        ordinals = [j]
        if j + 1 < events:
            extra = rng.uniform(size=events - j - 1) < p_event
            ordinals.extend(j + 1 + k for k in np.flatnonzero(extra))
        flips = {}
        for ordinal in ordinals:
            # Only the mask matters; the outcome's diff carries real word
            # indexes computed from memory.
            pattern = draw_flip_pattern(profile, core, ordinal, rng)
            flips[ordinal] = pattern.mask
        faulted, _ = _run_with_flips(program, memory, xmm, scalar, max_slices, geom, flips)
        diff = memory_diff(geom.reference.memory, faulted.memory)
        if diff:
            return RunOutcome.mismatch(diff, it + 1)
        # Corruption never reached the output buffer; the loop keeps going.
        iter_base = it + 1

    return RunOutcome.match(max_iters)


# ---------------------------------------------------------------------------
# Branch-diversion victim


def _pin_check(env: PlatformState, target_core: int) -> int:
    core = env.profile.check_core(target_core)
    pinned = env.victim_physical
    if pinned is not None and pinned != core:
        raise InvalidCore(
            f"victim is pinned to physical core {pinned}, asked to run on {core}"
        )
    return core


# The guarded-branch victim checks its published conjunction against the
# all-ones pattern, so both input words and the comparison register are
# seeded with ones inside an otherwise standard 4 KiB memory.
POC_MEMORY = b"\xff" * 32 + b"\x00" * (4096 - 32)
POC_SCALARS = {"rax": 0xFFFF_FFFF_FFFF_FFFF}


class _DiversionOracle:
    """Memoized check that a mask XORed into the guarded store really does
    divert control flow.  One real execution per distinct mask."""

    def __init__(self, program: MiniProgram, geometry: _Geometry, memory, scalar):
        self.program = program
        self.geometry = geometry
        self.memory = memory
        self.scalar = scalar
        self.reference_halt = geometry.reference.halt_index
        self._seen: dict[int, bool] = {}

    def diverts(self, mask: int) -> bool:
        hit = self._seen.get(mask)
        if hit is None:
            result, _ = _run_with_flips(
                self.program, self.memory, None, self.scalar, 100_000, self.geometry, {0: mask}
            )
            hit = result.halt_index != self.reference_halt
            self._seen[mask] = hit
        return hit


def run_poc_enclave(
    env: PlatformState,
    target_core: int,
    tries: int,
    rng: np.random.Generator | None = None,
    *,
    program="poc_and_branch",
    exposure_slices: int | None = None,
) -> int:
    """Run the guarded-branch victim `tries` times; count diversions.

    A try succeeds when a flip lands in the checked store and the follow-up
    comparison takes the recovery path.  Each distinct flip mask is proved
    to divert by actually executing the program once with that mask.

    `exposure_slices` is how many slices per try spend undervolted; it
    defaults to the whole program, and campaigns that gate the undervolt
    around the store window pass something smaller.

    Draw order: per-try fault Bernoullis as one block, then the crash
    geometric, then per-fault detail draws in try order.  Raises
    AbortedByCrash with a (successes, tries_completed) pair if the
    platform dies mid-run.
    """
    if tries < 0:
        raise InvariantError("tries is nonnegative")
    program = _resolve_program(program)
    core = _pin_check(env, target_core)
    profile = env.profile
    if rng is None:
        rng = rngmod.stream(env.seed, "poc", core)
    geom = _geometry(program, POC_MEMORY, None, POC_SCALARS, 100_000)
    if len(geom.store_slices) != 1:
        raise InvariantError(
            f"{program.source_name}: expected exactly one guarded store, "
            f"found {len(geom.store_slices)}"
        )
    temp = float(env.core_temp_c[core])
    v_nom = env.nominal_voltage_mv()
    q = mean_event_fault_probability(
        profile, core, env.pstate, "poc", env.stressor_fault_multiplier, v_nom, temp
    )
    g = mean_crash_probability(profile, core, env.pstate, v_nom, temp)
    if exposure_slices is None:
        exposure_slices = geom.slices_per_iteration
    c_try = _any_of(g, exposure_slices)

    faulted = rng.random(tries) < q if q > 0.0 else np.zeros(tries, dtype=bool)
    crash_try = int(rng.geometric(c_try)) if c_try > 0.0 else None  # 1-based

    completed = tries if crash_try is None or crash_try > tries else crash_try - 1
    oracle = _DiversionOracle(program, geom, POC_MEMORY, POC_SCALARS)
    successes = 0
    # Word index 0: the guarded store is the only word that matters here.
    for i in np.flatnonzero(faulted[:completed]):
        pattern = draw_flip_pattern(profile, core, 0, rng)
        if oracle.diverts(pattern.mask):
            successes += 1
    if completed < tries:
        raise AbortedByCrash(
            f"platform crashed on try {crash_try} of {tries}",
            partial=(successes, completed),
        )
    return successes


# ---------------------------------------------------------------------------
# HMAC validation victim

# Fixed secret and payloads: the victim always validates the same MAC, so
# any corrupted recomputation fails the check.
HMAC_KEY = bytes.fromhex(
    "6b2602361a8a3b8017f1b0f4ea4ad18f79b5bc63e3a1fbd6e8c29ad46b2fa723"
)
PAYLOAD_SIZES = {"hmac32": 32, "hmac1k": 1024}
_PAYLOAD_ALIASES = {
    "hmac_32b": "hmac32",
    "hmac_1kb": "hmac1k",
    "32": "hmac32",
    "1024": "hmac1k",
}


def payload_name(size_or_name) -> str:
    key = str(size_or_name).lower()
    key = _PAYLOAD_ALIASES.get(key, key)
    if key not in PAYLOAD_SIZES:
        raise InvariantError(f"payload is one of {sorted(PAYLOAD_SIZES)}, not {size_or_name!r}")
    return key


def hmac_scenario(payload: str) -> str:
    return {"hmac32": "hmac_32b", "hmac1k": "hmac_1kb"}[payload]


def _payload_bytes(payload: str) -> bytes:
    n = PAYLOAD_SIZES[payload]
    return bytes((7 * i + 13) & 0xFF for i in range(n))


@dataclass(frozen=True)
class CampaignResult:
    """Aggregate of a repeated-runs fault campaign."""

    target_core: int
    scenario: str
    tries: int
    successes: int
    crashes: int
    per_run: tuple[tuple[int, int], ...]  # (successes, tries) per run
    mean_per_10k: float
    sigma: float

    def __post_init__(self):
        if self.successes > self.tries:
            raise InvariantError("successes cannot exceed tries")
        if sum(s for s, _ in self.per_run) != self.successes:
            raise InvariantError("per-run successes must sum to the total")
        if sum(t for _, t in self.per_run) != self.tries:
            raise InvariantError("per-run tries must sum to the total")

    @classmethod
    def from_runs(cls, target_core, scenario, per_run, crashes=0) -> "CampaignResult":
        per_run = tuple((int(s), int(t)) for s, t in per_run)
        rates = [10_000.0 * s / t for s, t in per_run if t > 0]
        mean = float(np.mean(rates)) if rates else 0.0
        sigma = float(np.std(rates, ddof=1)) if len(rates) > 1 else 0.0
        return cls(
            target_core=int(target_core),
            scenario=scenario,
            tries=sum(t for _, t in per_run),
            successes=sum(s for s, _ in per_run),
            crashes=int(crashes),
            per_run=per_run,
            mean_per_10k=mean,
            sigma=sigma,
        )

    def to_json(self) -> dict:
        return {
            "target_core": self.target_core,
            "scenario": self.scenario,
            "tries": self.tries,
            "successes": self.successes,
            "crashes": self.crashes,
            "per_run": [list(pair) for pair in self.per_run],
            "mean_per_10k": round(self.mean_per_10k, 4),
            "sigma": round(self.sigma, 4),
        }


def _hmac_single_run(
    ctx: HmacContext,
    profile: ProcessorProfile,
    core: int,
    p_event: float,
    c_try: float,
    tries: int,
    rng: np.random.Generator,
) -> tuple[int, int, bool]:
    """(successes, tries_completed, crashed) for one run of the validator.

    Per try, the number of faulted compression stores is Binomial(E, p);
    the faulted events are drawn without replacement and each gets a flip
    pattern from the core's tables.  Success means the recomputed MAC no
    longer validates.  Draw order: the per-try binomial block, the crash
    geometric, then detail draws in try order.
    """
    total = ctx.total_events
    ks = rng.binomial(total, p_event, size=tries) if p_event > 0.0 else np.zeros(tries, dtype=int)
    crash_try = int(rng.geometric(c_try)) if c_try > 0.0 else None
    completed = tries if crash_try is None or crash_try > tries else crash_try - 1

    successes = 0
    for i in range(completed):
        k = int(ks[i])
        if k == 0:
            continue
        chosen = rng.choice(total, size=k, replace=False)
        faults = {}
        for g in sorted(int(x) for x in chosen):
            block, event = ctx.locate_event(g)
            pattern = draw_flip_pattern(profile, core, event, rng)
            faults[(block, event)] = pattern.mask
        mac = ctx.mac_with_faults(faults)
        if mac != ctx.clean_mac:
            successes += 1
    return successes, completed, completed < tries


def run_hmac_victim(
    env: PlatformState,
    target_core: int,
    payload_size,
    tries: int,
    *,
    runs: int = 5,
    jobs: int = 1,
    seed: int | None = None,
    guard_slices: int = 10,
) -> CampaignResult:
    """Mean successes per 10k tries and sigma across `runs` runs.

    Each run owns an independent RNG substream keyed by its index, so the
    aggregate is identical however runs are scheduled across threads.
    Raises AbortedByCrash carrying the partial CampaignResult if any run
    crashes; runs after the first crashed one are discarded, because the
    simulated machine is gone.
    """
    payload = payload_name(payload_size)
    scenario = hmac_scenario(payload)
    core = _pin_check(env, target_core)
    profile = env.profile
    if seed is None:
        seed = env.seed
    ctx = HmacContext(HMAC_KEY, _payload_bytes(payload))

    temp = float(env.core_temp_c[core])
    v_nom = env.nominal_voltage_mv()
    p_event = mean_event_fault_probability(
        profile, core, env.pstate, scenario, env.stressor_fault_multiplier, v_nom, temp
    )
    g = mean_crash_probability(profile, core, env.pstate, v_nom, temp)
    # One slice per compression store, plus the undervolt guard margin on
    # both sides of the fault-prone window.
    slices_per_try = ctx.total_events + 2 * guard_slices
    c_try = _any_of(g, slices_per_try)

    def one(run_index: int):
        gen = rngmod.stream(seed, "hmac", payload, core, run_index)
        return _hmac_single_run(ctx, profile, core, p_event, c_try, tries, gen)

    if jobs > 1 and runs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, range(runs)))
    else:
        outcomes = [one(r) for r in range(runs)]

    per_run = []
    for r, (successes, completed, crashed) in enumerate(outcomes):
        per_run.append((successes, completed))
        if crashed:
            partial = CampaignResult.from_runs(core, scenario, per_run, crashes=1)
            raise AbortedByCrash(
                f"platform crashed during run {r} of {runs}", partial=partial
            )
    return CampaignResult.from_runs(core, scenario, per_run)
