"""Calibrated multi-core fault model.

A ProcessorProfile carries, per (core, pstate), the voltage where silent
SIMD faults begin (the window top), how wide the exploitable band under it
is, and per-scenario probabilities that an eligible vector store actually
corrupts data once the supply sits inside that band.  A PlatformState is
one simulated machine wired to a profile: pstate pin, applied undervolt,
per-core temperatures, and the logical-core role assignment.

Voltage geometry, from high to low supply::

      normal
    ---------------------------- window top + corrected band
      corrected errors            (machine-check logged, data intact)
    ---------------------------- window top (shifts with temperature)
      exploit window              (silent data corruption)
    ---------------------------- window top - window width
      unstable                    (crash process takes over)

All internal arithmetic happens in millivolts; volt-valued inputs are
quantized to whole microvolts on entry so that profile constants written
with three decimals land exactly on band boundaries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from importlib import resources

import numpy as np

from .errors import InvariantError, SchemaError, UnknownCoreOrPState

SCHEMA_VERSION = 1

# Fault manifestation ramp: zero at the window top, saturated from halfway
# down.  Calibration targets assume the saturated regime.
RAMP_SATURATION_DEPTH = 0.5

# Crash-kind weighting pivots around this ratio (2700 MHz).
_KIND_PIVOT_RATIO = 27.0


class VoltageRegion(IntEnum):
    """Supply regions in increasing severity."""

    NORMAL = 0
    CORRECTED_ERRORS = 1
    EXPLOIT_WINDOW = 2
    UNSTABLE = 3


class CrashKind(IntEnum):
    KERNEL_EXCEPTION = 0  # recoverable: logged, machine survives reboot-free
    FREEZE = 1
    HARD_CRASH = 2


ROLE_IDLE = "idle"
ROLE_ATTACKER = "attacker"
ROLE_VICTIM = "victim"
ROLE_STRESSOR = "stressor"


def _quantize_mv(volts: float) -> float:
    """Volts -> millivolts, snapped to whole microvolts."""
    return round(volts * 1e6) / 1000.0


def manifestation(depth_fraction: float) -> float:
    """Piecewise-linear ramp over normalized window depth, clamped to [0, 1]."""
    if depth_fraction <= 0.0:
        return 0.0
    if depth_fraction >= RAMP_SATURATION_DEPTH:
        return 1.0
    return depth_fraction / RAMP_SATURATION_DEPTH


def manifestation_array(depth_fraction: np.ndarray) -> np.ndarray:
    return np.clip(depth_fraction / RAMP_SATURATION_DEPTH, 0.0, 1.0)


@dataclass(frozen=True)
class PStatePoint:
    ratio: int
    base_voltage_mv: float
    reference_temp_c: float
    exploit_window_mv: float
    exploit_factor: float
    fault_voltage_mv: tuple[float, ...]  # window top per core


@dataclass(frozen=True)
class CalibrationEntry:
    pstate_gated: bool
    p_event_max: tuple[float, ...]  # per core


@dataclass(frozen=True)
class CrashParams:
    rate_per_slice: float
    depth_slope_per_mv: float
    reboot_slices: int


@dataclass(frozen=True)
class BitFlipPattern:
    """One corrupted 128-bit word: which word, and which bits flipped."""

    word_index: int
    flipped_bits: frozenset[int]

    def __post_init__(self):
        if not self.flipped_bits:
            raise InvariantError("a flip pattern needs at least one bit")
        if any(not 0 <= b < 128 for b in self.flipped_bits):
            raise InvariantError("flip bit positions live in 0..127")

    @property
    def mask(self) -> int:
        m = 0
        for b in self.flipped_bits:
            m |= 1 << b
        return m

    @property
    def byte_positions(self) -> frozenset[int]:
        return frozenset(b // 8 for b in self.flipped_bits)

    @property
    def multiplicity(self) -> int:
        return len(self.flipped_bits)


@dataclass(frozen=True)
class EligibleStoreEvent:
    """A fault-eligible vector store about to retire."""

    scenario: str
    word_index: int
    slice_index: int = 0


class ProcessorProfile:
    """Immutable calibration data for one processor model."""

    def __init__(self, raw: dict, origin: str = "<dict>"):
        self._origin = origin
        try:
            if raw["schema_version"] != SCHEMA_VERSION:
                raise SchemaError(
                    f"{origin}: schema_version {raw['schema_version']} unsupported"
                )
            self.name: str = raw["model_name"]
            self.physical_cores: int = int(raw["physical_cores"])
            self.threads_per_core: int = int(raw["threads_per_core"])
            self.base_clock_mhz: int = int(raw["base_clock_mhz"])
            self.ambient_temp_c: float = float(raw["ambient_temp_c"])
            self.noise_mv: float = float(raw["noise_mv"])
            self.temp_coeff_mv_per_c: float = float(raw["temp_coeff_mv_per_c"])
            self.corrected_band_mv: float = float(raw["corrected_band_mv"])
            self.corrected_log_rate: float = float(raw["corrected_log_rate_per_slice"])
            self.decode_error_rate: float = float(raw["decode_error_rate_per_slice"])
            self.default_attack_pstate: str = normalize_pstate(raw["default_attack_pstate"])
            self.affinity_source: str = raw.get("affinity_source", "unspecified")
            crash = raw["crash"]
            self.crash = CrashParams(
                float(crash["rate_per_slice"]),
                float(crash["depth_slope_per_mv"]),
                int(crash["reboot_slices"]),
            )
            self.pstates: dict[str, PStatePoint] = {}
            for key, entry in raw["pstates"].items():
                norm = normalize_pstate(key)
                self.pstates[norm] = PStatePoint(
                    ratio=int(norm, 16),
                    base_voltage_mv=_quantize_mv(entry["base_voltage_v"]),
                    reference_temp_c=float(entry["reference_temp_c"]),
                    exploit_window_mv=float(entry["exploit_window_mv"]),
                    exploit_factor=float(entry["exploit_factor"]),
                    fault_voltage_mv=tuple(
                        _quantize_mv(v) for v in entry["fault_voltage_v"]
                    ),
                )
            self.byte_affinity = np.asarray(raw["byte_affinity"], dtype=float)
            self.multiplicity = np.asarray(raw["multiplicity"], dtype=float)
            self.calibration: dict[str, CalibrationEntry] = {}
            for scenario, entry in raw["calibration"].items():
                self.calibration[scenario] = CalibrationEntry(
                    bool(entry["pstate_gated"]),
                    tuple(float(p) for p in entry["p_event_max"]),
                )
        except KeyError as missing:
            raise SchemaError(f"{origin}: missing field {missing}") from None
        self._validate()
        # Per-core bit weights: byte affinity spread uniformly over each
        # byte's 8 bits, normalized for sampling without replacement.
        rows = []
        for core in range(self.physical_cores):
            per_bit = np.repeat(self.byte_affinity[core], 8) / 8.0
            rows.append(per_bit / per_bit.sum())
        self._bit_weights = np.asarray(rows)

    def _validate(self):
        n = self.physical_cores
        if n < 1 or self.threads_per_core < 1:
            raise InvariantError(f"{self._origin}: core topology must be positive")
        if self.noise_mv < 0 or self.corrected_band_mv < 0:
            raise InvariantError(f"{self._origin}: noise and band widths are nonnegative")
        if self.byte_affinity.shape != (n, 16):
            raise SchemaError(f"{self._origin}: byte_affinity must be {n}x16")
        if self.multiplicity.shape != (n, 3):
            raise SchemaError(f"{self._origin}: multiplicity must be {n}x3")
        if (self.byte_affinity < 0).any():
            raise InvariantError(f"{self._origin}: affinity weights are nonnegative")
        if (self.byte_affinity.sum(axis=1) <= 0).any():
            raise InvariantError(f"{self._origin}: every core needs a positive affinity weight")
        if (self.multiplicity < 0).any():
            raise InvariantError(f"{self._origin}: multiplicity entries are nonnegative")
        sums = self.multiplicity.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise InvariantError(f"{self._origin}: multiplicity rows must sum to 1")
        for key, point in self.pstates.items():
            if len(point.fault_voltage_mv) != n:
                raise SchemaError(f"{self._origin}: {key} fault voltages must cover {n} cores")
            if point.exploit_window_mv < 0:
                raise InvariantError(f"{self._origin}: {key} window width is nonnegative")
            if not 0.0 <= point.exploit_factor <= 1.0:
                raise InvariantError(f"{self._origin}: {key} exploit factor in [0, 1]")
            for core, fault_mv in enumerate(point.fault_voltage_mv):
                if fault_mv >= point.base_voltage_mv:
                    raise InvariantError(
                        f"{self._origin}: {key} core {core} fault voltage "
                        f"{fault_mv} mV not below base {point.base_voltage_mv} mV"
                    )
        for scenario, entry in self.calibration.items():
            if len(entry.p_event_max) != n:
                raise SchemaError(f"{self._origin}: calibration {scenario} must cover {n} cores")
            if any(not 0.0 <= p <= 1.0 for p in entry.p_event_max):
                raise InvariantError(f"{self._origin}: calibration {scenario} out of [0, 1]")
        if self.default_attack_pstate not in self.pstates:
            raise SchemaError(f"{self._origin}: default attack pstate undefined")

    # -- lookups ---------------------------------------------------------

    def pstate_point(self, pstate: str | int) -> PStatePoint:
        key = normalize_pstate(pstate)
        try:
            return self.pstates[key]
        except KeyError:
            raise UnknownCoreOrPState(f"{self.name} does not define pstate {key}") from None

    def check_core(self, core: int) -> int:
        if not 0 <= core < self.physical_cores:
            raise UnknownCoreOrPState(f"{self.name} has no core {core}")
        return core

    def calibration_entry(self, scenario: str) -> CalibrationEntry:
        try:
            return self.calibration[scenario]
        except KeyError:
            raise UnknownCoreOrPState(f"{self.name} has no calibration for {scenario!r}") from None

    def bit_weights(self, core: int) -> np.ndarray:
        return self._bit_weights[self.check_core(core)]

    def logical_cores(self) -> int:
        return self.physical_cores * self.threads_per_core


def normalize_pstate(pstate: str | int) -> str:
    """Canonical lowercase hex key, e.g. 0x1B or '0x1B' or 27 -> '0x1b'."""
    if isinstance(pstate, str):
        value = int(pstate, 16)
    else:
        value = int(pstate)
    if not 1 <= value <= 255:
        raise UnknownCoreOrPState(f"pstate ratio {value} outside 1..=255")
    return f"0x{value:02x}"


def load_profile(name_or_path) -> ProcessorProfile:
    """Load a bundled profile by name (e.g. 'i7-8700K') or any JSON path."""
    text = None
    origin = str(name_or_path)
    candidate = str(name_or_path)
    if candidate.lower().endswith(".json") or "/" in candidate:
        with open(candidate, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        stem = candidate.lower()
        res = resources.files("voltlab").joinpath(f"data/profiles/{stem}.json")
        if not res.is_file():
            raise SchemaError(f"no bundled profile named {candidate!r}")
        text = res.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{origin}: not valid JSON ({exc})") from None
    return ProcessorProfile(raw, origin=origin)


def bundled_profile_names() -> list[str]:
    pkg = resources.files("voltlab").joinpath("data/profiles")
    return sorted(p.name[: -len(".json")] for p in pkg.iterdir() if p.name.endswith(".json"))


# ---------------------------------------------------------------------------
# Platform state


@dataclass
class PlatformState:
    """One simulated machine.  Owned by a single campaign at a time."""

    profile: ProcessorProfile
    pstate: str
    offset_mv: dict[int, int] = field(default_factory=dict)  # domain -> mV
    core_temp_c: np.ndarray = None
    assignment: tuple[str, ...] = ()
    stressor_name: str = "none"
    stressor_fault_multiplier: float = 1.0
    stressor_temp_boost_c: float = 0.0
    interference_disabled: bool = False
    seed: int = 0
    slice_time_s: float = 1e-6
    temp_tau_s: float = 2.0

    def __post_init__(self):
        self.pstate = normalize_pstate(self.pstate)
        self.profile.pstate_point(self.pstate)
        if self.core_temp_c is None:
            self.core_temp_c = np.full(
                self.profile.physical_cores, self.profile.ambient_temp_c, dtype=float
            )
        else:
            self.core_temp_c = np.asarray(self.core_temp_c, dtype=float).copy()
        if not self.assignment:
            self.assignment = (ROLE_IDLE,) * self.profile.logical_cores()
        if len(self.assignment) != self.profile.logical_cores():
            raise InvariantError("assignment must cover every logical core")
        if sum(1 for r in self.assignment if r == ROLE_VICTIM) > 1:
            raise InvariantError("at most one logical core may run the victim")
        if self.stressor_fault_multiplier < 1.0:
            raise InvariantError("stressor fault multiplier is at least 1")

    # Logical core L is thread L // physical of physical core L % physical.
    def physical_of(self, logical: int) -> int:
        return logical % self.profile.physical_cores

    def partner_of(self, logical: int) -> int:
        return (logical + self.profile.physical_cores) % self.profile.logical_cores()

    @property
    def victim_logical(self) -> int | None:
        for idx, role in enumerate(self.assignment):
            if role == ROLE_VICTIM:
                return idx
        return None

    @property
    def victim_physical(self) -> int | None:
        logical = self.victim_logical
        return None if logical is None else self.physical_of(logical)

    def core_offset_mv(self) -> float:
        """Offset applied to the core voltage domain (domain 0)."""
        return float(self.offset_mv.get(0, 0))

    def nominal_voltage_mv(self) -> float:
        point = self.profile.pstate_point(self.pstate)
        return point.base_voltage_mv + self.core_offset_mv()

    def victim_temp_c(self) -> float:
        core = self.victim_physical
        if core is None:
            return float(self.core_temp_c.mean())
        return float(self.core_temp_c[core])


# ---------------------------------------------------------------------------
# Voltage geometry


def effective_window_top_mv(
    profile: ProcessorProfile, core: int, pstate: str | int, temp_c: float
) -> float:
    """Window top for this core, shifted up by heat.

    The shift is temp_coeff_mv_per_c per degree above the pstate's reference
    temperature; cooler cores fault slightly later.
    """
    point = profile.pstate_point(pstate)
    top = point.fault_voltage_mv[profile.check_core(core)]
    return top + profile.temp_coeff_mv_per_c * (temp_c - point.reference_temp_c)


def region_boundaries_mv(
    profile: ProcessorProfile, core: int, pstate: str | int, temp_c: float
) -> tuple[float, float, float]:
    """(corrected band top, window top, instability boundary) in mV."""
    point = profile.pstate_point(pstate)
    top = effective_window_top_mv(profile, core, pstate, temp_c)
    return top + profile.corrected_band_mv, top, top - point.exploit_window_mv


def classify_voltage(
    profile: ProcessorProfile,
    core: int,
    pstate: str | int,
    voltage_v: float,
    temp_c: float,
) -> VoltageRegion:
    """Which region an effective core voltage lands in."""
    v_mv = _quantize_mv(voltage_v)
    corrected_top, top, floor = region_boundaries_mv(profile, core, pstate, temp_c)
    if v_mv > corrected_top:
        return VoltageRegion.NORMAL
    if v_mv > top:
        return VoltageRegion.CORRECTED_ERRORS
    if v_mv > floor:
        return VoltageRegion.EXPLOIT_WINDOW
    return VoltageRegion.UNSTABLE


def event_fault_probability(
    profile: ProcessorProfile,
    core: int,
    pstate: str | int,
    scenario: str,
    stressor_multiplier: float,
    v_eff_mv: float,
    temp_c: float,
) -> float:
    """Per-event fault probability at one effective voltage.

    Zero outside the exploit window.  Inside, the calibrated per-core
    ceiling is scaled by the stressor multiplier, the pstate's exploit
    factor (for gated scenarios), and the depth ramp, then clamped.
    """
    point = profile.pstate_point(pstate)
    top = effective_window_top_mv(profile, core, pstate, temp_c)
    width = point.exploit_window_mv
    if width <= 0.0 or v_eff_mv > top or v_eff_mv <= top - width:
        return 0.0
    entry = profile.calibration_entry(scenario)
    p = entry.p_event_max[core] * stressor_multiplier
    if entry.pstate_gated:
        p *= point.exploit_factor
    p *= manifestation((top - v_eff_mv) / width)
    return min(p, 1.0)


def _integrate_piecewise(fn, lo: float, hi: float, breakpoints) -> float:
    """Exact integral of a function that is linear between breakpoints.

    Midpoint rule per piece: exact on linear segments, and indifferent to
    which side of a jump the breakpoint itself belongs to.
    """
    if hi <= lo:
        return 0.0
    points = sorted({lo, hi, *(b for b in breakpoints if lo < b < hi)})
    total = 0.0
    for a, b in zip(points, points[1:]):
        total += fn(0.5 * (a + b)) * (b - a)
    return total


def mean_event_fault_probability(
    profile: ProcessorProfile,
    core: int,
    pstate: str | int,
    scenario: str,
    stressor_multiplier: float,
    v_nominal_mv: float,
    temp_c: float,
) -> float:
    """Per-event fault probability averaged over the supply-noise band.

    The pointwise probability is piecewise linear in the effective voltage
    (ramp, plateau, cap, and the window edges), so averaging over uniform
    noise reduces to exact trapezoids between the breakpoints.  This is
    the marginal that lets a campaign draw one binomial per try instead of
    one uniform per store without changing the distribution.
    """
    point = profile.pstate_point(pstate)
    core = profile.check_core(core)
    n = profile.noise_mv

    def p_at(v):
        return event_fault_probability(
            profile, core, pstate, scenario, stressor_multiplier, v, temp_c
        )

    if n <= 0.0:
        return p_at(v_nominal_mv)
    top = effective_window_top_mv(profile, core, pstate, temp_c)
    width = point.exploit_window_mv
    breaks = [top, top - width]
    entry = profile.calibration_entry(scenario)
    ceiling = entry.p_event_max[core] * stressor_multiplier
    if entry.pstate_gated:
        ceiling *= point.exploit_factor
    if width > 0.0:
        breaks.append(top - width * RAMP_SATURATION_DEPTH)
        if ceiling > 1.0:  # the clamp introduces its own corner
            breaks.append(top - width * RAMP_SATURATION_DEPTH / ceiling)
    lo, hi = v_nominal_mv - n, v_nominal_mv + n
    return _integrate_piecewise(p_at, lo, hi, breaks) / (2.0 * n)


def mean_crash_probability(
    profile: ProcessorProfile,
    core: int,
    pstate: str | int,
    v_nominal_mv: float,
    temp_c: float,
) -> float:
    """Per-slice crash probability averaged over the supply-noise band."""
    point = profile.pstate_point(pstate)
    core = profile.check_core(core)
    top = effective_window_top_mv(profile, core, pstate, temp_c)
    floor = top - point.exploit_window_mv
    ratio = point.ratio
    n = profile.noise_mv

    def g_at(v):
        return crash_probability_per_slice(profile, ratio, floor - v)

    if n <= 0.0:
        return g_at(v_nominal_mv)
    freq_factor = 0.5 + 0.5 * ratio / 32.0
    breaks = [floor]
    if profile.crash.depth_slope_per_mv > 0 and profile.crash.rate_per_slice > 0:
        cap_depth = (1.0 / (profile.crash.rate_per_slice * freq_factor) - 1.0) / (
            profile.crash.depth_slope_per_mv
        )
        if cap_depth > 0:
            breaks.append(floor - cap_depth)
    lo, hi = v_nominal_mv - n, v_nominal_mv + n
    return _integrate_piecewise(g_at, lo, hi, breaks) / (2.0 * n)


# ---------------------------------------------------------------------------
# Stochastic draws


def draw_flip_pattern(
    profile: ProcessorProfile, core: int, word_index: int, rng: np.random.Generator
) -> BitFlipPattern:
    """Sample a flip pattern from the core's multiplicity and affinity tables."""
    core = profile.check_core(core)
    bucket = int(rng.choice(3, p=profile.multiplicity[core]))
    if bucket == 0:
        k = 1
    elif bucket == 1:
        k = 2
    else:
        k = 3 + int(rng.binomial(4, 0.2))
    weights = profile.bit_weights(core)
    k = min(k, int(np.count_nonzero(weights)))
    bits = rng.choice(128, size=k, replace=False, p=weights)
    return BitFlipPattern(word_index, frozenset(int(b) for b in bits))


def sample_fault(
    profile: ProcessorProfile,
    state: PlatformState,
    core: int,
    event: EligibleStoreEvent,
    rng: np.random.Generator,
) -> BitFlipPattern | None:
    """Does this eligible store retire corrupted?

    Draw order per call: slice noise, fault uniform, then (on a hit) the
    multiplicity bucket and bit positions.  Normal and corrected regions
    never fault; below the window the crash process dominates and silent
    data corruption is not modeled.
    """
    core = profile.check_core(core)
    noise = rng.uniform(-profile.noise_mv, profile.noise_mv)
    v_eff = state.nominal_voltage_mv() + noise
    temp = float(state.core_temp_c[core])
    p = event_fault_probability(
        profile,
        core,
        state.pstate,
        event.scenario,
        state.stressor_fault_multiplier,
        v_eff,
        temp,
    )
    if p <= 0.0 or rng.uniform() >= p:
        return None
    return draw_flip_pattern(profile, core, event.word_index, rng)


def crash_kind_weights(ratio: int) -> np.ndarray:
    """Relative weights for (kernel exception, freeze, hard crash).

    Low ratios die softly; past the pivot the hard-crash term grows
    quadratically and overtakes the recoverable kinds.
    """
    rn = ratio / _KIND_PIVOT_RATIO
    weights = np.array([2.2 / rn, 0.5, rn * rn])
    return weights / weights.sum()


def crash_probability_per_slice(
    profile: ProcessorProfile, ratio: int, depth_below_window_mv: float
) -> float:
    """Per-slice crash chance at a given depth below the instability line."""
    if depth_below_window_mv < 0.0:
        return 0.0
    p = profile.crash.rate_per_slice
    p *= 1.0 + profile.crash.depth_slope_per_mv * depth_below_window_mv
    p *= 0.5 + 0.5 * ratio / 32.0
    return min(p, 1.0)


def sample_crash(
    profile: ProcessorProfile,
    state: PlatformState,
    rng: np.random.Generator,
    core: int | None = None,
    v_eff_mv: float | None = None,
) -> CrashKind | None:
    """One slice of the crash process on the loaded core.

    Only a core actually executing work exercises critical paths, so the
    check runs against the victim core's boundary unless told otherwise.
    Returns None everywhere above the instability line.
    """
    if core is None:
        core = state.victim_physical
        if core is None:
            core = 0
    core = profile.check_core(core)
    if v_eff_mv is None:
        v_eff_mv = state.nominal_voltage_mv() + rng.uniform(-profile.noise_mv, profile.noise_mv)
    point = profile.pstate_point(state.pstate)
    top = effective_window_top_mv(profile, core, state.pstate, float(state.core_temp_c[core]))
    depth = (top - point.exploit_window_mv) - v_eff_mv
    if depth < 0.0:
        return None
    p = crash_probability_per_slice(profile, point.ratio, depth)
    if rng.uniform() >= p:
        return None
    kind = rng.choice(3, p=crash_kind_weights(point.ratio))
    return (CrashKind.KERNEL_EXCEPTION, CrashKind.FREEZE, CrashKind.HARD_CRASH)[int(kind)]


# ---------------------------------------------------------------------------
# Temperature


def core_temp_targets(state: PlatformState) -> np.ndarray:
    """Equilibrium temperature per physical core under the current roles.

    Idle cores settle at ambient, the attack core barely above it, and the
    victim core at the pstate's reference temperature plus whatever the
    stressor on its logical partner adds.
    """
    profile = state.profile
    point = profile.pstate_point(state.pstate)
    targets = np.full(profile.physical_cores, profile.ambient_temp_c)
    for logical, role in enumerate(state.assignment):
        phys = state.physical_of(logical)
        if role == ROLE_ATTACKER:
            targets[phys] = max(targets[phys], profile.ambient_temp_c + 1.0)
        elif role == ROLE_VICTIM:
            victim_target = point.reference_temp_c + state.stressor_temp_boost_c
            targets[phys] = max(targets[phys], victim_target)
    return targets


def update_temperature(
    state: PlatformState, dt_s: float, workload: dict[int, float] | None = None
) -> None:
    """First-order relaxation of core temperatures toward their targets.

    `workload` may override the target of individual physical cores (adds
    degrees on top of the role-derived target).
    """
    if dt_s < 0:
        raise InvariantError("time does not flow backwards here")
    targets = core_temp_targets(state)
    if workload:
        for phys, extra in workload.items():
            targets[state.profile.check_core(phys)] += extra
    alpha = 1.0 - math.exp(-dt_s / state.temp_tau_s)
    state.core_temp_c += (targets - state.core_temp_c) * alpha
