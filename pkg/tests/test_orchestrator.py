"""Three-phase workflow: setup plans, window search, probing, campaigns."""

import json
from importlib import resources

import pytest

from voltlab.errors import AbortedByCrash, InvalidCore, InvariantError, NoWindowFound
from voltlab.orchestrator import (
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
from voltlab.processor import ProcessorProfile, core_temp_targets, load_profile

KABY = load_profile("i7-7700k")
COFFEE = load_profile("i7-8700k")


def _width_zero_profile() -> ProcessorProfile:
    text = (
        resources.files("voltlab")
        .joinpath("data/profiles/i7-7700k.json")
        .read_text(encoding="utf-8")
    )
    raw = json.loads(text)
    for entry in raw["pstates"].values():
        entry["exploit_window_mv"] = 0.0
    return ProcessorProfile(raw, origin="width-zero")


# ---------------------------------------------------------------------------
# System setup


def test_setup_partitions_the_machine():
    state, config, _ = setup_system(KABY, "0x1b", 1, "listing2")
    assert config.attack_group == (0, 4)
    assert config.victim_group == (1, 2, 3, 5, 6, 7)
    assert not set(config.attack_group) & set(config.victim_group)
    everything = set(config.attack_group) | set(config.victim_group)
    assert everything == set(range(KABY.logical_cores()))
    assert state.victim_physical == 1


def test_setup_moves_the_attacker_off_the_target():
    _, config, _ = setup_system(KABY, "0x1b", 0, "none")
    assert config.attack_group == (1, 5)
    assert 0 in config.victim_group


def test_setup_msr_plan():
    _, _, writes = setup_system(KABY, "0x1B", 1, "listing2")
    assert [(w.address, w.value) for w in writes] == [
        (0x1AA, 0x1),  # claim EIST software control
        (0x199, 0x1B << 8),  # pin the ratio
        (0x1A0, 1 << 38),  # turbo off
        (0x19B, 0),  # thermal interrupts masked
        (0x150, 0x8000_0011_0000_0000),  # offset parked at zero
    ]


def test_setup_interference_bookkeeping():
    _, config, _ = setup_system(KABY, "0x1b", 1, "none")
    assert config.drivers_disabled == ("acpi_cpufreq", "intel_pstate")
    assert config.pstate_pin == "0x1b"
    assert config.interference_flags and all(config.interference_flags.values())


def test_setup_prewarms_temperatures():
    state, _, _ = setup_system(KABY, "0x1b", 1, "listing2", seed=9)
    targets = core_temp_targets(state)
    assert state.core_temp_c == pytest.approx(targets)
    assert state.core_temp_c[1] > KABY.ambient_temp_c


def test_setup_rejects_unknown_core():
    with pytest.raises(InvalidCore):
        setup_system(KABY, "0x1b", 9, "none")


def test_config_rejects_overlapping_groups():
    with pytest.raises(InvariantError):
        SystemConfig((0, 4), (0, 1), (), "0x1b")


# ---------------------------------------------------------------------------
# Phase 1


def test_phase1_recovers_the_window_tops_exactly():
    plan = phase1_find_window(KABY, pstate="0x1b", seed=3)
    assert plan.window_top_v == (0.700, 0.710, 0.705, 0.705)
    assert plan.chosen_offset_mv == (-260, -250, -255, -255)


def test_phase1_costs_one_reboot_per_core():
    plan = phase1_find_window(KABY, pstate="0x1b", seed=3)
    assert plan.crashes_during_search == KABY.physical_cores


def test_phase1_matches_the_profile_on_every_pstate():
    for pstate, point in KABY.pstates.items():
        plan = phase1_find_window(KABY, pstate=pstate, seed=3)
        expect = tuple(mv / 1000.0 for mv in point.fault_voltage_mv)
        assert plan.window_top_v == pytest.approx(expect, abs=1e-9), pstate
        width = point.exploit_window_mv
        for core, off in enumerate(plan.chosen_offset_mv):
            assert off % 5 == 0
            v_att = point.base_voltage_mv + off
            top = point.fault_voltage_mv[core]
            # The attack point sits inside the window, above instability.
            assert top - width < v_att <= top, (pstate, core)


def test_phase1_on_the_six_core_part():
    plan = phase1_find_window(COFFEE, seed=3)
    point = COFFEE.pstate_point(COFFEE.default_attack_pstate)
    expect = tuple(mv / 1000.0 for mv in point.fault_voltage_mv)
    assert plan.window_top_v == pytest.approx(expect, abs=1e-9)
    assert len(plan.chosen_offset_mv) == 6


def test_phase1_is_seed_stable():
    a = phase1_find_window(KABY, pstate="0x1b", seed=3)
    b = phase1_find_window(KABY, pstate="0x1b", seed=3)
    c = phase1_find_window(KABY, pstate="0x1b", seed=20)
    assert a == b
    # The recovered levels are properties of the silicon, not the seed.
    assert a.window_top_v == c.window_top_v
    assert a.chosen_offset_mv == c.chosen_offset_mv


def test_phase1_rejects_off_grid_start():
    with pytest.raises(InvariantError):
        phase1_find_window(KABY, pstate="0x1b", start_offset_mv=3)


def test_phase1_reports_no_window_when_there_is_none():
    with pytest.raises(NoWindowFound):
        phase1_find_window(_width_zero_profile(), pstate="0x1b", seed=3)


def test_voltage_plan_validation():
    with pytest.raises(InvariantError):
        VoltagePlan("0x1b", (0.7,), (-257,))  # off the 5 mV grid
    with pytest.raises(InvariantError):
        VoltagePlan("0x1b", (0.7,), (-1030,))  # below the encodable floor
    with pytest.raises(InvariantError):
        VoltagePlan("0x1b", (0.7, 0.71), (-250,))  # core counts disagree
    plan = VoltagePlan("0x1b", (0.7, 0.71), (-260, -250), crashes_during_search=2)
    assert plan.offset_for(1) == -250
    blob = plan.to_json()
    assert blob["chosen_offset_mv"] == [-260, -250]
    assert blob["crashes_during_search"] == 2


# ---------------------------------------------------------------------------
# Phase 2


def _kaby_probe(seed=5, tries=10_000):
    state, _, _ = setup_system(KABY, "0x1b", 0, "listing2", seed=seed)
    plan = phase1_find_window(KABY, pstate="0x1b", seed=seed)
    return phase2_probe_cores(state, plan, tries_per_core=tries)


def test_phase2_ranks_the_leaky_core_first():
    report = _kaby_probe()
    assert report.best_core == 1
    rates = [s.fault_rate for s in report.stats]
    # Probe marginals at the attack points, stressor running.
    assert rates == pytest.approx([0.198, 0.4455, 0.3465, 0.2723], abs=0.05)
    assert all(s.tries == 10_000 for s in report.stats)


def test_phase2_on_the_six_core_part():
    state, _, _ = setup_system(COFFEE, COFFEE.default_attack_pstate, 1, "listing2", seed=5)
    plan = phase1_find_window(COFFEE, seed=5)
    report = phase2_probe_cores(state, plan, tries_per_core=4000)
    assert report.best_core == 0
    assert len(report.stats) == 6


def test_phase2_byte_lanes_respect_the_affinity_tables():
    report = _kaby_probe(seed=7, tries=6000)
    for stat in report.stats:
        allowed = {i for i, w in enumerate(KABY.byte_affinity[stat.core]) if w > 0}
        seen = {i for i, n in enumerate(stat.byte_histogram) if n}
        assert seen <= allowed, stat.core
        assert sum(stat.multiplicity_histogram.values()) == stat.faults


def test_phase2_crash_aborts_with_partial_stats():
    state, _, _ = setup_system(KABY, "0x1b", 0, "listing2", seed=5)
    doomed = VoltagePlan("0x1b", (0.7, 0.71, 0.705, 0.705), (-500, -500, -500, -500))
    with pytest.raises(AbortedByCrash) as info:
        phase2_probe_cores(state, doomed, tries_per_core=10_000)
    partial = info.value.partial
    assert isinstance(partial, ProbeReport)
    assert partial.stats[-1].tries < 10_000


def test_fault_stats_bucketing():
    stats = FaultStats(2, 1000, 10, (0,) * 16, {1: 5, 2: 3, 4: 2})
    assert stats.bucketed() == (5, 3, 2)
    assert stats.fault_rate == pytest.approx(0.01)
    assert FaultStats(0, 0, 0, (0,) * 16, {}).fault_rate == 0.0
    assert stats.to_json()["multiplicity_histogram"] == {"1": 5, "2": 3, "4": 2}


# ---------------------------------------------------------------------------
# Phase 3


def _kaby_attack_setup(seed=5, stressor="listing2"):
    state, _, _ = setup_system(KABY, "0x1b", 1, stressor, seed=seed)
    plan = phase1_find_window(KABY, pstate="0x1b", seed=seed)
    return state, plan


def test_phase3_poc_lands_nearly_every_try():
    state, plan = _kaby_attack_setup()
    result = phase3_attack(state, plan, "poc", 1, "listing2", runs=2, tries_per_run=2000)
    assert result.scenario == "poc"
    assert result.mean_per_10k == pytest.approx(9900, abs=120)
    assert result.crashes == 0


def test_phase3_worker_count_does_not_change_results():
    state, plan = _kaby_attack_setup(seed=8)
    kwargs = dict(runs=3, tries_per_run=400)
    serial = phase3_attack(state, plan, "hmac32", 1, "listing2", **kwargs, jobs=1)
    threaded = phase3_attack(state, plan, "hmac32", 1, "listing2", **kwargs, jobs=3)
    assert serial == threaded
    assert serial.scenario == "hmac_32b"


def test_phase3_zero_offset_yields_nothing():
    state, _ = _kaby_attack_setup()
    idle = VoltagePlan("0x1b", (0.7, 0.71, 0.705, 0.705), (0, 0, 0, 0))
    poc = phase3_attack(state, idle, "poc", 1, "listing2", runs=2, tries_per_run=500)
    mac = phase3_attack(state, idle, "hmac32", 1, "listing2", runs=2, tries_per_run=300)
    assert poc.successes == 0 and poc.mean_per_10k == 0.0
    assert mac.successes == 0 and mac.mean_per_10k == 0.0


def test_phase3_rejects_unknown_core():
    state, plan = _kaby_attack_setup()
    with pytest.raises(InvalidCore):
        phase3_attack(state, plan, "hmac32", 7, "listing2")


def test_phase3_crash_aborts_with_partial_result():
    state, _ = _kaby_attack_setup()
    doomed = VoltagePlan("0x1b", (0.7, 0.71, 0.705, 0.705), (-500, -500, -500, -500))
    with pytest.raises(AbortedByCrash) as info:
        phase3_attack(state, doomed, "poc", 1, "listing2", runs=3, tries_per_run=1000)
    partial = info.value.partial
    assert partial.crashes == 1
    assert partial.tries < 3000


# ---------------------------------------------------------------------------
# The one-call wrapper


def test_run_campaign_reports_context():
    result, ctx = run_campaign(
        KABY, "hmac32", 1, "listing2", seed=11, runs=2, tries_per_run=300
    )
    assert result.scenario == "hmac_32b"
    assert result.tries == 600
    assert ctx["model"] == "i7-7700K"
    assert ctx["pstate"] == "0x1b"
    assert ctx["stressor"] == "shift_loop"
    assert ctx["offset_mv"] == -250
    assert ctx["attack_voltage_v"] == pytest.approx(0.700)
    assert ctx["plan"]["chosen_offset_mv"] == [-260, -250, -255, -255]
    addresses = [w["address"] for w in ctx["system"]["msr_writes"]]
    assert addresses == ["0x1aa", "0x199", "0x1a0", "0x19b", "0x150"]
