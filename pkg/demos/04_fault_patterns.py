"""Phase 2: probing each core's fault character.

Cores are not interchangeable: each has its own fault rate, its own
favorite byte lanes, and its own flipped-bits-per-fault distribution.
The probe pins the victim kernel to one core at a time at the planned
offset and tallies what comes back.
"""

from voltlab import load_profile, phase1_find_window, phase2_probe_cores, setup_system

profile = load_profile("i7-8700k")
state, _, _ = setup_system(profile, "0x1b", 0, "listing2", seed=5)
plan = phase1_find_window(profile, pstate="0x1b", seed=5)
report = phase2_probe_cores(state, plan, tries_per_core=10_000)

print(f"{profile.name}: 10k probe iterations per core at the planned offsets\n")
print(f"{'core':>4} {'offset':>8} {'faults':>8} {'rate':>8}   single/double/3+")
for s in report.stats:
    single, double, more = s.bucketed()
    print(
        f"{s.core:>4} {plan.offset_for(s.core):>+8} {s.faults:>8} {s.fault_rate:>8.3f}"
        f"   {single}/{double}/{more}"
    )
print(f"\nmost fault-prone core: {report.best_core}")

# ---------------------------------------------------------------------------
# Byte-lane histograms.  Some cores flip only a couple of lanes; core 1 on
# this part smears across all sixteen.

scale = max(max(s.byte_histogram) for s in report.stats) or 1
print("\nbyte lanes hit (one row per core, # = relative count):")
for s in report.stats:
    bars = "".join(
        " .:-=+*#"[min(7, (8 * n) // (scale + 1))] for n in s.byte_histogram
    )
    print(f"  core {s.core}  |{bars}|")
print("          0123456789abcdef  (byte lane)")
