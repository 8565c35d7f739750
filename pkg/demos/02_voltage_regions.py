"""Walking a core down through its supply regions.

Lowering the offset takes a core from normal operation, through a band of
corrected (logged) errors, into the narrow window where silent bit flips
appear, and finally into instability.  This script sweeps the voltage and
prints where each region begins, then shows how heat moves the window.
"""

from voltlab import load_profile
from voltlab.processor import (
    classify_voltage,
    event_fault_probability,
    mean_crash_probability,
    region_boundaries_mv,
)

profile = load_profile("i7-7700k")
core, pstate = 1, "0x1b"
point = profile.pstate_point(pstate)
temp = point.reference_temp_c

corrected_top, window_top, floor = region_boundaries_mv(profile, core, pstate, temp)
print(f"{profile.name} core {core} at pstate {pstate} ({point.base_voltage_mv} mV base)")
print(f"  corrected errors below {corrected_top:.1f} mV")
print(f"  silent fault window below {window_top:.1f} mV")
print(f"  unstable below {floor:.1f} mV\n")

# ---------------------------------------------------------------------------
# Sweep down in 5 mV steps.  The fault column is the per-store-event
# probability under the shift stressor; the crash column is per slice.

print(f"{'V (mV)':>8} {'region':<18} {'p(fault/event)':>15} {'p(crash/slice)':>15}")
last = None
for mv in range(int(point.base_voltage_mv), int(floor) - 20, -5):
    region = classify_voltage(profile, core, pstate, mv / 1000.0, temp)
    fault = event_fault_probability(profile, core, pstate, "probe", 24.75, mv, temp)
    crash = mean_crash_probability(profile, core, pstate, mv, temp)
    marker = "  <- new region" if region is not last else ""
    if region is not last or fault > 0 or crash > 0:
        print(f"{mv:>8} {region.name:<18} {fault:>15.6f} {crash:>15.6f}{marker}")
    last = region

# ---------------------------------------------------------------------------
# The window is not fixed: each degree above the reference temperature
# drags it upward, which is exactly why a stressor on the sibling thread
# helps the attacker.

print("\nwindow top vs temperature:")
for t in (temp, temp + 5, temp + 15):
    _, top, _ = region_boundaries_mv(profile, core, pstate, t)
    print(f"  {t:5.1f} C -> {top:.1f} mV")
