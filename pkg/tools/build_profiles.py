#!/usr/bin/env python3
"""Regenerate the bundled processor profiles.

Each profile pins down, per (core, pstate), where the fault window sits and
how hard each victim scenario gets hit there.  The per-event probabilities
are derived analytically from end-to-end success-rate targets measured on
the real parts, so the campaign statistics land on those targets without
any fitting loop:

    q = 1 - (1 - p_event * mult)^E   =>   p_event = (1 - (1-q)^(1/E)) / mult

where E is the number of fault-eligible vector stores one victim iteration
executes and mult is the stressor's fault multiplier (targets were measured
with the shift-loop stressor running).

Run from the repo root:  python3 tools/build_profiles.py
"""

import json
import pathlib

OUT_DIR = pathlib.Path(__file__).resolve().parent.parent / "src" / "voltlab" / "data" / "profiles"

# Stressor fault multipliers.  The ratio shift_loop:twofish = 12.375 makes a
# single-store victim that succeeds 99% of the time under the shift loop
# succeed 8% of the time under the cipher, matching the measured split.
SHIFT_LOOP_MULT = 24.75
TWOFISH_MULT = 2.0

# Eligible vector-store events per victim iteration (see victims.py).
EVENTS = {"poc": 1, "hmac_32b": 56, "hmac_1kb": 280}


def p_event_max(q_target, events):
    """Per-event fault probability that yields q_target per iteration."""
    if q_target <= 0.0:
        return 0.0
    if not 0.0 < q_target < 1.0:
        raise ValueError(f"target rate {q_target} not in (0, 1)")
    return (1.0 - (1.0 - q_target) ** (1.0 / events)) / SHIFT_LOOP_MULT


def calibration(probe, poc_q, hmac32_q, hmac1k_q):
    return {
        "probe": {"pstate_gated": False, "p_event_max": probe},
        "poc": {
            "pstate_gated": True,
            "p_event_max": [p_event_max(q, EVENTS["poc"]) for q in poc_q],
        },
        "hmac_32b": {
            "pstate_gated": True,
            "p_event_max": [p_event_max(q, EVENTS["hmac_32b"]) for q in hmac32_q],
        },
        "hmac_1kb": {
            "pstate_gated": True,
            "p_event_max": [p_event_max(q, EVENTS["hmac_1kb"]) for q in hmac1k_q],
        },
    }


def pstate(base_v, ref_temp, window_mv, factor, fault_v):
    return {
        "base_voltage_v": base_v,
        "reference_temp_c": ref_temp,
        "exploit_window_mv": window_mv,
        "exploit_factor": factor,
        "fault_voltage_v": fault_v,
    }


def affinity(n_cores, spec):
    """spec: list of {byte: weight} dicts, one per core -> 16-wide vectors."""
    out = []
    for per_core in spec:
        row = [0.0] * 16
        for byte, weight in per_core.items():
            row[byte] = float(weight)
        out.append(row)
    assert len(out) == n_cores
    return out


COMMON = {
    "schema_version": 1,
    "threads_per_core": 2,
    "base_clock_mhz": 100,
    "ambient_temp_c": 30.0,
    "noise_mv": 2.5,
    "temp_coeff_mv_per_c": 0.2,
    "corrected_band_mv": 15.0,
    "corrected_log_rate_per_slice": 0.01,
    "decode_error_rate_per_slice": 0.001,
    "default_attack_pstate": "0x1b",
    "affinity_source": "qualitative-heatmap",
    "crash": {"rate_per_slice": 0.02, "depth_slope_per_mv": 0.4, "reboot_slices": 50000},
}


def per_ten_k(values):
    return [v / 10000.0 for v in values]


PROFILES = {
    "i7-7700k": {
        **COMMON,
        "model_name": "i7-7700K",
        "physical_cores": 4,
        "pstates": {
            # Low pstates fault in the test loop but never yield an exploit.
            "0x08": pstate(0.800, 32.0, 5.0, 0.0, [0.540, 0.545, 0.535, 0.545]),
            "0x10": pstate(0.850, 33.0, 5.0, 0.0, [0.585, 0.585, 0.580, 0.585]),
            "0x1b": pstate(0.950, 37.0, 15.0, 1.0, [0.700, 0.710, 0.705, 0.705]),
            "0x20": pstate(1.040, 41.0, 15.0, 1.0, [0.765, 0.775, 0.770, 0.775]),
            "0x24": pstate(1.100, 42.0, 15.0, 1.0, [0.825, 0.835, 0.835, 0.835]),
            "0x2a": pstate(1.210, 50.0, 15.0, 0.0, [0.930, 0.935, 0.930, 0.935]),
        },
        "byte_affinity": affinity(
            4,
            [
                {2: 2, 3: 3, 10: 1},
                {1: 1, 4: 3, 6: 2, 9: 2, 12: 1, 14: 1},
                {5: 2, 6: 3, 7: 1},
                {0: 3, 8: 1},
            ],
        ),
        "multiplicity": [
            [0.934, 0.066, 0.000],
            [0.988, 0.007, 0.005],
            [0.912, 0.067, 0.021],
            [0.997, 0.003, 0.000],
        ],
        "calibration": calibration(
            probe=[0.008, 0.018, 0.014, 0.011],
            poc_q=[0.002, 0.99, 0.96, 0.99],
            hmac32_q=per_ten_k([24.8, 1795.6, 821.2, 283.6]),
            hmac1k_q=per_ten_k([0.0, 1983.8, 745.2, 235.2]),
        ),
    },
    "i7-8700k": {
        **COMMON,
        "model_name": "i7-8700K",
        "physical_cores": 6,
        "pstates": {
            "0x08": pstate(0.830, 38.0, 5.0, 0.0, [0.565, 0.570, 0.560, 0.570, 0.565, 0.570]),
            "0x10": pstate(0.885, 40.0, 5.0, 0.0, [0.610, 0.615, 0.605, 0.615, 0.610, 0.615]),
            "0x1b": pstate(1.005, 44.0, 15.0, 1.0, [0.770, 0.775, 0.765, 0.775, 0.770, 0.775]),
            "0x20": pstate(1.070, 47.0, 15.0, 1.0, [0.840, 0.845, 0.835, 0.845, 0.840, 0.845]),
            "0x24": pstate(1.130, 49.0, 15.0, 1.0, [0.895, 0.900, 0.890, 0.900, 0.895, 0.900]),
            "0x2a": pstate(1.265, 56.0, 15.0, 0.0, [0.985, 0.990, 0.980, 0.990, 0.985, 0.990]),
        },
        "byte_affinity": affinity(
            6,
            [
                {3: 3, 4: 4, 5: 2},
                # core 1 smears flips across every byte position
                {i: 1 + (i % 3) * 0.5 for i in range(16)},
                {0: 2, 1: 3, 8: 3, 9: 1},
                {4: 1},
                {6: 2, 7: 3, 13: 1},
                {2: 2, 10: 1, 12: 2},
            ],
        ),
        "multiplicity": [
            [0.942, 0.032, 0.026],
            [0.002, 0.000, 0.998],
            [0.589, 0.275, 0.136],
            [0.999, 0.001, 0.000],
            [0.586, 0.410, 0.004],
            [0.614, 0.239, 0.147],
        ],
        "calibration": calibration(
            probe=[0.020, 0.009, 0.015, 0.007, 0.012, 0.010],
            poc_q=[0.99, 0.04, 0.30, 0.005, 0.16, 0.05],
            hmac32_q=per_ten_k([9621.6, 35.2, 2675.6, 0.0, 1496.8, 57.4]),
            hmac1k_q=per_ten_k([9548.7, 1320.2, 119.4, 4.6, 1552.8, 0.0]),
        ),
    },
    "i7-7700": {
        **COMMON,
        "model_name": "i7-7700",
        "physical_cores": 4,
        "pstates": {
            "0x08": pstate(0.790, 32.0, 5.0, 0.0, [0.530, 0.530, 0.525, 0.535]),
            "0x10": pstate(0.840, 33.0, 5.0, 0.0, [0.575, 0.575, 0.570, 0.580]),
            "0x1b": pstate(0.940, 36.0, 15.0, 1.0, [0.690, 0.695, 0.690, 0.700]),
            "0x20": pstate(1.030, 40.0, 15.0, 1.0, [0.755, 0.760, 0.755, 0.765]),
            "0x24": pstate(1.090, 41.0, 15.0, 1.0, [0.815, 0.820, 0.815, 0.825]),
            "0x2a": pstate(1.200, 49.0, 15.0, 0.0, [0.920, 0.925, 0.920, 0.930]),
        },
        "byte_affinity": affinity(
            4,
            [
                {1: 2, 2: 1},
                {4: 1, 5: 2, 6: 2, 11: 1},
                {0: 1, 3: 2, 7: 1, 8: 2, 12: 1},
                {9: 2, 10: 1},
            ],
        ),
        "multiplicity": [
            [0.905, 0.083, 0.012],
            [0.709, 0.199, 0.092],
            [0.405, 0.444, 0.151],
            [0.855, 0.122, 0.023],
        ],
        "calibration": calibration(
            probe=[0.010, 0.016, 0.013, 0.009],
            poc_q=[0.40, 0.85, 0.70, 0.55],
            hmac32_q=per_ten_k([420.0, 1150.0, 640.0, 210.0]),
            hmac1k_q=per_ten_k([380.0, 1260.0, 590.0, 180.0]),
        ),
    },
}


def main():
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    for stem, profile in PROFILES.items():
        path = OUT_DIR / f"{stem}.json"
        path.write_text(json.dumps(profile, indent=2, sort_keys=True) + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
