"""Command-line front end.

Subcommands map one-to-one onto the library surface: `encode-msr` and
`decode-msr` wrap the mailbox codec, `scan` the pattern scanner, `probe`
the phase 1+2 search, `campaign` the full three-phase workflow, and
`report` renders probe data as CSV tables.

All output is deterministic for a given seed and flag set: JSON is dumped
with sorted keys, CSV cells come from integers or pre-rounded floats, and
campaign results do not depend on `--jobs`.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import AbortedByCrash, VoltlabError
from .isa import bundled_program, parse_program
from .msr import (
    MailboxCommand,
    MailboxOp,
    VoltageDomain,
    VoltageMode,
    decode_mailbox,
    encode_mailbox,
    pstate_frequency_mhz,
    PState,
)
from .orchestrator import phase1_find_window, phase2_probe_cores, run_campaign, setup_system
from .processor import load_profile, normalize_pstate

_DOMAINS = {d.name.lower(): d for d in VoltageDomain}
_OPS = {"read": MailboxOp.READ_VOLTAGE, "write": MailboxOp.WRITE_VOLTAGE}


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _word_json(word: int, cmd: MailboxCommand) -> dict:
    out = {
        "msr": f"{word:#018x}",
        "domain": cmd.domain.name.lower(),
        "command": f"{int(cmd.op):#x}",
        "mode": cmd.mode.name.lower(),
    }
    if cmd.mode is VoltageMode.OFFSET:
        out["offset_mv"] = cmd.offset_mv
    else:
        out["static_units"] = cmd.static_units
    return out


def _word_breakdown(word: int, cmd: MailboxCommand) -> str:
    lines = [
        f"word     {word:#018x}",
        f"domain   {int(cmd.domain):#x} ({cmd.domain.name.lower()})",
        f"command  {int(cmd.op):#04x} ({cmd.op.name.lower()})",
        f"mode     {cmd.mode.name.lower()}",
    ]
    if cmd.mode is VoltageMode.OFFSET:
        lines.append(f"offset   {cmd.offset_mv:+d} mV")
    else:
        lines.append(
            f"static   {cmd.static_units}/1024 V = {cmd.static_volts():.4f} V"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Subcommand bodies


def _cmd_encode(args) -> int:
    mode = VoltageMode.STATIC if args.static_units is not None else VoltageMode.OFFSET
    cmd = MailboxCommand(
        domain=_DOMAINS[args.domain],
        op=_OPS[args.op],
        mode=mode,
        offset_mv=args.offset_mv or 0,
        static_units=args.static_units or 0,
    )
    word = encode_mailbox(cmd)
    if args.json:
        _emit(_word_json(word, cmd))
    else:
        print(_word_breakdown(word, cmd))
    return 0


def _cmd_decode(args) -> int:
    word = int(args.word, 16)
    cmd = decode_mailbox(word)
    if args.json:
        _emit(_word_json(word, cmd))
    else:
        print(_word_breakdown(word, cmd))
    return 0


def _load_program(spec: str):
    if spec.endswith(".s") or "/" in spec:
        with open(spec, "r", encoding="utf-8") as fh:
            return parse_program(fh.read(), source_name=spec)
    return bundled_program(spec)


def _cmd_scan(args) -> int:
    from .scanner import scan

    program = _load_program(args.program)
    hits = [
        {
            "kind": h.kind.value,
            "op_index": h.op_index,
            "store_index": h.store_index,
            "gap": h.gap,
        }
        for h in scan(program)
    ]
    _emit(hits)
    return 0


def _probe(args):
    profile = load_profile(args.profile)
    pstate = normalize_pstate(args.pstate) if args.pstate else profile.default_attack_pstate
    state, _, _ = setup_system(profile, pstate, 0, args.stressor, seed=args.seed)
    plan = phase1_find_window(profile, pstate=pstate, seed=args.seed)
    report = phase2_probe_cores(state, plan, tries_per_core=args.tries)
    return profile, plan, report


def _cmd_probe(args) -> int:
    profile, plan, report = _probe(args)
    _emit(
        {
            "model": profile.name,
            "plan": plan.to_json(),
            "probe": report.to_json(),
        }
    )
    return 0


def _cmd_campaign(args) -> int:
    result, ctx = run_campaign(
        args.profile,
        args.victim,
        args.core,
        args.stressor,
        seed=args.seed,
        runs=args.runs,
        tries_per_run=args.tries,
        pstate=args.pstate,
        jobs=args.jobs,
    )
    _emit({"context": ctx, "result": result.to_json()})
    if args.csv:
        _write_campaign_csv(args.csv, result, ctx, args)
    return 0


def _write_campaign_csv(path: str, result, ctx, args) -> None:
    profile = load_profile(args.profile)
    point = profile.pstate_point(ctx["pstate"])
    freq = pstate_frequency_mhz(
        PState(int(ctx["pstate"], 16), profile.base_clock_mhz)
    )
    header = (
        "model,core,pstate,frequency_mhz,base_voltage_v,attack_voltage_v,"
        "offset_mv,stressor,runs,tries_per_run,successes_per_10k,sigma"
    )
    row = ",".join(
        str(v)
        for v in [
            ctx["model"],
            result.target_core,
            ctx["pstate"],
            freq,
            round(point.base_voltage_mv / 1000.0, 4),
            ctx["attack_voltage_v"],
            ctx["offset_mv"],
            ctx["stressor"],
            len(result.per_run),
            args.tries,
            round(result.mean_per_10k, 4),
            round(result.sigma, 4),
        ]
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n" + row + "\n")


def _cmd_report(args) -> int:
    _, _, report = _probe(args)
    lines = []
    if args.what == "heatmap":
        lines.append("core," + ",".join(f"byte_{i}" for i in range(16)))
        for stat in report.stats:
            lines.append(f"{stat.core}," + ",".join(str(n) for n in stat.byte_histogram))
    else:  # multiplicity
        lines.append("core,faults,single,double,three_plus,single_pct,double_pct,three_plus_pct")
        for stat in report.stats:
            single, double, more = stat.bucketed()
            total = stat.faults or 1
            lines.append(
                ",".join(
                    str(v)
                    for v in [
                        stat.core,
                        stat.faults,
                        single,
                        double,
                        more,
                        round(100.0 * single / total, 2),
                        round(100.0 * double / total, 2),
                        round(100.0 * more / total, 2),
                    ]
                )
            )
    print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# Argument wiring


def _add_probe_flags(sub) -> None:
    sub.add_argument("--profile", required=True, help="bundled name or JSON path")
    sub.add_argument("--pstate", default=None, help="hex ratio, e.g. 0x1b")
    sub.add_argument("--tries", type=int, default=10_000)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--stressor", default="listing2",
                     choices=["listing2", "twofish", "none", "shift_loop", "twofish_avx"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voltlab",
        description="Deterministic undervolting-fault laboratory",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    enc = subs.add_parser("encode-msr", help="assemble a voltage mailbox word")
    enc.add_argument("--domain", default="cores", choices=sorted(_DOMAINS))
    enc.add_argument("--op", default="write", choices=sorted(_OPS))
    value = enc.add_mutually_exclusive_group(required=True)
    value.add_argument("--offset-mv", type=int, help="signed offset, 1 mV steps")
    value.add_argument("--static-units", type=int, help="absolute target, 1/1024 V units")
    enc.add_argument("--json", action="store_true")
    enc.set_defaults(run=_cmd_encode)

    dec = subs.add_parser("decode-msr", help="break a mailbox word into fields")
    dec.add_argument("word", help="hexadecimal 64-bit word")
    dec.add_argument("--json", action="store_true")
    dec.set_defaults(run=_cmd_decode)

    sc = subs.add_parser("scan", help="find susceptible op/store patterns")
    sc.add_argument("program", help="bundled program name or .s path")
    sc.set_defaults(run=_cmd_scan)

    pr = subs.add_parser("probe", help="find the window, then probe each core")
    _add_probe_flags(pr)
    pr.set_defaults(run=_cmd_probe)

    ca = subs.add_parser("campaign", help="run the three-phase attack")
    ca.add_argument("--profile", required=True)
    ca.add_argument("--victim", required=True, choices=["poc", "hmac32", "hmac1k"])
    ca.add_argument("--core", type=int, required=True)
    ca.add_argument("--stressor", default="listing2",
                    choices=["listing2", "twofish", "none", "shift_loop", "twofish_avx"])
    ca.add_argument("--seed", type=int, default=0)
    ca.add_argument("--runs", type=int, default=5)
    ca.add_argument("--tries", type=int, default=10_000)
    ca.add_argument("--jobs", type=int, default=1)
    ca.add_argument("--pstate", default=None)
    ca.add_argument("--csv", default=None, help="also write a one-row summary table")
    ca.set_defaults(run=_cmd_campaign)

    rep = subs.add_parser("report", help="render probe data as CSV")
    what = rep.add_subparsers(dest="what", required=True)
    heat = what.add_parser("heatmap", help="fault counts per byte lane, one row per core")
    _add_probe_flags(heat)
    heat.set_defaults(run=_cmd_report)
    mult = what.add_parser("multiplicity", help="flipped-bit counts per fault, per core")
    _add_probe_flags(mult)
    mult.set_defaults(run=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.run(args)
    except AbortedByCrash as abort:
        partial = abort.partial.to_json() if abort.partial is not None else None
        _emit({"aborted": str(abort), "partial": partial})
        return 3
    except (VoltlabError, OSError, ValueError) as exc:
        print(f"voltlab: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
