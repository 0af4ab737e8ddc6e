"""``streamfx`` command line.

Exit codes: 0 success, 2 configuration error, 3 source error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import ConfigKeyError, RunConfig, load_config
from .dsp.io import write_spectrum
from .engine import GraphValidationError, build_graph, load_description, parse_stats_report
from .ingest import IngestError, SampleFormat, SampleFormatError
from .provenance import ProvenanceError, VexSyntaxError, emit_provenance, lint_vex, parse_vex, verify_provenance
from .scheduler import InfeasibleError, format_plan

EXIT_OK, EXIT_CONFIG, EXIT_SOURCE, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("streamfx")


def _err(msg: str) -> None:
    print(f"streamfx: {msg}", file=sys.stderr)


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {
        "ingest.workers": getattr(args, "workers", None),
        "engine.nodes": getattr(args, "nodes", None),
        "engine.capacity": getattr(args, "capacity", None),
        "output.spectrum": getattr(args, "out", None),
        "output.provenance": getattr(args, "provenance", None),
        "output.format": getattr(args, "format", None),
    }
    for key, value in overrides.items():
        if value is not None:
            cfg.set(key, value)
    if getattr(args, "deterministic", False):
        cfg.set("engine.deterministic", True)
    seed = getattr(args, "seed", None)
    if seed is not None:
        from .spectrometer import with_seed
        cfg.set("ingest.source", with_seed(cfg["ingest.source"], seed))
    return cfg


# ---------------------------------------------------------------- run

def cmd_run(args) -> int:
    from .spectrometer import SpectrometerError, build_spectrometer, make_plan, run_spectrometer

    cfg = _load(args)
    graph = build_spectrometer(cfg)
    if args.plan:
        plan = make_plan(graph, cfg)
        print(format_plan(graph, plan, None, [float(cfg["engine.capacity"])] * cfg["engine.nodes"]), end="")
    interrupt = threading.Event()
    previous = None
    if threading.current_thread() is threading.main_thread():
        previous = signal.signal(signal.SIGINT, lambda *_: interrupt.set())
    try:
        run = run_spectrometer(cfg, interrupt=interrupt)
    except SpectrometerError as exc:
        _err(str(exc))
        return EXIT_SOURCE if exc.source_failure else EXIT_RUNTIME
    finally:
        if previous is not None:
            signal.signal(signal.SIGINT, previous)
    report = run.result.stats.report()
    if args.stats:
        print(report, end="")
    if cfg.get("output.stats"):
        Path(cfg["output.stats"]).write_text(report)
    out = cfg.get("output.spectrum") or f"spectrum.{cfg['output.format']}"
    write_spectrum(out, run.frames, cfg["output.format"])
    prov = cfg.get("output.provenance")
    if prov:
        Path(prov).write_text(run.provenance.dumps())
    c = run.counters
    print(f"spectra={c['spectra']} partial={c['partial_spectra']} chunks={c['chunks']} "
          f"samples={c['samples_decoded']} dropped_samples={c['dropped_samples']} out={out}")
    for note in run.notes:
        print(note)
    if not run.balanced:
        from .spectrometer import conservation_issues
        for issue in conservation_issues(c):
            _err(f"conservation: {issue}")
        return EXIT_RUNTIME
    return EXIT_OK


# ---------------------------------------------------------------- validate / stats / stop

def cmd_validate(args) -> int:
    path = Path(args.path)
    from ._toml import load_toml
    raw = load_toml(path)
    if "operators" in raw or "operator" in raw:
        graph = build_graph(load_description(path))
    else:
        from .config import resolve_config
        from .spectrometer import build_spectrometer
        graph = build_spectrometer(resolve_config(raw, path))
    print(f"valid: {len(graph.nodes)} operators, {len(graph.edges)} edges")
    for nid in graph.order:
        node = graph.nodes[nid]
        print(f"  {nid} ({node.kind}) -> {', '.join(graph.successors(nid)) or '-'}")
    return EXIT_OK


def cmd_stats_dump(args) -> int:
    text = Path(args.path).read_text()
    records = parse_stats_report(text)
    if args.json:
        print(json.dumps(records, indent=2))
        return EXIT_OK
    rows = records.get("op", [])
    cols = ["op", "kind", "tuples_in", "tuples_out", "errors", "dropped", "busy_us", "mean_cost_us"]
    widths = [max([len(c)] + [len(r.get(c, "")) for r in rows]) for c in cols]
    for job in records.get("job", []):
        print(" ".join(f"{k}={v}" for k, v in job.items()))
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    for r in rows:
        print("  ".join(r.get(c, "").ljust(w) for c, w in zip(cols, widths)))
    for e in records.get("edge", []):
        print(" ".join(f"{k}={v}" for k, v in e.items()))
    return EXIT_OK


def cmd_stop(args) -> int:
    path = Path(args.control_file)
    lines = [ln for ln in (path.read_text().splitlines() if path.exists() else [])
             if not ln.strip().startswith("stop")]
    lines.append("stop=true")
    path.write_text("\n".join(lines) + "\n")
    print(f"stop requested via {path}")
    return EXIT_OK


# ---------------------------------------------------------------- generate / bench

def cmd_generate(args) -> int:
    from .signals import generate_signal

    fmt = SampleFormat(args.bits, args.encoding, args.byte_order)
    n = args.samples if args.samples is not None else int(round(args.duration * args.sample_rate))
    src_fmt = SampleFormat(args.source_bits) if args.source_bits else None
    path = generate_signal(args.kind, n, fmt, seed=args.seed, out=args.out, fft_size=args.fft_size,
                           tone_bin=args.bin, snr=args.snr, sigma=args.sigma, amplitude=args.amplitude,
                           position=args.position, path=args.path, source_format=src_fmt)
    print(f"wrote {n} {fmt.label()} samples to {path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import bench
    from .spectrometer import SpectrometerError

    cfg = _load(args)
    try:
        report = bench(cfg, deterministic=True if args.deterministic else None)
    except SpectrometerError as exc:
        _err(str(exc))
        return EXIT_SOURCE if exc.source_failure else EXIT_RUNTIME
    print(report.render(), end="")
    return EXIT_OK


# ---------------------------------------------------------------- provenance

def cmd_prov_emit(args) -> int:
    cfg = _load(args)
    text = emit_provenance(cfg).dumps()
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_prov_verify(args) -> int:
    cfg = _load(args)
    report = verify_provenance(parse_vex(Path(args.doc).read_text()), cfg)
    print(report.render(), end="")
    return EXIT_OK if report.ok else 1


def cmd_prov_lint(args) -> int:
    issues = lint_vex(Path(args.doc).read_text())
    for issue in issues:
        print(issue)
    errors = sum(i.severity == "error" for i in issues)
    print(f"{errors} error(s), {len(issues) - errors} warning(s)")
    return 1 if errors else EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamfx", description="Stream-processing FX spectrometer")
    p.add_argument("--version", action="version", version=f"streamfx {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp, full=True):
        sp.add_argument("--config", required=True, help="run configuration (TOML)")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--seed", type=int, help="seed for synth:// sources")
        sp.add_argument("--deterministic", action="store_true", help="single-threaded reproducible run")
        sp.add_argument("--nodes", type=int, help="simulated node count")
        sp.add_argument("--capacity", type=float, help="per-node CPU budget, us per second")
        if full:
            sp.add_argument("--plan", action="store_true", help="print the placement plan")
            sp.add_argument("--stats", action="store_true", help="print the stats report")
            sp.add_argument("--out", help="spectrum output path")
            sp.add_argument("--provenance", help="provenance output path")
            sp.add_argument("--format", choices=("csv", "bin"))

    sp = sub.add_parser("run", help="run the spectrometer")
    run_flags(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("validate", help="validate a run config or pipeline description")
    sp.add_argument("path")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("stats-dump", help="tabulate a saved stats report")
    sp.add_argument("path")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_stats_dump)

    sp = sub.add_parser("stop", help="ask a running job to drain via its control file")
    sp.add_argument("control_file")
    sp.set_defaults(func=cmd_stop)

    sp = sub.add_parser("generate", help="write a synthetic sample file")
    sp.add_argument("--kind", required=True, choices=("tone+noise", "noise", "uniform", "delta", "recorded-replay"))
    sp.add_argument("--out", required=True)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--samples", type=int)
    g.add_argument("--duration", type=float, help="seconds at --sample-rate")
    sp.add_argument("--sample-rate", type=float, default=60e6)
    sp.add_argument("--bits", type=int, default=8)
    sp.add_argument("--encoding", default="unsigned-offset")
    sp.add_argument("--byte-order", default="little")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--fft-size", type=int, default=8192)
    sp.add_argument("--bin", type=int)
    sp.add_argument("--snr", type=float, default=20.0)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--amplitude", type=float)
    sp.add_argument("--position", type=int, default=0)
    sp.add_argument("--path", help="recording to replay")
    sp.add_argument("--source-bits", type=int, help="bit depth of the replayed recording")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("bench", help="measure pipeline throughput")
    run_flags(sp, full=False)
    sp.set_defaults(func=cmd_bench)

    prov = sub.add_parser("provenance", help="VEX provenance records").add_subparsers(dest="action", required=True)
    sp = prov.add_parser("emit")
    run_flags(sp, full=False)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_prov_emit)
    sp = prov.add_parser("verify")
    run_flags(sp, full=False)
    sp.add_argument("--doc", required=True)
    sp.set_defaults(func=cmd_prov_verify)
    sp = prov.add_parser("lint")
    sp.add_argument("doc")
    sp.set_defaults(func=cmd_prov_lint)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigKeyError, GraphValidationError, ProvenanceError, InfeasibleError, SampleFormatError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except VexSyntaxError as exc:
        _err(str(exc))
        return 1
    except IngestError as exc:
        _err(str(exc))
        return EXIT_SOURCE
    except (FileNotFoundError, IsADirectoryError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
