"""``poselift`` command line: build, lift, eval, sweep, bench, synth.

Exit codes: 0 ok, 2 bad input, 3 I/O failure, 4 internal error. Primary
outputs never contain timings; those go to the ``*.manifest.json`` file
written next to each output.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import library as libstore
from ._parallel import ENV_THREADS, ordered_map, resolve_threads
from .evaluation import EvalProtocol, Protocol, evaluate, oracle_best_exemplar, upper_bound_gt_depth
from .exceptions import PoseLiftError
from .geometry import Pose2D, Pose3D
from .matcher import MatchConfig, Normalization, get_index, match
from .refine import RefineConfig
from .skeleton import resolve_skeleton
from .synth import SynthConfig, generate_data, paper_shape_preset, write_dataset
from .warp import lift, warp_exemplar

log = logging.getLogger("poselift")

EXIT_OK, EXIT_INPUT, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4
ABLATIONS = ("x", "xstar", "gtdepth", "oracle", "oracle-xstar")


class InputError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    library_hash: str | None = None
    seed: int | None = None
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".manifest.json")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def parse_bool(text) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def parse_floats(text) -> list:
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise InputError(f"bad number list {text!r}: {exc}") from exc


def parse_ints(text) -> list:
    return [int(v) for v in parse_floats(text)]


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def _write_text(path, text) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _load_library(path):
    return libstore.load(path)


def _read_queries(args, skeleton):
    q = libstore.read_pose_csv(args.queries, skeleton, dim=2)
    queries = [Pose2D(j, skeleton) for j in q.joints]
    return q, queries


def _read_eval_set(args, skeleton):
    q, queries = _read_queries(args, skeleton)
    g = libstore.read_pose_csv(args.gt, skeleton, dim=3)
    if q.ids != g.ids:
        raise InputError("query and ground-truth CSVs must list the same ids in the same order")
    acts = [a or b for a, b in zip(g.activities, q.activities)]
    return [(qq, Pose3D(gg, skeleton), a) for qq, gg, a in zip(queries, g.joints, acts)]


# --- commands -------------------------------------------------------------

def cmd_build(args) -> int:
    skeleton = resolve_skeleton(args.skeleton)
    t0 = time.perf_counter()
    table = libstore.read_pose_csv(args.poses, skeleton, dim=3)
    if not table.ids:
        raise InputError(f"{args.poses}: no pose rows")
    cam = libstore.read_camera_json(args.camera)
    azimuths = [math.radians(a) for a in parse_floats(args.azimuths)]
    if not azimuths:
        raise InputError("--azimuths must list at least one angle")
    t1 = time.perf_counter()
    poses = [Pose3D(j, skeleton) for j in table.joints]
    pairs, skipped = libstore.augment_cameras(poses, cam, azimuths)
    if not pairs:
        raise InputError("every virtual view was behind the camera")
    labels = {id(p): (a, s) for p, a, s in zip(poses, table.activities, table.subjects)}
    items = [(p, c) + labels[id(p)] for p, c in pairs]
    meta = {"source": str(args.poses), "azimuths_deg": parse_floats(args.azimuths), "skipped_views": skipped}
    lib = libstore.build_library(items, skeleton, meta)
    t2 = time.perf_counter()
    libstore.save(lib, args.out)
    t3 = time.perf_counter()
    print(f"entries: {len(lib)}")
    print(f"skipped views: {skipped}")
    RunManifest("build", _config(args), file_sha256(args.out), None,
                {"read_s": t1 - t0, "build_s": t2 - t1, "save_s": t3 - t2}, [str(args.out)]
                ).write(manifest_path(args.out))
    return EXIT_OK


def cmd_lift(args) -> int:
    lib = _load_library(args.lib)
    table, queries = _read_queries(args, lib.skeleton)
    mcfg = MatchConfig(args.k, args.sigma, args.normalization)
    rcfg = RefineConfig(args.max_iterations)
    get_index(lib, mcfg.normalization)
    threads = resolve_threads(args.threads)
    results = [lift(lib, q, mcfg, rcfg, args.refine, args.warp, threads=threads) for q in queries]
    out = []
    for qid, act, r in zip(table.ids, table.activities, results):
        d = r.to_dict()
        d["query_id"] = qid
        d["activity"] = act
        out.append(d)
    _write_text(args.out, json.dumps(out, indent=1, sort_keys=True) + "\n")
    stages = {s: [r.timings[s] for r in results] for s in ("match_ms", "refine_ms", "warp_ms")}
    summary = {s: float(np.mean(v)) for s, v in stages.items()}
    print(f"lifted {len(results)} queries")
    for s, v in summary.items():
        print(f"{s.replace('_ms', '')} latency: {v:.3f} ms/query")
    RunManifest("lift", _config(args), file_sha256(args.lib), None, summary, [str(args.out)]
                ).write(manifest_path(args.out))
    return EXIT_OK


def _eval_report(lib, items, args, protocol, threads, camera=None):
    mcfg = MatchConfig(args.k, args.sigma, args.normalization)
    rcfg = RefineConfig(args.max_iterations)
    ablate = args.ablate
    cam = camera or lib.camera(0)

    if ablate in ("x", "xstar"):
        def fn(q, i):
            r = lift(lib, q, mcfg, rcfg, args.refine, ablate == "xstar", threads=1)
            return r.prediction
    elif ablate == "gtdepth":
        def fn(q, i):
            return upper_bound_gt_depth(q, items[i][1], cam)
    else:
        proto = EvalProtocol(Protocol.P1_RIGID, lib.skeleton.root_index)

        def fn(q, i):
            best = oracle_best_exemplar(lib, items[i][1], proto)
            if ablate == "oracle":
                return Pose3D(lib.camera_frame_poses([best])[0], lib.skeleton)
            return warp_exemplar(Pose3D(lib.poses[best], lib.skeleton), lib.camera(best), q, best).pose3d_star

    get_index(lib, mcfg.normalization)
    return evaluate(fn, items, protocol, threads=threads, label=ablate)


def _protocol(args, skeleton):
    return EvalProtocol(Protocol(args.protocol), skeleton.root_index, not args.exclude_root)


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    lib = _load_library(args.lib)
    items = _read_eval_set(args, lib.skeleton)
    camera = libstore.read_camera_json(args.camera) if args.camera else None
    threads = resolve_threads(args.threads)
    t1 = time.perf_counter()
    report = _eval_report(lib, items, args, _protocol(args, lib.skeleton), threads, camera)
    t2 = time.perf_counter()
    out = Path(args.out)
    csv_path = out.with_suffix(".csv")
    _write_text(out, report.to_json())
    _write_text(csv_path, report.to_csv())
    print(f"{args.ablate} [{args.protocol}] mean {report.overall_mean:.2f} mm, "
          f"median {report.overall_median:.2f} mm over {report.count} queries"
          + (f" ({len(report.failures)} failed)" if report.failures else ""))
    RunManifest("eval", _config(args), file_sha256(args.lib), None,
                {"load_s": t1 - t0, "eval_s": t2 - t1, "threads": threads}, [str(out), str(csv_path)]
                ).write(manifest_path(out))
    return EXIT_OK


def cmd_sweep(args) -> int:
    fractions = parse_floats(args.fractions)
    seeds = parse_ints(args.seeds)
    if not fractions:
        raise InputError("--fractions must list at least one fraction")
    if not seeds:
        raise InputError("--seeds must list at least one seed")
    if any(not 0 < f <= 1 for f in fractions):
        raise InputError("fractions must lie in (0, 1]")
    lib = _load_library(args.lib)
    items = _read_eval_set(args, lib.skeleton)
    protocol = _protocol(args, lib.skeleton)
    threads = resolve_threads(args.threads)
    rows, timings = [], {}
    for frac in fractions:
        for seed in seeds:
            t0 = time.perf_counter()
            sub = libstore.subsample(lib, frac, seed)
            rep = _eval_report(sub, items, args, protocol, threads)
            timings[f"{frac}/{seed}"] = time.perf_counter() - t0
            rows.append((frac, seed, len(sub), rep.overall_mean, rep.overall_median))
            print(f"fraction {frac:g} seed {seed}: {len(sub)} exemplars, "
                  f"mean {rep.overall_mean:.2f} mm, median {rep.overall_median:.2f} mm")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fraction", "seed", "library_size", "mean", "median"])
        for frac, seed, n, mean, med in rows:
            w.writerow([repr(frac), seed, n, repr(mean), repr(med)])
    RunManifest("sweep", _config(args), file_sha256(args.lib), None, timings, [str(args.out)]
                ).write(manifest_path(args.out))
    return EXIT_OK


def percentile(values, q) -> float:
    """Nearest-rank percentile, q in (0, 1]."""
    s = sorted(values)
    return s[max(0, math.ceil(q * len(s)) - 1)]


def cmd_bench(args) -> int:
    if args.repeat < 1:
        raise InputError("--repeat must be >= 1")
    lib = _load_library(args.lib)
    _, queries = _read_queries(args, lib.skeleton)
    if not queries:
        raise InputError("no queries")
    threads = resolve_threads(args.threads)
    cfg = MatchConfig(args.k)
    get_index(lib, cfg.normalization)
    for q in queries[:3]:
        match(lib, q, cfg, threads=threads)
    lat = []
    for r in range(args.repeat):
        q = queries[r % len(queries)]
        t0 = time.perf_counter()
        match(lib, q, cfg, threads=threads)
        lat.append((time.perf_counter() - t0) * 1e3)
    t0 = time.perf_counter()
    with ThreadPoolExecutor(threads) as pool:
        list(pool.map(lambda q: match(lib, q, cfg, threads=1), queries))
    wall = time.perf_counter() - t0
    result = {
        "library_size": len(lib),
        "k": args.k,
        "repeat": args.repeat,
        "threads": threads,
        "p50_ms": percentile(lat, 0.50),
        "p95_ms": percentile(lat, 0.95),
        "mean_ms": float(np.mean(lat)),
        "concurrent_queries": len(queries),
        "throughput_qps": len(queries) / wall,
        "hardware": {
            "cpu_count": os.cpu_count(),
            "usable_cpus": resolve_threads(None) if not os.environ.get(ENV_THREADS) else None,
            "processor": platform.processor() or platform.machine(),
            "platform": platform.platform(),
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    print(f"match latency over {args.repeat} single queries ({len(lib)} exemplars, {threads} threads): "
          f"p50 {result['p50_ms']:.2f} ms, p95 {result['p95_ms']:.2f} ms")
    print(f"concurrent throughput: {result['throughput_qps']:.1f} queries/s")
    if args.out:
        _write_text(args.out, json.dumps(result, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    overrides = {}
    if args.pose_count is not None:
        overrides["pose_count"] = args.pose_count
    if args.query_count is not None:
        overrides["query_count"] = args.query_count
    if args.noise is not None:
        overrides["noise_sigma_2d"] = args.noise
    if args.preset == "paper-shape":
        cfg = paper_shape_preset(args.seed, **overrides)
    else:
        cfg = SynthConfig(seed=args.seed, **overrides)
    data = generate_data(cfg)
    paths = write_dataset(data, cfg, args.out)
    if args.plib:
        libstore.save(data.library, args.plib)
        paths["plib"] = str(args.plib)
    print(f"library poses: {cfg.library_count}, queries: {cfg.query_count}")
    for k, v in paths.items():
        print(f"{k}: {v}")
    RunManifest("synth", _config(args), None, args.seed, {}, sorted(paths.values())
                ).write(Path(args.out) / "synth.manifest.json")
    return EXIT_OK


# --- parser ---------------------------------------------------------------

def _add_match_args(p, lift_flags=True):
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--sigma", type=float, default=10.0)
    p.add_argument("--normalization", choices=[n.value for n in Normalization], default="none")
    p.add_argument("--max-iterations", type=int, default=50)
    if lift_flags:
        p.add_argument("--refine", type=parse_bool, default=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poselift", description="Exemplar-based 3D pose lifting")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build a binary exemplar library from CSV poses")
    p.add_argument("--poses", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--azimuths", default="0", help="comma-separated virtual camera azimuths, degrees")
    p.add_argument("--skeleton")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("lift", help="lift 2D query poses to 3D")
    p.add_argument("--lib", required=True)
    p.add_argument("--query", dest="queries", required=True)
    _add_match_args(p)
    p.add_argument("--warp", type=parse_bool, default=True)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lift)

    def eval_args(p):
        p.add_argument("--lib", required=True)
        p.add_argument("--queries", required=True)
        p.add_argument("--gt", required=True)
        p.add_argument("--protocol", choices=[m.value for m in Protocol], default="p1")
        p.add_argument("--ablate", choices=ABLATIONS, default="xstar")
        p.add_argument("--exclude-root", action="store_true", help="drop the root joint from P2 averages")
        _add_match_args(p)
        p.add_argument("--threads", type=int)

    p = sub.add_parser("eval", help="MPJPE report for one ablation")
    eval_args(p)
    p.add_argument("--camera", help="intrinsics for --ablate gtdepth (default: library entry 0)")
    p.add_argument("--out", required=True, help="JSON report path; a CSV table is written beside it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="MPJPE versus library fraction")
    eval_args(p)
    p.add_argument("--fractions", required=True)
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="match latency percentiles and throughput")
    p.add_argument("--lib", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--repeat", type=int, default=100)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic dataset in the ingestion formats")
    p.add_argument("--preset", choices=("small", "paper-shape"), default="small")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pose-count", type=int)
    p.add_argument("--query-count", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--plib", help="also save the library in binary form")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, libstore.CSVFormatError, PoseLiftError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
