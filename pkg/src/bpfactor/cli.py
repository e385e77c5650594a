"""Command-line front end.

    bpfactor factorize    --transform dft,dct --N 8..64 --trials 16 --out runs/a
    bpfactor verify-exact --N-max 256
    bpfactor gradcheck    --step 1e-5
    bpfactor baselines    --transform legendre --N 8
    bpfactor bench        --backend both --out runs/bench
    bpfactor report       --inputs runs/a runs/b --out runs/report

Every subcommand also takes ``--config FILE`` (a JSON run config). Flags given
on the command line override the file. The fully resolved config is written to
``<out>/config.json`` (or to stderr without ``--out``) and can be fed back with
``--config`` to repeat the run. Exit codes: 0 ok, 1 failed threshold, 2 usage.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import baselines as bl
from . import bench
from . import exact
from . import transforms as tz
from .model import ARCHS, gradient_check, random_instance
from .numeric import Rng, derive_seed
from .train import TrainConfig, search, worker_count

RECOVERY_RMSE = 1e-4
CONTROL_RMSE = 5e-2
GRADCHECK_TOL = 1e-6

# command -> resolved defaults; these are also the only accepted config keys
DEFAULTS = {
    "factorize": {"transform": ["dft"], "N": [8, 16, 32, 64], "arch": None, "trials": 16,
                  "max_steps": None, "seed": 0, "out": None, "threads": 1, "strict": False},
    "verify-exact": {"N_max": 1024, "toeplitz_max": 512, "seed": 0, "corrupt": False,
                     "out": None, "strict": False, "threads": 1},
    "gradcheck": {"instances": 20, "step": 1e-5, "seed": 0, "out": None, "strict": False, "threads": 1},
    "baselines": {"transform": ["dft", "dct", "dst", "conv", "hadamard", "hartley", "legendre", "randn"],
                  "N": [8, 16, 32], "seed": 0, "out": None, "strict": False, "threads": 1},
    "bench": {"N": [1 << j for j in range(4, 14)], "repetitions": 31, "backend": "both",
              "seed": 0, "out": None, "strict": False, "threads": 1},
    "report": {"inputs": [], "out": None, "seed": 0, "strict": False, "threads": 1},
}


class UsageError(Exception):
    pass


# -- config -------------------------------------------------------------------


def parse_sizes(value) -> list[int]:
    """'8..64' (powers of two), '8,16,32', 8 or [8, 16] -> sorted list of sizes."""
    if isinstance(value, int):
        sizes = [value]
    elif isinstance(value, list):
        sizes = [int(v) for v in value]
    elif isinstance(value, str) and ".." in value:
        lo, hi = (int(p) for p in value.split("..", 1))
        sizes = []
        n = lo
        while n <= hi:
            sizes.append(n)
            n *= 2
    elif isinstance(value, str):
        sizes = [int(p) for p in value.split(",") if p]
    else:
        raise UsageError(f"cannot parse sizes from {value!r}")
    for n in sizes:
        if n < 2 or n & (n - 1):
            raise UsageError(f"sizes must be powers of two >= 2, got {n}")
    if not sizes:
        raise UsageError("empty size list")
    return sorted(set(sizes))


def parse_list(value) -> list[str]:
    if isinstance(value, str):
        return [v for v in value.split(",") if v]
    return [str(v) for v in value]


def resolve(command: str, file_cfg: dict, flags: dict) -> dict:
    cfg = dict(DEFAULTS[command])
    file_cfg = dict(file_cfg)
    if file_cfg.pop("command", command) != command:
        raise UsageError(f"config is for another command, not {command!r}")
    unknown = sorted(set(file_cfg) - set(cfg))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    cfg.update(file_cfg)
    cfg.update({k: v for k, v in flags.items() if v is not None})

    if "N" in cfg:
        cfg["N"] = parse_sizes(cfg["N"])
    if "transform" in cfg:
        cfg["transform"] = parse_list(cfg["transform"])
        for kind in cfg["transform"]:
            if kind not in tz.KINDS:
                raise UsageError(f"unknown transform {kind!r}; choose from {', '.join(tz.KINDS)}")
    if cfg.get("arch") is not None and cfg["arch"] not in ARCHS:
        raise UsageError(f"unknown arch {cfg['arch']!r}; choose from {', '.join(ARCHS)}")
    if "inputs" in cfg:
        cfg["inputs"] = parse_list(cfg["inputs"])
    if command == "bench" and cfg["backend"] not in ("numba", "numpy", "both"):
        raise UsageError("backend must be numba, numpy or both")
    for key in ("trials", "instances", "repetitions", "threads"):
        if key in cfg and (not isinstance(cfg[key], int) or cfg[key] < 1):
            raise UsageError(f"{key} must be a positive integer")
    if command == "factorize" and cfg["trials"] < 4:
        raise UsageError("trials must be at least 4")
    if command == "bench" and cfg["repetitions"] < 31:
        raise UsageError("repetitions must be at least 31")
    cfg["command"] = command
    return dict(sorted(cfg.items()))


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def emit(cfg: dict, files: dict) -> None:
    """Write result files (name -> text) plus the resolved config."""
    text = json.dumps(cfg, indent=1, sort_keys=True) + "\n"
    if cfg.get("out") is None:
        sys.stderr.write(text)
        for name, body in files.items():
            if name.endswith(".csv") or name.endswith(".md"):
                sys.stdout.write(body)
        return
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(text)
    for name, body in files.items():
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(body)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- factorize ----------------------------------------------------------------


def passes(kind: str, rmse: float) -> bool:
    """Per-transform acceptance: recovery below 1e-4; Randn must stay above 5e-2, Legendre at or below it."""
    if kind == "randn":
        return rmse > CONTROL_RMSE
    if kind == "legendre":
        return rmse <= CONTROL_RMSE
    return rmse < RECOVERY_RMSE


def _factorize_cell(args):
    kind, N, arch, trials, seed, max_steps = args
    spec = tz.TransformSpec(kind, N, seed=seed)
    res = search(spec, arch, trials, master_seed=seed, max_steps=max_steps, base=TrainConfig())
    return res


def cmd_factorize(cfg: dict) -> int:
    cells = []
    for kind in cfg["transform"]:
        arch = cfg["arch"] or bl.arch_for(kind)
        for N in cfg["N"]:
            cells.append((kind, N, arch, cfg["trials"], cfg["seed"], cfg["max_steps"]))
    workers = min(worker_count(cfg["threads"]), len(cells))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_factorize_cell, cells))
    else:
        results = [_factorize_cell(c) for c in cells]

    rows, files, failed = [], {}, []
    timing = []
    for (kind, N, arch, trials, _, _), res in zip(cells, results):
        ok = passes(kind, res.final_rmse)
        if not ok:
            failed.append(f"{kind} N={N}")
        rows.append([kind, N, arch, repr(res.final_rmse), res.steps_used, trials,
                     "" if res.hardened_at is None else res.hardened_at,
                     repr(res.rounding_distance), int(ok)])
        snap = res.to_json()
        timing.append([kind, N, f"{snap.pop('wall_time'):.3f}"])
        files[f"models/{kind}_N{N}.json"] = json.dumps(snap, indent=1, sort_keys=True) + "\n"
        files[f"search/{kind}_N{N}.csv"] = _csv(
            ["trial", "learning_rate", "tie_logits", "steps", "promoted", "rmse", "diverged", "hardened_at"],
            [[r["trial"], repr(r["learning_rate"]), int(r["tie_logits"]), r["budget"], int(r["promoted"]),
              "" if r["rmse"] is None else repr(r["rmse"]), int(r["diverged"]),
              "" if r["hardened_at"] is None else r["hardened_at"]] for r in res.search_log])
    files["results.csv"] = _csv(["transform", "N", "arch", "rmse", "steps", "trials", "hardened_at",
                                 "rounding_distance", "passed"], rows)
    files["table.csv"] = rmse_table_csv(rows)
    emit(cfg, files)
    if cfg["out"] is not None:
        (Path(cfg["out"]) / "timing.csv").write_text(_csv(["transform", "N", "wall_s"], timing))
    for kind, N, arch, rmse, *_rest, ok in rows:
        print(f"{kind:9s} N={N:<5d} {arch:6s} rmse={float(rmse):.3e} {'ok' if ok else 'FAIL'}", file=sys.stderr)
    if failed and cfg["strict"]:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def rmse_table_csv(rows) -> str:
    """Wide table: one row per transform, one column per N."""
    sizes = sorted({r[1] for r in rows})
    grid = {}
    for r in rows:
        grid.setdefault(r[0], {})[r[1]] = r[3]
    return _csv(["transform"] + [f"N={n}" for n in sizes],
                [[k] + [grid[k].get(n, "") for n in sizes] for k in grid])


# -- verify-exact -------------------------------------------------------------


def cmd_verify_exact(cfg: dict) -> int:
    n_max = cfg["N_max"]
    sizes = [1 << j for j in range(1, n_max.bit_length()) if 1 << j <= n_max]
    rows = exact.verify_exact_factorizations(sizes, toeplitz_max=min(cfg["toeplitz_max"], n_max),
                                      seed=cfg["seed"], corrupt=cfg["corrupt"])
    body = exact.report_csv(rows)
    worst = {}
    for r in rows:
        worst[r["transform"]] = max(worst.get(r["transform"], 0.0), r["max_abs_error"])
    summary = _csv(["transform", "max_abs_error", "threshold", "passed"],
                   [[k, f"{v:.3e}", f"{exact.THRESHOLDS[k]:.0e}", int(v < exact.THRESHOLDS[k])]
                    for k, v in worst.items()])
    emit(cfg, {"exact.csv": body, "exact_summary.csv": summary})
    ok = all(r["passed"] for r in rows)
    if cfg["out"] is not None:
        sys.stdout.write(summary)
    print("all exact factorizations pass" if ok else "exact factorization FAILED", file=sys.stderr)
    return 0 if ok else 1


# -- gradcheck ----------------------------------------------------------------


def gradcheck_cases(count: int) -> list[tuple]:
    """(arch, field, N, tied, extra_perm) cases; the larger cases come first so small counts still cover them."""
    combos = []
    for N in (16, 8, 4):
        for arch in ("bpbp", "bp", "bp2r2"):
            for field in ("complex", "real"):
                combos.append((arch, field, N))
    cases = []
    i = 0
    while len(cases) < count:
        arch, field, N = combos[i % len(combos)]
        cases.append((arch, field, N, bool(i % 2), i % 3 == 2))
        i += 1
    return cases


def run_gradcheck(instances: int = 20, step: float = 1e-5, seed: int = 0) -> list[dict]:
    out = []
    for i, (arch, field, N, tied, extra) in enumerate(gradcheck_cases(instances)):
        rng = Rng(derive_seed(seed, i))
        model = random_instance(N, arch, field, rng, tie_logits=tied, extra_perm=extra)
        target = rng.normal(0.0, 1.0, N * N).reshape(N, N)
        if field == "complex":
            target = target + 1j * rng.normal(0.0, 1.0, N * N).reshape(N, N)
        err = gradient_check(model, target, step, entropy_weight=0.1 if i % 4 == 3 else 0.0)
        out.append({"arch": arch, "field": field, "N": N, "tied": tied, "extra_perm": extra,
                    "params": int(model.trainable.sum()), "rel_error": err})
    return out


def cmd_gradcheck(cfg: dict) -> int:
    rows = run_gradcheck(cfg["instances"], cfg["step"], cfg["seed"])
    body = _csv(["arch", "field", "N", "tied", "extra_perm", "params", "rel_error"],
                [[r["arch"], r["field"], r["N"], int(r["tied"]), int(r["extra_perm"]), r["params"],
                  f"{r['rel_error']:.3e}"] for r in rows])
    emit(cfg, {"gradcheck.csv": body})
    worst = max(r["rel_error"] for r in rows)
    print(f"worst relative error {worst:.3e} (step {cfg['step']:g})")
    return 0 if worst < GRADCHECK_TOL else 1


# -- baselines ----------------------------------------------------------------


def cmd_baselines(cfg: dict) -> int:
    rows = bl.baseline_table(cfg["transform"], cfg["N"], seed=cfg["seed"])
    emit(cfg, {"baselines.csv": bl.table_csv(rows, with_timing=False)})
    if cfg["out"] is not None:
        (Path(cfg["out"]) / "baselines_timing.csv").write_text(bl.table_csv(rows, with_timing=True))
    if cfg["strict"]:
        # the split grid includes both pure ends, so the combined method never loses
        by_cell = {}
        for r in rows:
            by_cell.setdefault((r["transform"], r["N"]), {})[r["method"]] = r["rmse"]
        for cell, m in by_cell.items():
            pure = min(v for k, v in m.items() if k != "sparse+lowrank")
            if m["sparse+lowrank"] > pure + 1e-12:
                print(f"sparse+lowrank worse than a pure baseline at {cell}", file=sys.stderr)
                return 1
    return 0


# -- bench --------------------------------------------------------------------


def bench_checks(records) -> list[tuple[str, bool]]:
    checks = []
    for backend in sorted({r.backend for r in records if r.backend}):
        sub = [r for r in records if r.backend == backend]
        try:
            d = bench.loglog_slope(sub, "dense_matvec")
            b = bench.loglog_slope(sub, "butterfly_matvec")
        except ValueError:
            continue
        checks.append((f"{backend}: dense slope {d:.2f} in [1.7, 2.3]", 1.7 <= d <= 2.3))
        checks.append((f"{backend}: butterfly slope {b:.2f} in [0.9, 1.4]", 0.9 <= b <= 1.4))
        big = max(r.N for r in sub if r.operation == "dense_matvec")
        tb = next(r.median_ns for r in sub if r.operation == "butterfly_matvec" and r.N == big)
        td = next(r.median_ns for r in sub if r.operation == "dense_matvec" and r.N == big)
        checks.append((f"{backend}: butterfly {tb:.0f} ns < dense {td:.0f} ns at N={big}", tb < td))
    return checks


def cmd_bench(cfg: dict) -> int:
    from ._accel import USE_NUMBA

    backends = ["numba", "numpy"] if cfg["backend"] == "both" else [cfg["backend"]]
    if not USE_NUMBA:
        if cfg["backend"] == "numba":
            raise UsageError("numba backend requested but BF_DISABLE_NUMBA is set")
        backends = ["numpy"]
    records = []
    for backend in backends:
        records += bench.run(cfg["N"], repetitions=cfg["repetitions"], seed=cfg["seed"], backend=backend)
    slopes = bench.slopes(records)
    emit(cfg, {"bench.csv": bench.records_csv(records),
               "slopes.json": json.dumps(slopes, indent=1, sort_keys=True) + "\n"})
    for name, value in slopes.items():
        print(f"slope {name}: {value:.3f}", file=sys.stderr)
    ok = True
    for text, passed in bench_checks(records):
        print(("ok   " if passed else "FAIL ") + text, file=sys.stderr)
        ok &= passed
    return 1 if (cfg["strict"] and not ok) else 0


# -- report -------------------------------------------------------------------


def _load_input(path: str) -> tuple[list[dict], dict | None, str]:
    p = Path(path)
    csv_path = p / "results.csv" if p.is_dir() else p
    if not csv_path.is_file():
        raise UsageError(f"missing input: {path}")
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cfg_path = csv_path.parent / "config.json"
    cfg = json.loads(cfg_path.read_text()) if cfg_path.is_file() else None
    return rows, cfg, str(csv_path)


def heat_color(rmse: float) -> str:
    """Green band for recovered cells (< 1e-4); yellow to red by log10 RMSE above it."""
    if not math.isfinite(rmse):
        return "#7f7f7f"
    if rmse < RECOVERY_RMSE:
        t = min(1.0, max(0.0, (-4.0 - math.log10(max(rmse, 1e-12))) / 4.0))
        g = int(160 + 60 * t)
        return f"#2c{g:02x}4a"
    t = min(1.0, max(0.0, (math.log10(rmse) + 4.0) / 4.0))
    r, g = 250, int(220 * (1 - t))
    return f"#{r:02x}{g:02x}3c"


def heatmap_svg(grid: dict, sizes: list[int]) -> str:
    kinds = list(grid)
    cw, ch, left, top = 90, 30, 90, 30
    w, h = left + cw * len(sizes) + 10, top + ch * len(kinds) + 10
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="monospace" font-size="11">']
    for j, n in enumerate(sizes):
        parts.append(f'<text x="{left + cw * j + cw / 2}" y="{top - 10}" text-anchor="middle">N={n}</text>')
    for i, kind in enumerate(kinds):
        y = top + ch * i
        parts.append(f'<text x="{left - 6}" y="{y + ch / 2 + 4}" text-anchor="end">{kind}</text>')
        for j, n in enumerate(sizes):
            if n not in grid[kind]:
                continue
            rmse = grid[kind][n]
            x = left + cw * j
            label = f"{math.log10(rmse):.2f}" if rmse > 0 else "-inf"
            parts.append(f'<rect x="{x}" y="{y}" width="{cw - 2}" height="{ch - 2}" fill="{heat_color(rmse)}">'
                         f'<title>{kind} N={n} rmse={rmse:.3e}</title></rect>')
            parts.append(f'<text x="{x + cw / 2}" y="{y + ch / 2 + 4}" text-anchor="middle">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_report(cfg: dict) -> int:
    if not cfg["inputs"]:
        raise UsageError("report needs --inputs")
    grid, prov = {}, []
    for path in cfg["inputs"]:
        rows, run_cfg, csv_path = _load_input(path)
        prov.append((csv_path, config_hash(run_cfg) if run_cfg is not None else "none"))
        for r in rows:
            rmse = float(r["rmse"])
            cell = grid.setdefault(r["transform"], {})
            n = int(r["N"])
            # when runs overlap keep the best result
            cell[n] = min(cell.get(n, math.inf), rmse)
    sizes = sorted({n for cells in grid.values() for n in cells})
    lines = ["# RMSE by transform and size", "",
             "| transform | " + " | ".join(f"N={n}" for n in sizes) + " |",
             "|---|" + "---|" * len(sizes)]
    for kind, cells in grid.items():
        vals = [f"{cells[n]:.1e}" if n in cells else "" for n in sizes]
        lines.append(f"| {kind} | " + " | ".join(vals) + " |")
    lines += ["", f"Cells below {RECOVERY_RMSE:.0e} count as recovered.", "", "## Inputs", ""]
    lines += [f"- `{p}` config sha256:{h}" for p, h in prov]
    md = "\n".join(lines) + "\n"
    emit(cfg, {"report.md": md, "heatmap.svg": heatmap_svg(grid, sizes)})
    return 0


# -- entry point --------------------------------------------------------------

COMMANDS = {
    "factorize": cmd_factorize,
    "verify-exact": cmd_verify_exact,
    "gradcheck": cmd_gradcheck,
    "baselines": cmd_baselines,
    "bench": cmd_bench,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bpfactor", allow_abbrev=False,
                                     description="Learn and verify butterfly factorizations of linear transforms.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--strict", action="store_true", default=None, help="exit 1 on a failed threshold")
        p.add_argument("--threads", type=int, help="worker processes (BF_THREADS overrides)")
        return p

    p = common(sub.add_parser("factorize", allow_abbrev=False, help="learn factorizations by random search"))
    p.add_argument("--transform", help=f"comma list of {', '.join(tz.KINDS)}")
    p.add_argument("--N", help="sizes: 8..64 or 8,16,32")
    p.add_argument("--arch", help=f"one of {', '.join(ARCHS)}; default bp (bpbp for conv)")
    p.add_argument("--trials", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)

    p = common(sub.add_parser("verify-exact", allow_abbrev=False, help="check the hand-built factorizations"))
    p.add_argument("--N-max", dest="N_max", type=int)
    p.add_argument("--toeplitz-max", dest="toeplitz_max", type=int)
    p.add_argument("--corrupt", action="store_true", default=None, help=argparse.SUPPRESS)

    p = common(sub.add_parser("gradcheck", allow_abbrev=False, help="finite-difference gradient check"))
    p.add_argument("--step", type=float)
    p.add_argument("--instances", type=int)

    p = common(sub.add_parser("baselines", allow_abbrev=False, help="sparse / low-rank baselines at equal budget"))
    p.add_argument("--transform")
    p.add_argument("--N")

    p = common(sub.add_parser("bench", allow_abbrev=False, help="matvec timing and scaling slopes"))
    p.add_argument("--N")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--backend", help="numba, numpy or both")

    p = common(sub.add_parser("report", allow_abbrev=False, help="markdown table and SVG heatmap from runs"))
    p.add_argument("--inputs", nargs="+")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        file_cfg = {}
        if args.config:
            try:
                file_cfg = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config {args.config}: {exc}") from exc
            if not isinstance(file_cfg, dict):
                raise UsageError("config must be a JSON object")
        cfg = resolve(args.command, file_cfg, flags)
        return COMMANDS[args.command](cfg)
    except (UsageError, ValueError) as exc:
        print(f"bpfactor {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
