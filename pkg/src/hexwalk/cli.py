"""Command-line experiment runner.

Every run writes one directory holding ``manifest.json`` (effective config,
seed, versions, timing, output checksums) and plain CSV/JSON outputs.  A
manifest can be passed back as ``--config`` to regenerate its outputs.
"""

from __future__ import annotations

import argparse
import ast
import csv
import hashlib
import io
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import ContractError, DomainError, FitError, InputError, NumericalError, PathError, SizeError
from .lattice import BoxSpec
from .operators import (
    C0,
    C0_TILDE,
    IDENTITY,
    SWAP12,
    CoinField,
    coin_near_c0,
    coin_theta,
    polar_unitary,
    unitarity_defect,
)

log = logging.getLogger("hexwalk")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
LITERAL_TOL = 1e-8
PRESETS = {"c0": C0, "c0-tilde": C0_TILDE, "identity": IDENTITY, "swap12": SWAP12}


class UsageError(Exception):
    """Invalid command line or configuration."""


# -- parsing helpers --------------------------------------------------------

def _coin_matrix(spec) -> np.ndarray:
    if isinstance(spec, str):
        s = spec.strip()
        low = s.lower()
        if low in PRESETS:
            return PRESETS[low].copy()
        if low.startswith("theta:"):
            return coin_theta(float(s.split(":", 1)[1]))
        if low.startswith("near-c0:"):
            parts = s.split(":")
            if len(parts) != 3:
                raise InputError(f"near-c0 takes radius and seed: {spec!r}")
            return coin_near_c0(float(parts[1]), int(parts[2]))
        try:
            spec = ast.literal_eval(s)
        except (ValueError, SyntaxError) as exc:
            raise InputError(f"unrecognized coin spec {spec!r}") from exc
    try:
        m = np.array(spec, dtype=complex)
    except (TypeError, ValueError) as exc:
        raise InputError(f"coin literal is not a numeric matrix: {spec!r}") from exc
    if m.shape != (3, 3):
        raise InputError(f"coin literal must be 3x3, got shape {m.shape}")
    defect = unitarity_defect(m)
    if defect > LITERAL_TOL:
        raise InputError(f"coin literal is not unitary (defect {defect:.3e} > {LITERAL_TOL})")
    return polar_unitary(m) if defect > 0 else m


def coin_parse(spec) -> CoinField:
    """Coin field from a preset, ``theta:<angle>``, ``near-c0:<r>:<seed>``,
    a 3×3 matrix literal, or ``{"A": spec, "B": spec}`` for two sublattices."""
    if isinstance(spec, dict):
        if set(spec) != {"A", "B"}:
            raise InputError("a sublattice coin needs exactly the keys 'A' and 'B'")
        return CoinField.two_sublattice(_coin_matrix(spec["A"]), _coin_matrix(spec["B"]))
    return CoinField(_coin_matrix(spec))


def parse_complex(v) -> complex:
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, str):
        try:
            return complex(v.replace(" ", ""))
        except ValueError as exc:
            raise UsageError(f"not a complex number: {v!r}") from exc
    raise UsageError(f"not a complex number: {v!r}")


def parse_box(v) -> BoxSpec:
    if not (isinstance(v, (list, tuple)) and len(v) == 2):
        raise UsageError(f"a box is a pair [L1, L2], got {v!r}")
    return BoxSpec(int(v[0]), int(v[1]))


def _num(x: float) -> str:
    return format(float(x), ".17g")


# -- command schemas --------------------------------------------------------

# key -> default; None means required
SCHEMAS = {
    "bands": {"coin": "c0", "coin_a": None, "coin_b": None, "grid": 64},
    "gapprob": {"z": [1.2, 0.0], "eta": 0.05, "box": [3, 3], "samples": 10_000, "seed": 0},
    "fracmom": {"coin": "near-c0:0.05:7", "s": 0.2, "z": [0.95, 0.0], "angles": 8, "z_list": None,
                "max_distance": 12,
                "min_distance": 2, "samples": 200, "seed": 0, "ambient": [15, 15],
                "mode": "decorrelated", "ray": [1, 2], "source_coin": 1, "threads": 1},
    "dynloc": {"coin": "near-c0:0.05:7", "n_max": 200, "max_distance": 12, "min_distance": 2,
               "samples": 200, "seed": 0, "ambient": [20, 20], "mode": "decorrelated",
               "ray": [1, 2], "source_coin": 1, "threads": 1},
    "index": {"coin": "swap12", "path": None, "path_text": None, "hh_steps": 8, "pp_steps": 16,
              "radius": 4, "threshold": 1e-8, "trace_tail_bound": 1e-6},
    "check": {"seed": 0, "samples": 20},
}
OPTIONAL = {"coin_a", "coin_b", "path", "path_text", "z_list"}


def effective_config(command: str, file_cfg: dict, flags: dict) -> dict:
    schema = SCHEMAS[command]
    if not isinstance(file_cfg, dict):
        raise UsageError("config must be a JSON object")
    if "command" in file_cfg and "config" in file_cfg:  # a manifest from an earlier run
        if file_cfg["command"] != command:
            raise UsageError(f"manifest is for command {file_cfg['command']!r}, not {command!r}")
        file_cfg = file_cfg["config"]
    for key in file_cfg:
        if key not in schema:
            raise UsageError(f"config key {key!r} is not valid for {command}; allowed: {sorted(schema)}")
    cfg = {k: v for k, v in schema.items() if v is not None}
    cfg.update(file_cfg)
    for key, value in flags.items():
        if value is None:
            continue
        if key not in schema:
            raise UsageError(f"--{key} is not valid for {command}")
        cfg[key] = value
    for key, default in schema.items():
        if default is None and key not in OPTIONAL and key not in cfg:
            raise UsageError(f"config key {key!r} is required for {command}")
    return cfg


# -- commands ---------------------------------------------------------------

def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in r])
    path.write_text(buf.getvalue())


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _threads(n: int) -> int:
    return (os.cpu_count() or 1) if int(n) == 0 else int(n)


def run_bands(cfg: dict, out: Path) -> dict:
    from .spectral import band_scan, is_flat, k_grid, reduced_symbol

    if ("coin_a" in cfg) != ("coin_b" in cfg):
        raise UsageError("coin_a and coin_b must be given together")
    if "coin_a" in cfg:
        c_a, c_b = _coin_matrix(cfg["coin_a"]), _coin_matrix(cfg["coin_b"])
    else:
        c_a = c_b = _coin_matrix(cfg["coin"])
    grid = k_grid(int(cfg["grid"]))
    rows = band_scan(c_a, c_b, grid)
    header = ["k1", "k2"] + [f"phase{i}" for i in range(6)] + ["trace_re", "trace_im", "touch"]
    _write_csv(out / "bands.csv", header, [(*r[:-1], int(r[-1])) for r in rows])
    dets = np.array([np.linalg.det(reduced_symbol(k, c_a, c_b)) for k in grid])
    summary = {"flat": is_flat(c_a, c_b, int(cfg["grid"])),
               "det_spread": float(np.max(np.abs(dets - dets[0]))),
               "touch_points": int(sum(r[-1] for r in rows))}
    _write_json(out / "summary.json", summary)
    return summary


def run_gapprob(cfg: dict, out: Path) -> dict:
    from .spectral import arc_fraction, gap_probability_exact, gap_probability_mc

    z, eta, box = parse_complex(cfg["z"]), float(cfg["eta"]), parse_box(cfg["box"])
    exact = gap_probability_exact(z, eta, box)
    p, se = gap_probability_mc(z, eta, box, int(cfg["samples"]), int(cfg["seed"]))
    dev = abs(p - exact) / se if se > 0 else (0.0 if p == exact else float("inf"))
    _write_csv(out / "gapprob.csv",
               ["z_re", "z_im", "eta", "L1", "L2", "arc_fraction", "exact", "mc", "mc_stderr", "samples"],
               [(z.real, z.imag, eta, box.L1, box.L2, arc_fraction(z, eta), exact, p, se, int(cfg["samples"]))])
    summary = {"exact": exact, "mc": p, "stderr": se, "deviation_sigma": dev}
    _write_json(out / "summary.json", summary)
    return summary


def _finite(v):
    return v if not isinstance(v, float) or np.isfinite(v) else str(v)


def _write_profile(prof, out: Path, extra: dict | None = None) -> dict:
    _write_csv(out / "profile.csv", ["distance", "mean", "stderr", "samples"], prof.rows())
    fit = {"c": prof.c, "g": prof.g, "r2": prof.r2, "exact_localization": prof.exact_localization,
           "samples": prof.samples, "skipped": prof.meta.get("skipped", 0), "seed": prof.meta.get("seed"),
           "coin_radius": prof.meta.get("coin_radius"),
           "excluded_distances": prof.meta.get("excluded_distances", [])}
    for key in ("g_stderr", "s", "regime", "sup_doubling_change", "n_max"):
        if key in prof.meta:
            fit[key] = prof.meta[key]
    fit.update(extra or {})
    fit = {k: _finite(v) for k, v in fit.items()}
    _write_json(out / "fit.json", fit)
    return fit


def fracmom_z(cfg: dict) -> list[complex]:
    """Explicit ``z_list`` if given, else ``angles`` points on the circle through ``z``."""
    if cfg.get("z_list") is not None:
        if not isinstance(cfg["z_list"], list) or not cfg["z_list"]:
            raise UsageError("z_list must be a non-empty list of complex numbers")
        return [parse_complex(v) for v in cfg["z_list"]]
    from .greens import z_circle

    z = parse_complex(cfg["z"])
    return z_circle(abs(z), int(cfg["angles"]), float(np.angle(z)))


def run_fracmom(cfg: dict, out: Path) -> dict:
    from .greens import decay_profile

    zs = fracmom_z(cfg)
    prof = decay_profile(float(cfg["s"]), zs, coin_parse(cfg["coin"]),
                         int(cfg["max_distance"]), int(cfg["samples"]), int(cfg["seed"]),
                         ray=tuple(cfg["ray"]), ambient=parse_box(cfg["ambient"]), mode=cfg["mode"],
                         min_distance=int(cfg["min_distance"]), source_coin=int(cfg["source_coin"]),
                         threads=_threads(cfg["threads"]))
    # per-z tables; profile.csv holds their average over z
    rows = [(z.real, z.imag, int(d), m, e, prof.samples)
            for z, means, errs in prof.meta["per_z"] for d, m, e in zip(prof.distances, means, errs)]
    _write_csv(out / "profile_by_z.csv", ["z_re", "z_im", "distance", "mean", "stderr", "samples"], rows)
    return _write_profile(prof, out, {"z": [[z.real, z.imag] for z in zs]})


def run_dynloc(cfg: dict, out: Path) -> dict:
    from .dynamics import dynloc_profile

    prof = dynloc_profile(coin_parse(cfg["coin"]), int(cfg["max_distance"]), int(cfg["n_max"]),
                          int(cfg["samples"]), int(cfg["seed"]), mode=cfg["mode"], ray=tuple(cfg["ray"]),
                          ambient=parse_box(cfg["ambient"]), min_distance=int(cfg["min_distance"]),
                          source_coin=int(cfg["source_coin"]), threads=_threads(cfg["threads"]))
    return _write_profile(prof, out)


def run_index(cfg: dict, out: Path) -> dict:
    from .topo import ScatteringPath, compute_index, example_path

    if cfg.get("path") is not None:
        # inline the file so the manifest alone can reproduce the run
        cfg["path_text"] = Path(cfg.pop("path")).read_text()
    if cfg.get("path_text"):
        path = ScatteringPath.loads(cfg["path_text"])
    else:
        path = example_path(int(cfg["hh_steps"]), int(cfg["pp_steps"]))
    report = compute_index(path, coin_parse(cfg["coin"]), int(cfg["radius"]),
                           threshold=float(cfg["threshold"]),
                           trace_tail_bound=float(cfg["trace_tail_bound"]))
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "path.txt").write_text(path.dumps())
    return {"well_defined": report.well_defined, "index": report.index,
            "classification": report.classification, "trace_estimate": report.trace_estimate}


def run_check(cfg: dict, out: Path) -> dict:
    from .checks import identity_suite

    rows = identity_suite(int(cfg["seed"]), int(cfg["samples"]))
    _write_csv(out / "checks.csv", ["check", "value", "tolerance", "passed"],
               [(r.name, r.value, r.tolerance, int(r.passed)) for r in rows])
    failed = [r.name for r in rows if not r.passed]
    if failed:
        raise ContractError(f"identity checks failed: {', '.join(failed)}")
    return {"checks": len(rows), "failed": 0}


COMMANDS = {"bands": run_bands, "gapprob": run_gapprob, "fracmom": run_fracmom,
            "dynloc": run_dynloc, "index": run_index, "check": run_check}


# -- driver -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hexwalk", description="Disordered honeycomb quantum walk experiments.")
    parser.add_argument("--version", action="version", version=f"hexwalk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config file (or an earlier manifest)")
        p.add_argument("--seed", type=int, help="master seed (u64)")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--samples", type=int, help="number of disorder samples")
        p.add_argument("--threads", type=int, help="worker threads, 0 = auto")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _manifest(command, cfg, started, wall, out: Path, summary) -> dict:
    files = {}
    for f in sorted(out.iterdir()):
        if f.name != "manifest.json":
            files[f.name] = hashlib.sha256(f.read_bytes()).hexdigest()
    return {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "versions": {"hexwalk": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "wall_time_s": wall,
        "outputs": files,
        "summary": summary,
    }


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.command
    try:
        file_cfg = {}
        if args.config is not None:
            file_cfg = json.loads(args.config.read_text())
        flags = {"seed": args.seed, "samples": args.samples, "threads": args.threads}
        if args.seed is not None and args.seed < 0:
            raise UsageError("--seed must be a non-negative integer")
        flags = {k: v for k, v in flags.items() if v is not None}
        cfg = effective_config(command, file_cfg, flags)
        out = args.out or Path(f"hexwalk-{command}")
        out.mkdir(parents=True, exist_ok=True)
        started = time.time()
        summary = COMMANDS[command](cfg, out)
        wall = time.time() - started
        _write_json(out / "manifest.json", _manifest(command, cfg, started, wall, out, summary))
        print(json.dumps(summary, sort_keys=True, default=str))
        return EXIT_OK
    except (UsageError, DomainError, InputError, PathError, SizeError, json.JSONDecodeError) as exc:
        print(f"hexwalk {command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, ContractError, FitError) as exc:
        print(f"hexwalk {command}: numerical contract violated: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"hexwalk {command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
