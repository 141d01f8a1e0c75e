"""``fsl`` command-line entry point.

Exit status: 0 on success, 1 when ``verify`` finds a failing law, 2 on
configuration or computational errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import domain as dom
from .assembly import assemble, check_alpha, symbol_error, write_operator
from .eigen import eigendecompose, write_spectrum_csv
from .laws import LAWS, alpha_sweep, read_sweep_csv, verify_sweep, write_sweep_csv
from .paths import survival_curve

log = logging.getLogger("fsl")

COMMANDS = ("assemble", "sweep", "verify", "simulate", "symbol-check")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    domain: str | None = None
    alphas: list[float] = field(default_factory=list)
    h: list[float] = field(default_factory=list)
    k: int = 5
    tol: float = 5e-3
    laws: list[str] = field(default_factory=lambda: list(LAWS))
    seed: int = 0
    out: str | None = None
    format: str | None = None  # verify: jsonl unless csv requested
    threads: int = 1
    sweep: str | None = None
    x: list[float] = field(default_factory=list)
    paths: int = 10000
    dt: float | None = None
    tmax: float = 5.0
    tpoints: int = 101
    xi: list[float] = field(default_factory=lambda: [1.0, 2.0])
    truncation: float = 64.0
    d: int = 1
    spectrum: str | None = None


# ---------------------------------------------------------------- parsing


def _number(token: str, kind=float, name: str = "value"):
    try:
        return kind(token)
    except ValueError:
        raise ConfigError(f"malformed number {token!r} for {name}") from None


def _number_list(text: str, name: str, kind=float) -> list:
    return [_number(t.strip(), kind, name) for t in str(text).split(",") if t.strip()]


def parse_alpha_range(text: str) -> list[float]:
    """``a0:a1:step`` (inclusive) or a comma list."""
    text = str(text)
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"alpha range {text!r} must be a0:a1:step")
        a0, a1, step = (_number(p, float, "alphas") for p in parts)
        if not step > 0:
            raise ConfigError(f"alpha step must be positive in {text!r}")
        count = int(np.floor((a1 - a0) / step + 1e-9)) + 1
        alphas = [round(a0 + j * step, 12) for j in range(count)]
    else:
        alphas = _number_list(text, "alphas")
    for a in alphas:
        if not 0 < a < 2:
            raise ConfigError(f"alpha {a:g} in {text!r} lies outside the open interval (0, 2)")
    return alphas


def read_config_file(path) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


_FIELDS = {
    "assemble": {"domain", "alphas", "h", "k", "out", "spectrum", "threads"},
    "sweep": {"domain", "alphas", "h", "k", "out", "threads"},
    "verify": {"sweep", "laws", "tol", "out", "format", "threads"},
    "simulate": {"domain", "alphas", "x", "paths", "dt", "tmax", "tpoints", "seed", "out", "threads"},
    "symbol-check": {"alphas", "h", "xi", "truncation", "d", "out", "threads"},
}
_REQUIRED = {
    "assemble": ("domain", "alphas", "h", "out"),
    "sweep": ("domain", "alphas", "h", "out"),
    "verify": ("sweep",),
    "simulate": ("domain", "alphas", "x", "out"),
    "symbol-check": ("alphas", "h"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fsl", description="Killed fractional Laplacian eigenvalue laboratory")
    parser.add_argument("--version", action="version", version=f"fsl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value file; command-line flags override it")
        p.add_argument("--threads", help="worker threads (default: $FSL_THREADS or CPU count)")
        p.add_argument("--out", help="output path")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = common(sub.add_parser("assemble", help="assemble one operator to the binary format"))
    p.add_argument("--domain")
    p.add_argument("--alpha", dest="alphas")
    p.add_argument("--h")
    p.add_argument("--k", help="eigenvalues for --spectrum")
    p.add_argument("--spectrum", help="also write the spectrum CSV here")

    p = common(sub.add_parser("sweep", help="extrapolated eigenvalues over a range of alpha"))
    p.add_argument("--domain")
    p.add_argument("--alphas")
    p.add_argument("--k")
    p.add_argument("--h", help="comma-separated spacings, each half the previous")

    p = common(sub.add_parser("verify", help="check spectral laws on a sweep table"))
    p.add_argument("--sweep")
    p.add_argument("--laws", help=f"'all' or a comma list of {', '.join(LAWS)}")
    p.add_argument("--tol")
    p.add_argument("--format", choices=("jsonl", "csv"))

    p = common(sub.add_parser("simulate", help="Monte Carlo survival curve"))
    p.add_argument("--domain")
    p.add_argument("--alpha", dest="alphas")
    p.add_argument("--x", help="start point, comma-separated coordinates")
    p.add_argument("--paths")
    p.add_argument("--dt")
    p.add_argument("--tmax")
    p.add_argument("--tpoints", help="number of output times in [0, tmax]")
    p.add_argument("--seed")

    p = common(sub.add_parser("symbol-check", help="discrete symbol against |xi|^alpha"))
    p.add_argument("--alphas")
    p.add_argument("--h")
    p.add_argument("--xi")
    p.add_argument("--truncation")
    p.add_argument("--d")
    return parser


def _coerce(cfg: RunConfig, key: str, value: str):
    if key == "alphas":
        cfg.alphas = parse_alpha_range(value)
    elif key in ("h", "xi", "x"):
        setattr(cfg, key, _number_list(value, key))
    elif key in ("k", "paths", "tpoints", "seed", "d", "threads"):
        setattr(cfg, key, _number(value, int, key))
    elif key in ("tol", "dt", "tmax", "truncation"):
        setattr(cfg, key, _number(value, float, key))
    elif key == "laws":
        laws = list(LAWS) if value.strip() == "all" else [v.strip() for v in value.split(",") if v.strip()]
        bad = [v for v in laws if v not in LAWS]
        if bad:
            raise ConfigError(f"unknown law {bad[0]!r}")
        cfg.laws = laws
    else:
        setattr(cfg, key, value)


def default_threads() -> int:
    env = os.environ.get("FSL_THREADS")
    if env:
        return _number(env, int, "FSL_THREADS")
    return os.cpu_count() or 1


def parse_config(argv=None) -> RunConfig:
    """Merge an optional key=value file with command-line flags and validate."""
    args = build_parser().parse_args(argv)
    cmd = args.command
    cfg = RunConfig(cmd, threads=default_threads())
    merged: dict[str, str] = {}
    if args.config:
        for key, value in read_config_file(args.config).items():
            if key == "alpha":
                key = "alphas"
            if key not in _FIELDS[cmd]:
                raise ConfigError(f"unknown key {key!r} for command {cmd!r}")
            merged[key] = value
    for key in _FIELDS[cmd]:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    for key, value in merged.items():
        _coerce(cfg, key, value)
    missing = [k for k in _REQUIRED[cmd] if k not in merged]
    if missing:
        raise ConfigError(f"missing required field {missing[0]!r} for {cmd}")
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if cfg.domain is not None:
        try:
            dom.parse_domain(cfg.domain)
        except (dom.DomainError, OSError) as exc:
            raise ConfigError(f"bad domain {cfg.domain!r}: {exc}") from None
    for a in cfg.alphas:
        check_alpha(a)
    if any(not h > 0 for h in cfg.h):
        raise ConfigError("grid spacings must be positive")
    if cfg.command == "sweep" and len(cfg.h) < 3:
        raise ConfigError("sweep needs at least 3 spacings in --h")
    if cfg.command in ("assemble", "simulate") and len(cfg.alphas) != 1:
        raise ConfigError(f"{cfg.command} takes exactly one alpha")
    if cfg.command == "assemble" and len(cfg.h) != 1:
        raise ConfigError("assemble takes exactly one h")
    if cfg.k < 1:
        raise ConfigError("k must be positive")
    if cfg.threads < 1:
        raise ConfigError("threads must be positive")
    if cfg.command == "simulate":
        if cfg.paths < 1:
            raise ConfigError("paths must be positive")
        if cfg.dt is not None and not cfg.dt > 0:
            raise ConfigError("dt must be positive")
        if not cfg.tmax > 0 or cfg.tpoints < 2:
            raise ConfigError("tmax must be positive and tpoints at least 2")
    if cfg.d not in (1, 2):
        raise ConfigError("d must be 1 or 2")
    if not cfg.tol >= 0:
        raise ConfigError("tol must be nonnegative")


# ---------------------------------------------------------------- running


@contextmanager
def atomic_output(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(cfg: RunConfig, outputs: list[str], wall: float):
    if not outputs:
        return
    config = asdict(cfg)
    config.pop("threads")  # results do not depend on it
    manifest = {
        "version": __version__,
        "config": config,
        "wall_time_s": round(wall, 3),
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
    }
    target = Path(outputs[0]).parent / "manifest.json"
    with atomic_output(target) as tmp:
        Path(tmp).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _run_assemble(cfg):
    domain = dom.parse_domain(cfg.domain)
    op = assemble(dom.rasterize(domain, cfg.h[0]), cfg.alphas[0])
    outputs = []
    with atomic_output(cfg.out) as tmp:
        write_operator(tmp, op)
    outputs.append(cfg.out)
    if cfg.spectrum:
        spec = eigendecompose(op, min(cfg.k, op.n), method="auto")
        with atomic_output(cfg.spectrum) as tmp:
            write_spectrum_csv(tmp, spec)
        outputs.append(cfg.spectrum)
    log.info("assembled %d cells at h=%g", op.n, op.h)
    return 0, outputs


def _run_sweep(cfg):
    domain = dom.parse_domain(cfg.domain)
    sweep = alpha_sweep(domain, cfg.alphas, cfg.k, cfg.h, threads=cfg.threads)
    with atomic_output(cfg.out) as tmp:
        write_sweep_csv(tmp, sweep)
    return 0, [cfg.out]


def _run_verify(cfg):
    sweep = read_sweep_csv(cfg.sweep)
    reports = verify_sweep(sweep, cfg.laws, cfg.tol)
    lines = [line for rep in reports for line in rep.jsonl()]
    for rep in reports:
        print(rep.summary(), file=sys.stderr)
    outputs = []
    if cfg.out:
        with atomic_output(cfg.out) as tmp:
            with open(tmp, "w", newline="") as fh:
                if cfg.format == "csv":
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["law", "instance", "margin", "pass"])
                    for rep in reports:
                        for inst in rep.instances:
                            prov = {k: v for k, v in inst.items() if k not in ("margin", "pass")}
                            w.writerow([rep.law, json.dumps(prov), f"{inst['margin']:.17g}", int(inst["pass"])])
                else:
                    fh.writelines(line + "\n" for line in lines)
        outputs.append(cfg.out)
    else:
        sys.stdout.writelines(line + "\n" for line in lines)
    return (0 if all(r.passed for r in reports) else 1), outputs


def _run_simulate(cfg):
    domain = dom.parse_domain(cfg.domain)
    alpha = cfg.alphas[0]
    dt = cfg.dt if cfg.dt is not None else 1e-3 * dom.inner_radius(domain) ** alpha
    t_grid = np.linspace(0.0, cfg.tmax, cfg.tpoints)
    est = survival_curve(domain, cfg.x, alpha, cfg.paths, t_grid, dt, cfg.seed, threads=cfg.threads)
    with atomic_output(cfg.out) as tmp:
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "p_hat", "se", "alive", "censored"])
            for row in zip(est.t, est.p_hat, est.se, est.alive, est.censored):
                w.writerow([f"{row[0]:.17g}", f"{row[1]:.17g}", f"{row[2]:.17g}", int(row[3]), int(row[4])])
    return 0, [cfg.out]


def _run_symbol(cfg):
    rows = []
    for alpha in cfg.alphas:
        for h in cfg.h:
            for xi in cfg.xi:
                rows.append((alpha, h, xi, symbol_error(alpha, h, xi, cfg.truncation, d=cfg.d)))
    if cfg.out:
        with atomic_output(cfg.out) as tmp:
            with open(tmp, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["alpha", "h", "xi", "d", "truncation", "error"])
                for a, h, xi, err in rows:
                    w.writerow([f"{a:.17g}", f"{h:.17g}", f"{xi:.17g}", cfg.d, f"{cfg.truncation:.17g}", f"{err:.17g}"])
        return 0, [cfg.out]
    for a, h, xi, err in rows:
        print(f"alpha={a:g} h={h:g} xi={xi:g} error={err:.3e}")
    return 0, []


_RUNNERS = {
    "assemble": _run_assemble,
    "sweep": _run_sweep,
    "verify": _run_verify,
    "simulate": _run_simulate,
    "symbol-check": _run_symbol,
}


def run(cfg: RunConfig) -> int:
    start = time.perf_counter()
    try:
        status, outputs = _RUNNERS[cfg.command](cfg)
    except (ArithmeticError, ValueError, OSError) as exc:
        log.error("%s failed: %s", cfg.command, exc)
        return 2
    _write_manifest(cfg, outputs, time.perf_counter() - start)
    return status


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(argv)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"fsl: error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
