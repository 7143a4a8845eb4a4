"""Command-line runner: ``optomech-sim <scenario> --config <path> ...``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 a scenario check failed.  Every invocation, successful or not, leaves a
``manifest.json`` in the output directory listing the config hash, seed,
version, wall time and a checksum for every emitted file.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
import traceback
from importlib import resources
from pathlib import Path

import jsonschema

from . import __version__, chain, response, simulate, spectra, steady_state
from .config import ConfigFile, load
from .model import ConfigError, Violation
from .scenarios import SCENARIOS, ScenarioResult

log = logging.getLogger("optomech")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ASSERT = 0, 2, 3, 4
STATUS = {EXIT_OK: "ok", EXIT_CONFIG: "config_error", EXIT_NUMERIC: "numeric_failure",
          EXIT_ASSERT: "assertion_failed"}

CONFIG_ERRORS = (
    ConfigError, simulate.PlanError, steady_state.AmbiguousBranchError,
    chain.UnreachableGainError, spectra.BandOverlapError, spectra.SpanError,
)
NUMERIC_ERRORS = (
    steady_state.NoConvergenceError, response.SingularResponseError, response.NoThresholdError,
    simulate.BlowUpError, simulate.FitQualityError, spectra.ToneNotFoundError,
    spectra.InsufficientDataError, ArithmeticError, FloatingPointError,
)


def manifest_schema() -> dict:
    return json.loads(resources.files("optomech").joinpath("data/manifest.schema.json").read_text())


def config_hash(cf: ConfigFile) -> str:
    canonical = "".join(f"{k}={v}\n" for k, v in sorted(cf.entries.items()))
    return hashlib.sha256(canonical.encode()).hexdigest()


def file_record(path: Path, root: Path) -> dict:
    data = Path(path).read_bytes()
    return {"path": str(Path(path).relative_to(root)), "sha256": hashlib.sha256(data).hexdigest(),
            "bytes": len(data)}


def emit_manifest(out: Path, *, scenario: str, cf: ConfigFile | None, config_source: str,
                  overrides: list[str], seed: int, workers: int, wall: float, code: int,
                  result: ScenarioResult | None, error: dict | None) -> Path:
    files = [] if result is None else sorted(set(result.files))
    if error is not None:
        files.append(out / "error.json")
    manifest = {
        "tool": "optomech-sim",
        "version": __version__,
        "scenario": scenario,
        "status": STATUS[code],
        "exit_code": code,
        "config_hash": config_hash(cf) if cf is not None else hashlib.sha256(b"").hexdigest(),
        "config_source": config_source,
        "overrides": list(overrides),
        "seed": int(seed),
        "workers": int(workers),
        "wall_time_s": float(wall),
        "partial": code in (EXIT_CONFIG, EXIT_NUMERIC),
        "files": [file_record(p, out) for p in files if Path(p).exists()],
        "checks": [] if result is None else [
            {"name": c.name, "passed": bool(c.passed), "detail": c.detail} for c in result.checks
        ],
        "error": error,
    }
    jsonschema.validate(manifest, manifest_schema())
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="optomech-sim", description=__doc__.splitlines()[0])
    ap.add_argument("scenario", choices=sorted(SCENARIOS))
    ap.add_argument("--config", required=True, help="key = value configuration file")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override an existing config key (repeatable)")
    ap.add_argument("--seed", type=int, default=None, help="master seed (default: rng_seed in config)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--workers", type=int, default=1, help="concurrent sweep points")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    cf = None
    result = None
    error = None
    seed = args.seed if args.seed is not None else 0
    try:
        if args.workers < 1:
            raise ConfigError([Violation("--workers", ">= 1", args.workers)])
        cf = load(args.config, args.overrides)
        seed = args.seed if args.seed is not None else cf.system.rng_seed
        log.info("running %s on %s (seed %d)", args.scenario, args.config, seed)
        result = SCENARIOS[args.scenario](cf, out, seed, args.workers)
        code = EXIT_OK if result.passed else EXIT_ASSERT
        for c in result.checks:
            log.log(logging.INFO if c.passed else logging.ERROR, "%s %s %s",
                    "PASS" if c.passed else "FAIL", c.name, c.detail)
    except CONFIG_ERRORS as exc:
        code, error = EXIT_CONFIG, _error_record(exc)
    except FileNotFoundError as exc:
        code, error = EXIT_CONFIG, _error_record(exc)
    except NUMERIC_ERRORS as exc:
        code, error = EXIT_NUMERIC, _error_record(exc)
    if error is not None:
        (out / "error.json").write_text(json.dumps(error, indent=2) + "\n")
        print(f"optomech-sim: {error['type']}: {error['message']}", file=sys.stderr)
    emit_manifest(
        out, scenario=args.scenario, cf=cf, config_source=str(args.config),
        overrides=args.overrides, seed=seed, workers=args.workers,
        wall=time.perf_counter() - start, code=code, result=result, error=error,
    )
    return code


def _error_record(exc: BaseException) -> dict:
    rec = {"type": type(exc).__name__, "message": str(exc),
           "traceback": traceback.format_exception_only(type(exc), exc)[-1].strip()}
    if isinstance(exc, ConfigError):
        rec["violations"] = [
            {"field": v.field, "constraint": v.constraint, "value": repr(v.value)} for v in exc.violations
        ]
    return rec


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
