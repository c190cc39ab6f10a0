"""Command-line front end: ``selftest-lab simulate|certify|sweep|show-report``.

Exit codes: 0 success, 2 configuration error, 3 premise violation,
4 numerical degeneracy (vanishing junk vector).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .extraction import PremiseViolation, build_bundle
from .games import GameKind, GameSpec, GuardrailError, chsh_value, magic_square_lhs, tilted_value, win_probability
from .isometry import SCHEMA_VERSION, DegenerateJunkError, certify
from .strategies import NoiseKind, NoiseModel, Strategy, correlation_table, ideal_strategy, load_strategy, perturb
from .sweep import CSV_COLUMNS, ordered_fraction, run_sweep, sweep_grid
from .verify import scaling_fit

EXIT_OK, EXIT_CONFIG, EXIT_PREMISE, EXIT_DEGENERATE = 0, 2, 3, 4
CSV_VERSION = 1
JOBS_ENV = "SELFTEST_LAB_JOBS"
FORMATS = ("json", "csv")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    epsilons: tuple[float, ...]
    ns: tuple[int, ...]


@dataclass(frozen=True)
class RunConfig:
    game: GameSpec
    noise: NoiseModel = field(default_factory=NoiseModel)
    seeds: tuple[int, ...] = (0,)
    sweep: SweepConfig | None = None
    output_dir: Path = Path("out")
    formats: tuple[str, ...] = FORMATS
    epsilon: float | None = None
    strategy_path: Path | None = None
    # tilt angles as configured, before fitting them to game.copies
    thetas: tuple[float, ...] = ()

    def spec_for(self, n: int) -> GameSpec:
        """The configured game at ``n`` copies; one tilt angle is broadcast to all copies."""
        thetas = self.thetas or self.game.thetas
        if self.game.kind is GameKind.TILTED:
            thetas = thetas * n if len(thetas) == 1 else thetas[:n]
            if len(thetas) != n:
                raise ConfigError(f"game.thetas: need 1 or at least {n} angles")
        spec = GameSpec(self.game.kind, n, thetas)
        spec.check_guardrail()
        return spec


# --- config parsing ---------------------------------------------------------------

def _require(cond: bool, where: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{where}: {msg}")


def _parse_game(data, thetas_override=None, n_override=None, kind_override=None) -> tuple[str, int, tuple]:
    _require(isinstance(data, dict), "game", "must be an object")
    kind = kind_override or data.get("kind", "chsh")
    try:
        kind = GameKind(kind).value
    except ValueError:
        raise ConfigError(f"game.kind: unknown game {kind!r} (expected one of {[k.value for k in GameKind]})") from None
    n = n_override if n_override is not None else data.get("copies", 1)
    _require(isinstance(n, int) and not isinstance(n, bool) and n >= 1, "game.copies", f"must be a positive integer, got {n!r}")
    thetas = thetas_override if thetas_override is not None else data.get("thetas", [])
    _require(isinstance(thetas, list) and all(isinstance(t, (int, float)) for t in thetas), "game.thetas", "must be a list of numbers")
    if kind == GameKind.TILTED.value:
        _require(len(thetas) >= 1, "game.thetas", "tilted games need at least one angle")
        for t in thetas:
            _require(0 < t <= math.pi / 4 + 1e-15, "game.thetas", f"angle {t} outside (0, pi/4]")
    else:
        thetas = []
    return kind, n, tuple(float(t) for t in thetas)


def _parse_noise_flag(text: str) -> dict:
    kind, _, mag = text.partition(":")
    out = {"kind": kind}
    if mag:
        try:
            out["magnitude"] = float(mag)
        except ValueError:
            raise ConfigError(f"--noise: magnitude {mag!r} is not a number") from None
    return out


def load_config(path: str | None, args: argparse.Namespace | None = None) -> RunConfig:
    """Read the JSON config (if any) and apply command-line overrides."""
    data: dict = {}
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        _require(isinstance(data, dict), path, "top level must be a JSON object")
    get = (lambda name: getattr(args, name, None)) if args is not None else (lambda name: None)

    known = {"game", "noise", "seeds", "sweep", "output", "epsilon", "strategy"}
    unknown = sorted(set(data) - known)
    _require(not unknown, "config", f"unknown keys {unknown}")

    kind, n, thetas = _parse_game(data.get("game", {}), get("theta"), get("n"), get("game"))
    thetas_raw = thetas

    _require(isinstance(data.get("noise", {}), dict), "noise", "must be an object")
    noise_data = dict(data.get("noise", {}))
    if get("noise"):
        noise_data.update(_parse_noise_flag(get("noise")))
    unknown = sorted(set(noise_data) - {"kind", "magnitude"})
    _require(not unknown, "noise", f"unknown keys {unknown}")
    try:
        noise_kind = NoiseKind(noise_data.get("kind", NoiseKind.ANGLE_JITTER.value))
    except ValueError:
        raise ConfigError(f"noise.kind: unknown noise model {noise_data.get('kind')!r}") from None
    magnitude = noise_data.get("magnitude", 0.0)
    _require(isinstance(magnitude, (int, float)) and magnitude >= 0, "noise.magnitude", "must be a non-negative number")

    seeds = [get("seed")] if get("seed") is not None else data.get("seeds", [0])
    _require(isinstance(seeds, list) and seeds, "seeds", "must be a non-empty list of integers")
    _require(all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in seeds), "seeds", "must be non-negative integers")

    sweep = None
    if "sweep" in data:
        sw = data["sweep"]
        _require(isinstance(sw, dict), "sweep", "must be an object")
        eps = sw.get("epsilons")
        ns = sw.get("ns")
        _require(isinstance(eps, list) and eps and all(isinstance(e, (int, float)) and e > 0 for e in eps), "sweep.epsilons", "must be a non-empty list of positive numbers")
        _require(isinstance(ns, list) and ns and all(isinstance(k, int) and k >= 1 for k in ns), "sweep.ns", "must be a non-empty list of positive integers")
        sweep = SweepConfig(tuple(float(e) for e in eps), tuple(int(k) for k in ns))

    out = data.get("output", {})
    _require(isinstance(out, dict), "output", "must be an object")
    out_dir = get("out") or out.get("dir", "out")
    formats = out.get("formats", list(FORMATS))
    _require(isinstance(formats, list) and formats and set(formats) <= set(FORMATS), "output.formats", f"must be a non-empty subset of {list(FORMATS)}")

    epsilon = data.get("epsilon", None) if get("epsilon") is None else get("epsilon")
    _require(epsilon is None or (isinstance(epsilon, (int, float)) and epsilon >= 0), "epsilon", "must be a non-negative number")

    strategy_path = get("strategy") or data.get("strategy")
    _require(strategy_path is None or isinstance(strategy_path, str), "strategy", "must be a path string")

    try:
        if len(thetas) == 1:
            thetas = thetas * n
        elif len(thetas) > n:
            thetas = thetas[:n]
        game = GameSpec(kind, n, thetas)
    except ValueError as exc:
        raise ConfigError(f"game: {exc}") from None
    config = RunConfig(
        game=game,
        noise=NoiseModel(noise_kind, float(magnitude), 0),
        seeds=tuple(seeds),
        sweep=sweep,
        output_dir=Path(out_dir),
        formats=tuple(dict.fromkeys(formats)),
        epsilon=None if epsilon is None else float(epsilon),
        strategy_path=Path(strategy_path) if strategy_path else None,
        thetas=thetas_raw,
    )
    try:
        game.check_guardrail()
        if sweep is not None:
            for k in sweep.ns:
                config.spec_for(k)
    except GuardrailError as exc:
        raise ConfigError(f"game.copies: {exc}") from None
    return config


# --- output helpers -----------------------------------------------------------------

def atomic_write_text(path: Path, text: str) -> None:
    """Write via a temporary sibling and rename, so readers never see partial files."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, data: dict) -> None:
    atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def csv_text(kind: str, columns: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# selftest-lab {kind} csv v{CSV_VERSION}\n")
    writer = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


# --- pipeline -------------------------------------------------------------------------

def _strategy_for(config: RunConfig, seed: int) -> Strategy:
    if config.strategy_path is not None:
        try:
            base = load_strategy(config.strategy_path)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"strategy: cannot load {config.strategy_path} ({exc})") from None
    else:
        base = ideal_strategy(config.game)
    return perturb(base, replace(config.noise, seed=seed))


def _copy_summary(s: Strategy) -> tuple[list, list]:
    spec = s.spec
    t = correlation_table(s)
    values, wins = [], []
    for i in range(spec.copies):
        if spec.kind is GameKind.MAGIC_SQUARE:
            values.append(magic_square_lhs(t, i).tolist())
            wins.append(win_probability(t, i))
        elif spec.kind is GameKind.TILTED:
            values.append(tilted_value(t, i, spec.tilt(i)))
            wins.append(None)
        else:
            values.append(chsh_value(t, i))
            wins.append(win_probability(t, i))
    return values, wins


def cmd_simulate(config: RunConfig) -> int:
    runs, rows = [], []
    game = config.game.to_json()
    for seed in config.seeds:
        s = _strategy_for(config, seed)
        game = s.spec.to_json()
        values, wins = _copy_summary(s)
        runs.append({"seed": seed, "values": values, "win_probabilities": wins})
        for i, (v, w) in enumerate(zip(values, wins)):
            scalar = sum(v) / len(v) if isinstance(v, list) else v
            rows.append({"game": s.spec.kind.value, "n": s.spec.copies, "seed": seed, "copy": i,
                         "value": scalar, "win_probability": "" if w is None else w})
    out = config.output_dir
    if "json" in config.formats:
        write_json(out / "simulate.json", {
            "schema_version": SCHEMA_VERSION,
            "game": game,
            "noise": {"kind": config.noise.kind.value, "magnitude": config.noise.magnitude},
            "runs": runs,
        })
    if "csv" in config.formats:
        atomic_write_text(out / "simulate.csv", csv_text("simulate", ("game", "n", "seed", "copy", "value", "win_probability"), rows))
    print(f"simulated {len(config.seeds)} seed(s); output in {out}")
    return EXIT_OK


def cmd_certify(config: RunConfig) -> int:
    code = EXIT_OK
    out = config.output_dir
    for seed in config.seeds:
        s = _strategy_for(config, seed)
        try:
            report = certify(s, build_bundle(s, epsilon=config.epsilon))
        except PremiseViolation as exc:
            code = max(code, EXIT_PREMISE)
            write_json(out / f"error_seed{seed}.json", {"schema_version": SCHEMA_VERSION, "seed": seed, "error": "premise_violation", "message": str(exc)})
            print(f"seed {seed}: premise violation: {exc}", file=sys.stderr)
            continue
        except DegenerateJunkError as exc:
            code = max(code, EXIT_DEGENERATE)
            write_json(out / f"error_seed{seed}.json", {"schema_version": SCHEMA_VERSION, "seed": seed, "error": "degenerate_junk", "message": str(exc)})
            print(f"seed {seed}: degenerate extraction: {exc}", file=sys.stderr)
            continue
        report.metadata.update({"seed": seed, "noise": replace(config.noise, seed=seed).to_json()})
        write_json(out / f"report_seed{seed}.json", report.to_json())
        print(f"seed {seed}: state_distance={report.state_distance:.3e} max_op_distance={report.max_op_distance:.3e}")
    return code


def cmd_sweep(config: RunConfig, jobs: int) -> int:
    if config.sweep is None:
        raise ConfigError("sweep: block missing; add {\"sweep\": {\"epsilons\": [...], \"ns\": [...]}}")
    points = sweep_grid(config.spec_for, config.sweep.ns, config.sweep.epsilons, config.seeds, config.noise.kind)
    try:
        results = run_sweep(points, jobs=jobs)
    except PremiseViolation as exc:
        print(f"premise violation: {exc}", file=sys.stderr)
        return EXIT_PREMISE
    except DegenerateJunkError as exc:
        print(f"degenerate extraction: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    rows = [r for r, _ in results]
    out = config.output_dir
    if "csv" in config.formats:
        atomic_write_text(out / "sweep.csv", csv_text("sweep", CSV_COLUMNS, rows))
    if "json" in config.formats:
        ref_p_n = 2.0 if config.game.kind is GameKind.TILTED else 1.5
        fits = {}
        for name, eps_key in (("vs_per_copy_deficit", "epsilon_measured"), ("vs_operator_epsilon", "max_hypothesis_norm")):
            try:
                fit = scaling_fit([(r["n"], r[eps_key], r["state_distance"]) for r in rows], reference_p_n=ref_p_n)
                fits[name] = fit.to_json()
            except ValueError as exc:
                fits[name] = {"error": str(exc)}
        write_json(out / "scaling_fit.json", {
            "schema_version": SCHEMA_VERSION,
            "game": config.game.kind.value,
            "noise_model": config.noise.kind.value,
            "rows": len(rows),
            "ordered_fraction": ordered_fraction(rows),
            "fits": fits,
        })
    print(f"sweep finished: {len(rows)} rows; output in {out}")
    return EXIT_OK


def cmd_show_report(path: str) -> int:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: cannot read report ({exc})") from None
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema version {data.get('schema_version')!r}")
    if "error" in data:
        print(f"error: {data['error']}: {data.get('message', '')}")
        return EXIT_OK
    game = data["game"]
    ext = data.get("extraction", {})
    repairs = data.get("repairs", {})
    print(f"game              {game['kind']} x{game['copies']}")
    print(f"state distance    {data['state_distance']:.3e}")
    print(f"max op distance   {data['max_op_distance']:.3e}")
    print(f"max hypothesis    {data['max_hypothesis_norm']:.3e}")
    print(f"max lemma resid.  {data['max_lemma_residual']:.3e}")
    print(f"epsilon           {ext.get('epsilon', float('nan')):.3e}")
    print(f"good set sizes    {ext.get('good_set_sizes')} of {ext.get('context_count')}")
    print(f"chosen contexts   {ext.get('chosen_contexts')}")
    print(f"repairs applied   {sum(1 for r in repairs.values() if r.get('applied'))} of {len(repairs)}")
    print(f"balancing         {data.get('balancing')}")
    return EXIT_OK


# --- entry point ----------------------------------------------------------------------

def _default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV, "1")
    try:
        jobs = int(raw)
    except ValueError:
        raise ConfigError(f"{JOBS_ENV}: {raw!r} is not an integer") from None
    if jobs < 1:
        raise ConfigError(f"{JOBS_ENV}: must be >= 1")
    return jobs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selftest-lab", description="Parallel self-testing simulations and certificates.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "per-copy game values and winning probabilities"),
        ("certify", "extraction + SWAP isometry certificate per seed"),
        ("sweep", "certify over an (n, epsilon, seed) grid and fit the scaling"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--game", help="override game.kind (chsh, tilted, magic_square)")
        p.add_argument("--n", type=int, help="override game.copies")
        p.add_argument("--theta", type=float, action="append", help="tilt angle; repeat per copy or give once to broadcast")
        p.add_argument("--noise", help="override noise as KIND or KIND:MAGNITUDE")
        p.add_argument("--seed", type=int, help="run a single seed")
        p.add_argument("--out", help="override output.dir")
        if name == "certify":
            p.add_argument("--epsilon", type=float, help="per-copy premise epsilon (default: measured deficit)")
            p.add_argument("--strategy", help="saved strategy bundle (path without suffix) instead of the ideal strategy")
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=None, help=f"parallel grid points (default ${JOBS_ENV} or 1)")
    p = sub.add_parser("show-report", help="print a certification report summary")
    p.add_argument("path")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "show-report":
            return cmd_show_report(args.path)
        config = load_config(args.config, args)
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "certify":
            return cmd_certify(config)
        jobs = args.jobs if args.jobs is not None else _default_jobs()
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        return cmd_sweep(config, jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
