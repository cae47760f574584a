"""lyocert command line: gen, train, certify, validate, bound, run, sweep.

Every command reads an optional JSON config (--config), takes --seed and
--out, writes run_manifest.json into the output directory first and then
its own outputs, all via atomic renames.

Exit codes: 0 ok, 2 config/validation error, 3 certification never
converged, 4 safety filter infeasible during a run.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import chernoff_bound
from .cbf import SafetySpec
from .certify import (
    BisectionConfig,
    bisect_lambda,
    candidate_to_dict,
    certificate_from_dict,
    certificate_to_dict,
    validate_certificate,
    validate_per_trajectory,
)
from .dataio import TrajectoryFormatError, atomic_write_text, load_dataset, save_dataset, write_json
from .nn import TrainConfig, train
from .sim import PlantConfig, generate_training_data, linear_system_data, run_scenario, sweep_table

log = logging.getLogger("lyocert")

EXIT_OK, EXIT_CONFIG, EXIT_NEVER_CONVERGED, EXIT_INFEASIBLE = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    seed: int
    output_dir: str
    tool_version: str = __version__

    def write(self) -> Path:
        path = Path(self.output_dir) / "run_manifest.json"
        write_json(path, asdict(self))
        return path


# -- config helpers -------------------------------------------------------------

def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _pick(cfg: dict, key: str, cli_value, default=None):
    """CLI flag beats config entry beats default."""
    if cli_value is not None:
        return cli_value
    return cfg.get(key, default)


def _dataclass_from(cls, d: dict | None, **override):
    d = dict(d or {})
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    d.update({k: v for k, v in override.items() if v is not None})
    return cls(**d)


def _dataset_path(p: Path) -> Path:
    return p / "manifest.json" if p.is_dir() else p


def _load_cert(path: Path):
    with open(path, encoding="utf-8") as fh:
        return certificate_from_dict(json.load(fh))


def _seed(args, cfg: dict) -> int:
    return int(args.seed if args.seed is not None else cfg.get("seed", 0))


# -- commands -------------------------------------------------------------------

def cmd_gen(args, cfg: dict, out: Path, seed: int) -> int:
    n = int(_pick(cfg, "n", args.n, 99))
    if n < 1:
        raise ConfigError("n must be ≥ 1")
    source = _pick(cfg, "source", args.source, "plant")
    role = cfg.get("role", "train")
    if source == "plant":
        plant = _dataclass_from(PlantConfig, cfg.get("plant"), seed=seed)
        ds = generate_training_data(
            plant, n, duration=float(cfg.get("duration", 2.0)), ref_velocity=cfg.get("ref_velocity", 1.5), role=role
        )
    elif source == "linear":
        A = np.asarray(cfg.get("A", [[0.0, 1.0], [-1.0, -2.0]]), dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ConfigError("A must be a square matrix")
        ds = linear_system_data(
            A,
            n,
            duration=float(cfg.get("duration", 5.0)),
            dt=float(cfg.get("dt", 0.01)),
            seed=seed,
            radius=float(cfg.get("radius", 1.0)),
            role=role,
        )
    else:
        raise ConfigError(f"unknown source {source!r} (expected 'plant' or 'linear')")
    manifest = save_dataset(ds, out)
    print(f"wrote {len(ds)} trajectories ({ds.n_samples} samples) to {manifest}")
    return EXIT_OK


def _train_cfg(args, cfg: dict, seed: int, **override) -> TrainConfig:
    return _dataclass_from(TrainConfig, cfg.get("train"), seed=seed, **override)


def _write_loss_history(path: Path, history) -> None:
    lines = ["epoch,loss"] + [f"{i},{v:.17g}" for i, v in enumerate(history)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def cmd_train(args, cfg: dict, out: Path, seed: int) -> int:
    ds = load_dataset(_dataset_path(Path(_pick(cfg, "data", args.data))))
    tcfg = _train_cfg(args, cfg, seed, lam=args.lam)
    res = train(ds, tcfg)
    doc = candidate_to_dict(res.candidate, tcfg.lam, tcfg.gamma, None, tcfg.seed)
    doc.update(converged=res.converged, final_loss=res.final_loss, epochs_used=res.epochs_used)
    write_json(out / "candidate.json", doc)
    _write_loss_history(out / "loss_history.csv", res.loss_history)
    print(f"converged={res.converged} final_loss={res.final_loss:.6g} epochs={res.epochs_used}")
    return EXIT_OK


def cmd_certify(args, cfg: dict, out: Path, seed: int) -> int:
    ds = load_dataset(_dataset_path(Path(_pick(cfg, "data", args.data))))
    b = dict(cfg.get("bisection") or {})
    for key, val in (("lambda_min", args.lambda_min), ("lambda_max", args.lambda_max), ("resolution", args.resolution)):
        if val is not None:
            b[key] = val
    bcfg = _dataclass_from(BisectionConfig, b, train_cfg=_train_cfg(args, cfg, seed))
    cert = bisect_lambda(ds, bcfg)
    write_json(out / "certificate.json", certificate_to_dict(cert))
    _write_loss_history(out / "loss_history.csv", cert.loss_history)
    hist = " ".join(f"{lam:g}:{'ok' if ok else 'fail'}" for lam, ok in cert.history)
    print(f"lambda_best={cert.lambda_best:.17g} epsilon={cert.epsilon:.17g} history=[{hist}]")
    if cert.never_converged:
        print("certification failed: no tried lambda converged", file=sys.stderr)
        return EXIT_NEVER_CONVERGED
    return EXIT_OK


def cmd_validate(args, cfg: dict, out: Path, seed: int) -> int:
    cert = _load_cert(Path(_pick(cfg, "certificate", args.cert)))
    ds = load_dataset(_dataset_path(Path(_pick(cfg, "data", args.data))))
    v, m = validate_certificate(cert, ds)
    vt, mt = validate_per_trajectory(cert, ds)
    report = {"violations": v, "total": m, "trajectory_violations": vt, "trajectories": mt}
    write_json(out / "validation.json", report)
    print(f"violations={v}/{m} samples, {vt}/{mt} trajectories")
    return EXIT_OK


def cmd_bound(args, cfg: dict, out: Path, seed: int) -> int:
    delta = float(_pick(cfg, "delta", args.delta, 0.01))
    if not 0.0 < delta <= 1.0:
        raise ConfigError(f"delta must be in (0, 1], got {delta}")
    c_hat = _pick(cfg, "violations", args.violations)
    m = _pick(cfg, "samples", args.samples)
    if c_hat is None or m is None:
        cert_path = _pick(cfg, "certificate", args.cert)
        data = _pick(cfg, "data", args.data)
        if cert_path is None or data is None:
            raise ConfigError("bound needs --cert and --data, or --violations and --samples")
        c_hat, m = validate_certificate(_load_cert(Path(cert_path)), load_dataset(_dataset_path(Path(data))))
    bound = chernoff_bound(int(c_hat), int(m), delta)
    report = bound.to_dict()
    report["empirical_rate"] = bound.empirical_rate
    report["confidence_term"] = bound.confidence_term
    write_json(out / "bound.json", report)
    print(f"c_hat={bound.c_hat} m={bound.m} delta={bound.delta:g} c_bar={bound.c_bar:.6g}")
    return EXIT_OK


def _scenario_inputs(args, cfg: dict, seed: int):
    plant = _dataclass_from(PlantConfig, cfg.get("plant"), seed=seed)
    cert = None
    cert_path = _pick(cfg, "certificate", args.cert)
    if cert_path is not None:
        cert = _load_cert(Path(cert_path))
    if "waypoints" not in cfg:
        raise ConfigError("scenario config needs 'waypoints'")
    kw = {k: cfg[k] for k in ("duration", "segment_time", "q0") if k in cfg}
    return plant, cert, cfg["waypoints"], float(cfg.get("k_p", 1.0)), kw


def _spec_from(cfg: dict, cert) -> SafetySpec:
    d = dict(cfg.get("spec") or {})
    if d.get("epsilon") == "cert":
        if cert is None:
            raise ConfigError("epsilon 'cert' needs a certificate")
        d["epsilon"] = cert.epsilon
    if "alpha" not in d:
        raise ConfigError("spec needs 'alpha'")
    return SafetySpec.from_dict(d)


def cmd_run(args, cfg: dict, out: Path, seed: int) -> int:
    plant, cert, waypoints, k_p, kw = _scenario_inputs(args, cfg, seed)
    spec = _spec_from(cfg, cert)
    use_filter = not args.no_filter and bool(cfg.get("use_filter", True))
    res = run_scenario(plant, spec, waypoints, k_p, cert=cert, use_filter=use_filter, **kw)
    atomic_write_text(out / "scenario.csv", res.to_csv())
    write_json(out / "summary.json", res.summary())
    print(f"min_h={res.min_h:.6g} violated={res.violated} filter_activity={res.filter_activity:.3f}")
    if res.halted:
        t_ev = next(t for t, kind in res.events if kind == "filter_infeasible")
        print(f"safety filter infeasible at t={t_ev:.6g}; halted", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_sweep(args, cfg: dict, out: Path, seed: int) -> int:
    plant, cert, waypoints, k_p, kw = _scenario_inputs(args, cfg, seed)
    spec_cfg = dict(cfg.get("spec") or {})
    spec_cfg.setdefault("alpha", 1.0)
    spec_cfg["epsilon"] = 0.0
    template = SafetySpec.from_dict(spec_cfg)
    alphas = cfg.get("alphas", [0.5, 1, 2, 4, 10, 20, 30, 50])
    epsilons = []
    for e in cfg.get("epsilons", ["cert", 0.04, 0.06, 0.07, 0.08]):
        if e == "cert":
            if cert is None:
                raise ConfigError("epsilon 'cert' needs a certificate")
            e = cert.epsilon
        epsilons.append(float(e))
    epsilons = sorted(set(epsilons))
    res = sweep_table(plant, template, alphas, epsilons, waypoints, k_p, cert=cert, **kw)
    atomic_write_text(out / "sweep.csv", res.to_csv())
    verdicts = res.verdicts()
    if cert is not None:
        below = [row for a, row in zip(res.alphas, res.min_h) if a < cert.lambda_best]
        tol = float(np.nanmax(res.tolerance))
        ok = all(np.all(r >= -tol) for r in below)
        verdicts.append(f"alpha_below_lambda_safe: {'PASS' if ok else 'FAIL'}")
    atomic_write_text(out / "sweep_verdicts.txt", "\n".join(verdicts) + "\n")
    print(res.to_csv(), end="")
    for line in verdicts:
        print(line)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "certify": cmd_certify,
    "validate": cmd_validate,
    "bound": cmd_bound,
    "run": cmd_run,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="seed (overrides the config)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lyocert", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate trajectory data")
    g.add_argument("--n", type=int, help="number of trajectories")
    g.add_argument("--source", choices=["plant", "linear"])

    t = sub.add_parser("train", parents=[common], help="train one candidate at a fixed lambda")
    t.add_argument("--data", help="dataset manifest or directory")
    t.add_argument("--lam", type=float)

    c = sub.add_parser("certify", parents=[common], help="bisection search for the decay rate")
    c.add_argument("--data")
    c.add_argument("--lambda-min", type=float)
    c.add_argument("--lambda-max", type=float)
    c.add_argument("--resolution", type=float)

    v = sub.add_parser("validate", parents=[common], help="count certificate violations on data")
    v.add_argument("--cert")
    v.add_argument("--data")

    b = sub.add_parser("bound", parents=[common], help="Chernoff bound on the violation rate")
    b.add_argument("--cert")
    b.add_argument("--data")
    b.add_argument("--delta", type=float)
    b.add_argument("--violations", type=int)
    b.add_argument("--samples", type=int)

    r = sub.add_parser("run", parents=[common], help="closed-loop scenario with the safety filter")
    r.add_argument("--cert")
    r.add_argument("--no-filter", action="store_true")

    s = sub.add_parser("sweep", parents=[common], help="min_h over an (alpha, epsilon) grid")
    s.add_argument("--cert")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = _load_config(args.config)
        seed = _seed(args, cfg)
        out.mkdir(parents=True, exist_ok=True)
        RunManifest(args.command, args.config, seed, str(out)).write()
        return COMMANDS[args.command](args, cfg, out, seed)
    except (ConfigError, TrajectoryFormatError, ValueError, KeyError, TypeError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
