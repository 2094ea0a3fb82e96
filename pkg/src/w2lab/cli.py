"""Command-line front end.

Subcommands:

    train         fit a score network on a synthetic dataset, write history
    verify-bound  recompute the loss-based W2 bound for a finished run
    sweep-t       retrain across a list of T values, collect offset decay
    regularize    train the regularizer variants, collect loss/intercept
    perturb       train on clean vs perturbed data, check the five-term bound
    estimate-jsm  KDE estimate of the marginal score-matching loss of a run

Configuration is a flat JSON object; every key can be overridden by a flag
of the same name (underscores become dashes).  Exit codes: 0 ok, 2 bad
configuration, 3 divergence during training/sampling, 4 a verified bound
was violated.  Logs go to stderr; all artifacts are deterministic given the
seed, so rerunning a manifest reproduces every output byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import boundlab, estimators, schedule, scorenet, synthdata
from .errors import ConfigError, DivergenceError
from .training import TrainConfig, TrainHistory, draw_initial_points, run_training

log = logging.getLogger("w2lab")

EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_VIOLATION = 4

# Flat config schema: key -> (python type, default).  The TrainConfig
# dataclass is the source of truth for training defaults.
_TRAIN_DEFAULTS = {f.name: f.default for f in dataclasses.fields(TrainConfig)
                   if f.name != "dataset"}

CONFIG_SCHEMA: dict = {
    "dataset": (str, "gauss2d-4cluster"),
    "train_points": (int, 5000),
    "data_seed": (int, None),  # defaults to seed
    "noise": (float, 0.05),
    **{name: (type(default) if default is not None else float, default)
       for name, default in _TRAIN_DEFAULTS.items()},
}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def load_flat_config(path: str | None, overrides: dict) -> dict:
    flat = {k: v for k, (_, v) in CONFIG_SCHEMA.items()}
    if path is not None:
        try:
            with open(path) as f:
                user = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for key, value in user.items():
            if key not in CONFIG_SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            flat[key] = value
    for key, value in overrides.items():
        if value is not None:
            flat[key] = value
    if flat["data_seed"] is None:
        flat["data_seed"] = flat["seed"]
    return flat


def config_from_flat(flat: dict) -> TrainConfig:
    spec = synthdata.DatasetSpec(kind=flat["dataset"], n=int(flat["train_points"]),
                                 seed=int(flat["data_seed"]),
                                 noise=float(flat["noise"]))
    kwargs = {}
    for name, default in _TRAIN_DEFAULTS.items():
        value = flat[name]
        kwargs[name] = type(default)(value) if default is not None else value
    return TrainConfig(dataset=spec, **kwargs)


def content_hash(flat: dict) -> str:
    canon = json.dumps(flat, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: str, command: str, flat: dict, outputs: list,
                   started: str) -> str:
    manifest = {
        "command": command,
        "config": flat,
        "seeds": {"seed": flat["seed"], "data_seed": flat["data_seed"]},
        "content_hash": content_hash(flat),
        "started": started,
        "finished": _now(),
        "outputs": [{"path": os.path.basename(p), "sha256": _sha256_file(p),
                     "bytes": os.path.getsize(p)} for p in outputs],
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", newline="\n") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return path


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def cmd_train(args) -> int:
    flat = load_flat_config(args.config, _collect_overrides(args))
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    started = _now()
    cfg = config_from_flat(flat)
    net, history = run_training(cfg)
    log.info("trained %d epochs, final j_dsm=%.6g w2=%.6g",
             len(history.records), history.records[-1].j_dsm,
             history.records[-1].w2)
    hist_path = os.path.join(out, "history.csv")
    history.to_csv(hist_path)
    blob, meta = os.path.join(out, "net.bin"), os.path.join(out, "net.json")
    scorenet.save_network(net, blob, meta)
    sch_path = os.path.join(out, "schedule.csv")
    schedule.to_csv(schedule.build_sigmoid_schedule(cfg.T, cfg.beta1, cfg.betaT),
                    sch_path)
    write_manifest(out, "train", flat, [hist_path, blob, meta, sch_path], started)
    return 0


def _load_run(run_dir: str) -> tuple:
    manifest_path = os.path.join(run_dir, "manifest.json")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest in {run_dir}: {exc}") from exc
    flat = manifest["config"]
    cfg = config_from_flat(flat)
    try:
        net = scorenet.load_network(os.path.join(run_dir, "net.bin"),
                                    os.path.join(run_dir, "net.json"))
        history = TrainHistory.from_csv(os.path.join(run_dir, "history.csv"))
    except OSError as exc:
        raise ConfigError(f"incomplete run directory {run_dir}: {exc}") from exc
    return flat, cfg, net, history


def cmd_verify_bound(args) -> int:
    flat, cfg, net, history = _load_run(args.run_dir)
    out = args.out_dir or args.run_dir
    os.makedirs(out, exist_ok=True)
    started = _now()
    report = boundlab.build_report(net, cfg, history)
    sch = schedule.build_sigmoid_schedule(cfg.T, cfg.beta1, cfg.betaT)
    report_path = os.path.join(out, "report.json")
    report.to_json(report_path)
    loglog_path = os.path.join(out, "loglog.csv")
    boundlab.write_loglog_csv(loglog_path, history, report.intercept)
    write_manifest(out, "verify-bound", flat, [report_path, loglog_path], started)
    bad = boundlab.bound_violations(history.column("j_dsm"), history.column("w2"),
                                    sch, report.i_series, report.offset)
    if bad:
        log.error("bound violated at %d epoch(s): %s", len(bad),
                  [history.records[k].epoch for k in bad])
        return EXIT_VIOLATION
    log.info("bound holds at all %d epochs (intercept %.4f)",
             len(history.records), report.intercept)
    return 0


def cmd_sweep_t(args) -> int:
    flat = load_flat_config(args.config, _collect_overrides(args))
    try:
        t_values = [int(v) for v in args.t_list.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --t-list {args.t_list!r}: {exc}") from exc
    if not t_values or any(v < 2 for v in t_values):
        raise ConfigError(f"bad --t-list {args.t_list!r}")
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    started = _now()
    cfg = config_from_flat(flat)
    result = boundlab.sweep_T(cfg, t_values, workers=args.workers)
    path = os.path.join(out, "sweep.csv")
    result.to_csv(path)
    write_manifest(out, "sweep-t", flat, [path], started)
    for T, off in zip(result.t_values, result.offsets):
        log.info("T=%d offset=%.6g", T, off)
    return 0


REGULARIZE_VARIANTS = (
    ("vanilla", "none", 0.0),
    ("spectral", "spectral", 0.0),
    ("clip-0.1", "clip", 0.1),
    ("weight-decay-0.01", "weight-decay", 0.01),
    ("weight-decay-0.1", "weight-decay", 0.1),
    ("weight-decay-0.5", "weight-decay", 0.5),
    ("weight-decay-1", "weight-decay", 1.0),
    ("weight-decay-5", "weight-decay", 5.0),
)


def cmd_regularize(args) -> int:
    flat = load_flat_config(args.config, _collect_overrides(args))
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    started = _now()
    base = config_from_flat(flat)
    path = os.path.join(out, "regularize.csv")
    with open(path, "w", newline="\n") as f:
        f.write("variant,j_dsm,intercept\n")
        for name, kind, value in REGULARIZE_VARIANTS:
            cfg = dataclasses.replace(base, regularizer=kind, reg_value=value)
            net, history = run_training(cfg)
            report = boundlab.build_report(net, cfg, history)
            log.info("%s: j_dsm=%.6g intercept=%.4f", name, report.j_dsm,
                     report.intercept)
            f.write(f"{name},{float(report.j_dsm)!r},{float(report.intercept)!r}\n")
    write_manifest(out, "regularize", flat, [path], started)
    return 0


def cmd_perturb(args) -> int:
    flat = load_flat_config(args.config, _collect_overrides(args))
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    started = _now()
    base = config_from_flat(flat)
    path = os.path.join(out, "perturb.csv")
    violations = 0
    with open(path, "w", newline="\n") as f:
        f.write("seed,w2_generated,bound\n")
        for k in range(args.n_seeds):
            seed = base.seed + k
            check = boundlab.perturbation_check(base, args.eps, seed)
            ok = check["w2_generated"] <= check["bound"]
            violations += 0 if ok else 1
            log.info("seed=%d w2=%.6g bound=%.6g %s", seed,
                     check["w2_generated"], check["bound"],
                     "ok" if ok else "VIOLATED")
            f.write(f"{seed},{float(check['w2_generated'])!r},"
                    f"{float(check['bound'])!r}\n")
    write_manifest(out, "perturb", flat, [path], started)
    return EXIT_VIOLATION if violations else 0


def cmd_estimate_jsm(args) -> int:
    flat, cfg, net, _history = _load_run(args.run_dir)
    out = args.out_dir or args.run_dir
    os.makedirs(out, exist_ok=True)
    started = _now()
    sch = schedule.build_sigmoid_schedule(cfg.T, cfg.beta1, cfg.betaT)
    seeds = np.random.SeedSequence([cfg.seed, 271828]).generate_state(2)
    p0 = draw_initial_points(cfg, cfg.jsm_samples, int(seeds[1]))
    total, per_t = estimators.estimate_jsm_terms(
        net, sch, p0, cfg.jsm_samples, cfg.kde_bandwidth, cfg.fd_step,
        np.random.default_rng(seeds[0]))
    path = os.path.join(out, "jsm.json")
    with open(path, "w", newline="\n") as f:
        json.dump({"j_sm_est": total, "per_t_mse": [float(v) for v in per_t]},
                  f, indent=2)
        f.write("\n")
    write_manifest(out, "estimate-jsm", flat, [path], started)
    print(repr(total))
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for key, (typ, _default) in CONFIG_SCHEMA.items():
        if key == "seed":
            continue  # global flag
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            parser.add_argument(flag, type=_parse_bool, default=None,
                                metavar="BOOL")
        else:
            parser.add_argument(flag, type=typ, default=None)


def _collect_overrides(args) -> dict:
    overrides = {}
    for key in CONFIG_SCHEMA:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return overrides


def _env_workers() -> int:
    raw = os.environ.get("W2LAB_THREADS", "1")
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"W2LAB_THREADS must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ConfigError(f"W2LAB_THREADS must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="w2lab",
        description="Train small diffusion models and verify loss-based "
                    "Wasserstein-2 upper bounds on synthetic data.")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed (overrides the config file)")
    parser.add_argument("--config", type=str, default=None,
                        help="flat JSON config file")
    parser.add_argument("--out-dir", type=str, default=None,
                        help="artifact directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one model")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train, needs_out=True)

    p_verify = sub.add_parser("verify-bound", help="verify a finished run")
    p_verify.add_argument("--run-dir", required=True)
    p_verify.set_defaults(func=cmd_verify_bound, needs_out=False)

    p_sweep = sub.add_parser("sweep-t", help="retrain across T values")
    p_sweep.add_argument("--t-list", default="10,50,100,150,200")
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep_t, needs_out=True)

    p_reg = sub.add_parser("regularize", help="regularizer comparison sweep")
    _add_config_flags(p_reg)
    p_reg.set_defaults(func=cmd_regularize, needs_out=True)

    p_pert = sub.add_parser("perturb", help="perturbed-data bound check")
    p_pert.add_argument("--eps", type=float, default=0.1)
    p_pert.add_argument("--n-seeds", type=int, default=10)
    _add_config_flags(p_pert)
    p_pert.set_defaults(func=cmd_perturb, needs_out=True)

    p_jsm = sub.add_parser("estimate-jsm", help="estimate the score-matching loss")
    p_jsm.add_argument("--run-dir", required=True)
    p_jsm.set_defaults(func=cmd_estimate_jsm, needs_out=False)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "needs_out", False) and args.out_dir is None:
        args.out_dir = "w2lab-out"
    args.workers = 1
    try:
        args.workers = _env_workers()
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DivergenceError as exc:
        log.error("divergence: %s", exc)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
