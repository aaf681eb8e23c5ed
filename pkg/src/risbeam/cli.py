"""Experiment harness.

Subcommands: gen-data, train, search-c, idqnn, eval, sweep. Configuration
comes from an INI-style file with [system], [channel], [quantizer],
[training] and [sweep] sections (powers in dBm, distances in m, angles in
radians), shadowed by command-line overrides of the form section.key=value.
Every run writes a JSON manifest with the fully resolved configuration
(dBm and watts both recorded), the seed, and the package version; gen-data
can rerun from a manifest and reproduces the dataset byte for byte.

Exit codes: 0 ok, 2 validation/config error, 3 I/O error, 4 budget refusal.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__, baseline, channel, network, trainer
from ._kernels import backend_name
from .config import SystemConfig, TrainConfig, dbm_to_watt
from .errors import BudgetError, ConfigError

MANIFEST_FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_BUDGET = 4

SYSTEM_KEYS = {
    "m": int, "n": int, "k": int, "b": int,
    "pt_dbm": float, "noise_dbm": float, "q": "floats",
    "beta0_db": float, "d0": float, "path_exp": float,
    "kappa_g": float, "kappa_r": float,
    "ap_pos": "pair", "ris_pos": "pair", "user_center": "pair",
    "user_radius": float, "nx": int,
}

CHANNEL_KEYS = {"count": int, "eta": float}

QUANTIZER_KEYS = {"c": float}

TRAINING_KEYS = {
    "batch_size": int, "max_epochs": int, "patience": int,
    "lr": float, "plateau_factor": float, "plateau_patience": int,
    "lr_floor": float, "tau": float, "error_draws": int,
    "loss_kind": str, "penalty_weight": float,
    "n_train": int, "n_val": int, "n_test": int,
}

SWEEP_KEYS = {
    "axis": str, "values": "floats", "mode": str,
    "count": int, "eta": float, "trials": int, "oracle": "bool",
}

DEFAULTS = {
    "system": {"m": 4, "n": 16, "k": 2, "b": 1, "pt_dbm": 5.0,
               "noise_dbm": -80.0, "beta0_db": -35.6, "d0": 1.0,
               "path_exp": 2.2, "kappa_g": 10.0, "kappa_r": 10.0,
               "ap_pos": (0.0, 0.0), "ris_pos": (50.0, 0.0),
               "user_center": (50.0, 10.0), "user_radius": 2.0, "nx": 0},
    "channel": {"count": 6000, "eta": 0.0},
    "quantizer": {"c": 1.0},
    "training": {"batch_size": 256, "max_epochs": 300, "patience": 25,
                 "lr": 1e-3, "plateau_factor": 0.8, "plateau_patience": 10,
                 "lr_floor": 5e-5, "tau": 0.005, "error_draws": 10,
                 "loss_kind": "perfect", "penalty_weight": 0.0,
                 "n_train": 5000, "n_val": 500, "n_test": 500},
    "sweep": {"axis": "pt_dbm", "values": (0.0, 2.0, 4.0, 6.0, 8.0, 10.0),
              "mode": "baseline", "count": 200, "eta": 0.0, "trials": 100,
              "oracle": False},
}

SECTION_KEYS = {"system": SYSTEM_KEYS, "channel": CHANNEL_KEYS,
                "quantizer": QUANTIZER_KEYS, "training": TRAINING_KEYS,
                "sweep": SWEEP_KEYS}


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------

def _parse_value(raw: str, kind):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == "pair":
            parts = [float(v) for v in raw.split(",")]
            if len(parts) != 2:
                raise ValueError(raw)
            return tuple(parts)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r}: {exc}") from None
    raise ConfigError(f"unknown value kind {kind!r}")


def resolve_spec(config_path: str | None, overrides: list[str],
                 seed: int) -> dict:
    """Defaults <- config file <- overrides; returns the resolved tree."""
    resolved = {sec: dict(vals) for sec, vals in DEFAULTS.items()}

    if config_path:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        if not parser.read(config_path):
            raise OSError(f"cannot read config file {config_path}")
        for section in parser.sections():
            if section not in SECTION_KEYS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser[section].items():
                kind = SECTION_KEYS[section].get(key)
                if kind is None:
                    raise ConfigError(f"unknown key {section}.{key}")
                resolved[section][key] = _parse_value(raw, kind)

    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(
                f"override {item!r} must look like section.key=value")
        target, raw = item.split("=", 1)
        section, key = target.split(".", 1)
        kind = SECTION_KEYS.get(section, {}).get(key)
        if kind is None:
            raise ConfigError(f"unknown override {target}")
        resolved[section][key] = _parse_value(raw, kind)

    resolved["seed"] = int(seed)
    return resolved


def system_config(resolved: dict) -> SystemConfig:
    s = resolved["system"]
    return SystemConfig(
        M=s["m"], N=s["n"], K=s["k"], b=s["b"], pt_dbm=s["pt_dbm"],
        noise_dbm=s["noise_dbm"], q=tuple(s.get("q", ()) or ()),
        beta0_db=s["beta0_db"], d0=s["d0"], path_exp=s["path_exp"],
        kappa_g=s["kappa_g"], kappa_r=s["kappa_r"],
        ap_pos=tuple(s["ap_pos"]), ris_pos=tuple(s["ris_pos"]),
        user_center=tuple(s["user_center"]), user_radius=s["user_radius"],
        nx=s["nx"])


def train_config(resolved: dict) -> TrainConfig:
    t = resolved["training"]
    return TrainConfig(
        batch_size=t["batch_size"], max_epochs=t["max_epochs"],
        patience=t["patience"], lr=t["lr"],
        plateau_factor=t["plateau_factor"],
        plateau_patience=t["plateau_patience"], lr_floor=t["lr_floor"],
        tau=t["tau"], error_draws=t["error_draws"],
        loss_kind=t["loss_kind"], penalty_weight=t["penalty_weight"],
        steepness=resolved["quantizer"]["c"], seed=resolved["seed"])


def write_manifest(path: str, command: str, resolved: dict,
                   outputs: dict) -> None:
    cfg = system_config(resolved)
    payload = {
        "kind": "risbeam-manifest",
        "format_version": MANIFEST_FORMAT_VERSION,
        "version": __version__,
        "kernel_backend": backend_name(),
        "command": command,
        "seed": resolved["seed"],
        "resolved": {k: v for k, v in resolved.items() if k != "seed"},
        "linear_powers": {"pt_watt": cfg.pt, "sigma2_watt": cfg.sigma2},
        "outputs": outputs,
    }
    _atomic_json(path, payload)


def load_manifest(path: str) -> dict:
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("kind") != "risbeam-manifest":
        raise ConfigError(f"{path} is not a risbeam manifest")
    return manifest


def resolved_from_manifest(manifest: dict) -> dict:
    resolved = {sec: dict(vals) for sec, vals in manifest["resolved"].items()}
    for sec in resolved:
        for key, val in resolved[sec].items():
            if isinstance(val, list):
                resolved[sec][key] = tuple(val)
    resolved["seed"] = int(manifest["seed"])
    return resolved


def _atomic_json(path: str, payload: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _atomic_csv(path: str, header: list[str], rows: list[list]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.from_manifest:
        resolved = resolved_from_manifest(load_manifest(args.from_manifest))
    else:
        resolved = resolve_spec(args.config, args.overrides, args.seed)
    cfg = system_config(resolved)
    count = resolved["channel"]["count"]
    eta = resolved["channel"]["eta"]
    channel.generate_dataset(args.out, cfg, count, eta, resolved["seed"])
    write_manifest(args.out + ".manifest.json", "gen-data", resolved,
                   {"dataset": args.out})
    print(f"wrote {count} samples (eta={eta}) to {args.out}")
    return EXIT_OK


def _load_split(data_path: str, resolved: dict):
    cfg, eta, _, samples = channel.read_dataset(data_path)
    t = resolved["training"]
    train, val, test = trainer.split_samples(
        samples, t["n_train"], t["n_val"], t["n_test"])
    return cfg, eta, train, val, test


def _emit_training_outputs(out_dir: str, command: str, resolved: dict,
                           result: trainer.TrainResult, cfg: SystemConfig,
                           test_samples, extra_meta: dict | None = None):
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "checkpoint.json")
    hist = os.path.join(out_dir, "history.csv")
    report_path = os.path.join(out_dir, "report.json")
    meta = {
        "seed": resolved["seed"],
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "best_val_wsr_soft": result.val_wsr_soft,
        "best_val_wsr_hard": result.val_wsr_hard,
        "loss_kind": result.train_config.loss_kind,
        "penalty_weight": result.train_config.penalty_weight,
    }
    if extra_meta:
        meta.update(extra_meta)
    network.save_checkpoint(ckpt, result.params, result.c, cfg, meta)
    trainer.write_history(hist, result.history)

    report = dict(meta)
    report["gap"] = result.gap
    report["mean_f_cons"] = result.mean_f_cons
    if test_samples:
        test_soft, _ = trainer.evaluate(result.params, test_samples,
                                        result.c, cfg, mode="soft")
        test_hard, _ = trainer.evaluate(result.params, test_samples,
                                        result.c, cfg, mode="hard")
        report["test_wsr_soft"] = test_soft
        report["test_wsr_hard"] = test_hard
    _atomic_json(report_path, report)
    write_manifest(os.path.join(out_dir, "manifest.json"), command, resolved,
                   {"checkpoint": ckpt, "history": hist, "report": report_path})
    return report


def cmd_train(args) -> int:
    resolved = resolve_spec(args.config, args.overrides, args.seed)
    cfg, eta, train, val, test = _load_split(args.data, resolved)
    tc = train_config(resolved)
    result = trainer.fit(train, val, cfg, tc)
    report = _emit_training_outputs(args.out_dir, "train", resolved, result,
                                    cfg, test)
    print(f"trained {len(result.history)} epochs; "
          f"val WSR soft={result.val_wsr_soft:.4g} "
          f"hard={result.val_wsr_hard:.4g} gap={result.gap:.4g}")
    if "test_wsr_hard" in report:
        print(f"test WSR hard={report['test_wsr_hard']:.4g}")
    return EXIT_OK


def cmd_search_c(args) -> int:
    resolved = resolve_spec(args.config, args.overrides, args.seed)
    cfg, eta, train, val, test = _load_split(args.data, resolved)
    tc = train_config(resolved)
    search = trainer.search_c(train, val, cfg, tc, c_init=args.c_init)
    extra = {"best_c": search.c}
    report = _emit_training_outputs(args.out_dir, "search-c", resolved,
                                    search.result, cfg, test, extra)
    search_report = {
        "best_c": search.c,
        "iterations": [
            {"iteration": s.iteration, "c": s.c, "wsr_t": s.wsr_t,
             "wsr_p": s.wsr_p, "gap": s.gap} for s in search.states],
    }
    _atomic_json(os.path.join(args.out_dir, "search.json"), search_report)
    print(f"comparative search settled at c={search.c} "
          f"after {len(search.states)} iterations")
    return EXIT_OK


def cmd_idqnn(args) -> int:
    resolved = resolve_spec(args.config, args.overrides, args.seed)
    cfg, eta, train, val, test = _load_split(args.data, resolved)
    tc = train_config(resolved)
    out = trainer.run_idqnn(train, val, cfg, tc)
    extra = {"lambda": out.lam, "wsr_c": out.wsr_c, "f_cons_c": out.f_cons_c}
    _emit_training_outputs(args.out_dir, "idqnn", resolved, out.result, cfg,
                           test, extra)
    trainer.write_history(os.path.join(args.out_dir, "pretrain_history.csv"),
                          out.pretrain.history)
    print(f"pre-training: WSR_c={out.wsr_c:.4g} f_cons_c={out.f_cons_c:.4g} "
          f"-> lambda={out.lam:.4g}")
    print(f"final gap={out.result.gap:.4g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    resolved = resolve_spec(args.config, args.overrides, args.seed)
    params, quant, cfg, meta = network.load_checkpoint(args.checkpoint)
    data_cfg, eta, _, samples = channel.read_dataset(args.data)
    if data_cfg.N != cfg.N or data_cfg.M != cfg.M or data_cfg.K != cfg.K:
        raise ConfigError("checkpoint and dataset dimensions disagree")

    draws_n = args.draws
    if eta == 0.0 and draws_n > 1:
        print("warning: eta = 0, collapsing to single-draw scoring",
              file=sys.stderr)
        draws_n = 1
    G, h = trainer.stack_channels(samples)
    if eta > 0.0 and draws_n >= 1:
        rng = np.random.default_rng([resolved["seed"], 100])
        draws = channel.true_channel_draws(G, h, eta, draws_n, rng)
    else:
        draws = None

    _, soft = trainer.evaluate(params, samples, quant.c, cfg, mode="soft",
                               draws=draws)
    _, hard = trainer.evaluate(params, samples, quant.c, cfg, mode="hard",
                               draws=draws)

    oracle_ok = args.oracle and cfg.N * cfg.b <= baseline.ORACLE_BIT_BUDGET
    if args.oracle and not oracle_ok:
        print(f"warning: oracle skipped, N*b={cfg.N * cfg.b} exceeds budget",
              file=sys.stderr)
    header = ["index", "eta", "wsr_soft", "wsr_hard", "gap", "wsr_random"]
    if oracle_ok:
        header.append("wsr_oracle")
    rows = []
    rule = baseline.default_rule(cfg)
    for i, s in enumerate(samples):
        rng = np.random.default_rng([resolved["seed"], 200, i])
        rb = baseline.random_baseline(s, cfg, rng, trials=args.trials,
                                      rule=rule)
        g = (soft[i] - hard[i]) / soft[i] if soft[i] > 0 else float("nan")
        row = [s.index, eta, soft[i], hard[i], g, rb.wsr]
        if oracle_ok:
            row.append(baseline.exhaustive_oracle(s, cfg, rule=rule).best_wsr)
        rows.append(row)
    _atomic_csv(args.out, header, rows)
    write_manifest(args.out + ".manifest.json", "eval", resolved,
                   {"csv": args.out, "checkpoint": args.checkpoint,
                    "dataset": args.data})
    print(f"scored {len(samples)} samples -> {args.out}; "
          f"mean hard WSR {np.mean(hard):.4g}")
    return EXIT_OK


def _sweep_point(payload):
    """One sweep point; module-level so process pools can pickle it."""
    resolved, axis, value, index, mode = payload
    resolved = {k: (dict(v) if isinstance(v, dict) else v)
                for k, v in resolved.items()}
    if axis == "pt_dbm":
        resolved["system"]["pt_dbm"] = value
    elif axis == "n":
        resolved["system"]["n"] = int(value)
        resolved["system"]["nx"] = 0  # re-factorize for the new size
    elif axis == "eta":
        resolved["sweep"]["eta"] = value
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    # independent seed per point, derived from (master seed, point index)
    point_seed = [resolved["seed"], 300, index]
    data_seed = int(np.random.SeedSequence(point_seed).generate_state(1)[0])
    cfg = system_config(resolved)
    sw = resolved["sweep"]
    eta = sw["eta"]
    count = sw["count"]
    samples = channel.generate_samples(cfg, count, eta, seed=data_seed)
    row = {"axis": axis, "value": value, "n_samples": count, "eta": eta}

    rule = baseline.default_rule(cfg)
    rng = np.random.default_rng(point_seed + [1])
    row["wsr_random"] = float(np.mean(
        [baseline.random_baseline(s, cfg, rng, trials=sw["trials"],
                                  rule=rule).wsr for s in samples]))
    if sw["oracle"]:
        if cfg.N * cfg.b > baseline.ORACLE_BIT_BUDGET:
            raise BudgetError(
                f"sweep oracle: N*b={cfg.N * cfg.b} exceeds budget")
        row["wsr_oracle"] = float(np.mean(
            [baseline.exhaustive_oracle(s, cfg, rule=rule).best_wsr
             for s in samples]))

    if mode == "train":
        t = resolved["training"]
        n_train = min(t["n_train"], count - t["n_val"] - t["n_test"])
        train, val, test = trainer.split_samples(
            samples, n_train, t["n_val"], t["n_test"])
        tc = train_config(resolved)
        if eta > 0.0 and tc.loss_kind == "perfect":
            tc = replace(tc, loss_kind="averaged")
        result = trainer.fit(train, val, cfg, tc)
        test_soft, _ = trainer.evaluate(result.params, test, result.c, cfg,
                                        mode="soft")
        test_hard, _ = trainer.evaluate(result.params, test, result.c, cfg,
                                        mode="hard")
        row["wsr_soft"] = test_soft
        row["wsr_hard"] = test_hard
        row["epochs"] = len(result.history)
    return index, row


def cmd_sweep(args) -> int:
    resolved = resolve_spec(args.config, args.overrides, args.seed)
    sw = resolved["sweep"]
    axis, values, mode = sw["axis"], sw["values"], sw["mode"]
    if mode not in ("baseline", "train"):
        raise ConfigError(f"sweep mode must be baseline or train, got {mode!r}")
    payloads = [(resolved, axis, v, i, mode) for i, v in enumerate(values)]
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_sweep_point, payloads))
    else:
        results = [_sweep_point(p) for p in payloads]
    results.sort(key=lambda item: item[0])
    rows_dicts = [row for _, row in results]

    columns = ["value", "eta", "n_samples", "wsr_random"]
    if sw["oracle"]:
        columns.append("wsr_oracle")
    if mode == "train":
        columns += ["wsr_soft", "wsr_hard", "epochs"]
    os.makedirs(args.out_dir, exist_ok=True)
    out_csv = os.path.join(args.out_dir, f"sweep_{axis}.csv")
    _atomic_csv(out_csv, ["axis"] + columns,
                [[r["axis"]] + [r[c] for c in columns] for r in rows_dicts])
    write_manifest(os.path.join(args.out_dir, "manifest.json"), "sweep",
                   resolved, {"csv": out_csv})
    print(f"swept {axis} over {len(values)} points -> {out_csv}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="risbeam",
        description="RIS-assisted MISO joint beamforming experiments")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("overrides", nargs="*",
                       help="section.key=value overrides")

    p = sub.add_parser("gen-data", help="generate a channel dataset")
    common(p)
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--from-manifest", help="rerun from a manifest")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="train a network")
    common(p)
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("search-c", help="comparative search for steepness c")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--c-init", type=float, default=2.0)
    p.set_defaults(handler=cmd_search_c)

    p = sub.add_parser("idqnn", help="penalty-trained variant")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_idqnn)

    p = sub.add_parser("eval", help="score a checkpoint on a test set")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="per-sample CSV path")
    p.add_argument("--trials", type=int, default=100,
                   help="random-baseline trials per sample")
    p.add_argument("--draws", type=int, default=10,
                   help="true-channel draws per sample when eta > 0")
    p.add_argument("--oracle", action="store_true",
                   help="add an exhaustive-oracle column when within budget")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", help="sweep one axis (pt_dbm, n, eta)")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--parallel", type=int, default=1,
                   help="worker processes for independent sweep points")
    p.set_defaults(handler=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except BudgetError as exc:
        print(f"budget refusal: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
