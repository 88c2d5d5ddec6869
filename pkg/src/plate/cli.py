"""Command-line entry point: ``plate {generate,train,plan,eval,ablate}``.

Every configuration key is also a flag named ``--<section>.<key>``
(e.g. ``--dataset.sigma 0.1``, ``--model.attention_kind full``). Flags
override ``--config`` files, which override the selected ``--profile``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import config as cfgmod
from .container import ContainerError
from .envgen import Dataset, GenerationError, generate_dataset
from .evaluation import compounding_error, is_non_decreasing, reports_to_csv, reports_to_table
from .experiments import (
    baseline_fc_transition,
    beam_sweep,
    evaluate_baselines,
    evaluate_model,
    plan_all,
    train_model,
)
from .numcore import NumericError
from .planner import BeamConfig
from .training import TrainState, load_checkpoint, new_state, save_checkpoint, train

log = logging.getLogger("plate")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(Exception):
    pass


def _parse_value(annotation, raw):
    ann = str(annotation)
    if raw.lower() == "none" and "None" in ann:
        return None
    if ann.startswith("list"):
        return [int(x) for x in raw.split(",") if x]
    if ann.startswith("int"):
        return int(raw)
    if ann.startswith("float"):
        return float(raw)
    return raw


def _add_config_flags(p):
    p.add_argument("--config", help="JSON or YAML config file")
    p.add_argument("--profile", choices=sorted(cfgmod.PROFILES))
    for section, cls in cfgmod.SECTIONS.items():
        for f in fields(cls):
            p.add_argument(f"--{section}.{f.name}", dest=f"cfg__{section}__{f.name}",
                           metavar=f.name.upper(), default=None)


def _config_from_args(args):
    updates = {}
    for key, raw in vars(args).items():
        if not key.startswith("cfg__") or raw is None:
            continue
        _, section, name = key.split("__", 2)
        ann = {f.name: f.type for f in fields(cfgmod.SECTIONS[section])}[name]
        try:
            value = _parse_value(ann, raw)
        except ValueError as exc:
            raise cfgmod.ConfigError(f"--{section}.{name}: {exc}") from exc
        updates.setdefault(section, {})[name] = value
    return cfgmod.resolve(args.config, updates, args.profile)


def _out_dir(cfg, args):
    out = Path(getattr(args, "out", None) or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _archive_config(out, cfg, extra=None):
    payload = {"config": cfg.to_dict(), "config_hash": cfg.hash()}
    payload.update(extra or {})
    (out / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True))


def _load_dataset(path):
    if not path or not Path(path).exists():
        raise DataError(f"dataset not found: {path}")
    try:
        return Dataset.load(path)
    except ContainerError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _load_ckpt(path):
    if not path or not Path(path).exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except ContainerError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _check_compatible(state: TrainState, meta, ds: Dataset, force):
    mc = state.model.config
    if mc.n_actions != ds.num_actions:
        raise DataError(f"incompatible num_actions: checkpoint {mc.n_actions}, dataset {ds.num_actions}")
    if mc.obs_dim != ds.obs_dim:
        raise DataError(f"incompatible obs_dim: checkpoint {mc.obs_dim}, dataset {ds.obs_dim}")
    want = meta.get("dataset_fingerprint")
    if want and want != ds.fingerprint() and not force:
        raise DataError(f"lineage mismatch: checkpoint trained on dataset {want}, "
                        f"got {ds.fingerprint()} (use --force to override)")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args):
    cfg = _config_from_args(args)
    try:
        ds = generate_dataset(**cfg.dataset_kwargs())
    except (GenerationError, ValueError) as exc:
        raise cfgmod.ConfigError(f"dataset generation failed: {exc}") from exc
    out = _out_dir(cfg, args)
    path = Path(args.output or out / "dataset.plte")
    ds.save(path)
    _archive_config(out, cfg, {"dataset_fingerprint": ds.fingerprint()})
    print(f"wrote {path} ({len(ds.train())} train / {len(ds.test())} test trajectories, "
          f"fingerprint {ds.fingerprint()})")
    return EXIT_OK


def _write_curve(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "step", "train_loss", "test_loss"])
        for row in history:
            w.writerow([row["epoch"], row["step"], repr(row["train_loss"]), repr(row["test_loss"])])


def cmd_train(args):
    cfg = _config_from_args(args)
    ds = _load_dataset(args.dataset)
    out = _out_dir(cfg, args)
    tc = cfg.train_config()
    if args.resume:
        state, meta = _load_ckpt(args.resume)
        _check_compatible(state, meta, ds, args.force)
        state.best_params = None
    else:
        state = new_state(cfg.model_config(ds.obs_dim, ds.num_actions), tc)
    meta = {"config": cfg.to_dict(), "config_hash": cfg.hash(),
            "dataset_fingerprint": ds.fingerprint(),
            "dataset_config_hash": ds.header.get("config_hash")}
    best_path = out / "checkpoint_best.plte"

    def on_epoch(st, row):
        if st.best_params is not None and row["test_loss"] == st.best_test_loss:
            save_checkpoint(best_path, st, meta, params=st.best_params)

    train(state, ds.train(), tc, ds.test(), on_epoch=on_epoch)
    save_checkpoint(out / "checkpoint_last.plte", state, meta)
    _write_curve(out / "loss_curve.csv", state.history)
    _archive_config(out, cfg, {"dataset_fingerprint": ds.fingerprint()})
    last = state.history[-1] if state.history else {}
    print(f"trained to epoch {state.epoch} (step {state.step}); "
          f"train loss {last.get('train_loss', float('nan')):.5f}, "
          f"test loss {last.get('test_loss', float('nan')):.5f}; outputs in {out}")
    return EXIT_OK


def _beam_from_args(cfg, args):
    b = cfg.beam_config()
    return BeamConfig(args.beam_width or b.beam_width, args.n_extensions or b.n_extensions,
                      None, b.goal_weight)


def cmd_plan(args):
    cfg = _config_from_args(args)
    ds = _load_dataset(args.dataset)
    state, meta = _load_ckpt(args.checkpoint)
    _check_compatible(state, meta, ds, args.force)
    trajs = ds.trajectories if args.split == "all" else (ds.test() if args.split == "test" else ds.train())
    if args.index:
        by_id = {t.id: t for t in ds.trajectories}
        trajs = [by_id[i] for i in args.index if i in by_id]
    beam = _beam_from_args(cfg, args)
    plans = plan_all(state.model, trajs, args.decode, beam)
    for tr, plan in zip(trajs, plans):
        reached = ds.graph.replay(tr.start_state, plan) == tr.goal_state
        print(f"traj {tr.id}: T={tr.horizon} plan={list(plan)} expert={tr.actions.tolist()} "
              f"reaches_goal={reached}")
    return EXIT_OK


def cmd_eval(args):
    cfg = _config_from_args(args)
    ds = _load_dataset(args.dataset)
    state, meta = _load_ckpt(args.checkpoint)
    _check_compatible(state, meta, ds, args.force)
    out = _out_dir(cfg, args)
    seed = cfg.training.seed
    beam = _beam_from_args(cfg, args)
    reports = [evaluate_model(state.model, ds, decode="greedy", seed=seed),
               evaluate_model(state.model, ds, decode="beam", beam=beam, seed=seed)]
    if args.baselines:
        reports += evaluate_baselines(ds, state.model.encode, seed)
    _emit(out, "report", reports, cfg, meta, ds)
    return EXIT_OK


def cmd_ablate(args):
    cfg = _config_from_args(args)
    ds = _load_dataset(args.dataset)
    out = _out_dir(cfg, args)
    seed = cfg.training.seed
    tc = cfg.train_config()
    if args.checkpoint:
        state, meta = _load_ckpt(args.checkpoint)
        _check_compatible(state, meta, ds, args.force)
    else:
        state = train_model(ds, cfg.model_config(ds.obs_dim, ds.num_actions), tc)
        meta = {"config_hash": cfg.hash(), "dataset_fingerprint": ds.fingerprint()}
    widths = [int(k) for k in args.widths.split(",")]
    reports = beam_sweep(state.model, ds, widths, cfg.beam.n_extensions, seed)
    succ = {r.method: r.success_rate for r in reports}
    log.info("beam sweep success rates: %s", succ)
    print("beam-width sweep (observation only, not asserted):",
          ", ".join(f"{k}={v:.3f}" for k, v in succ.items()))
    if args.attention:
        base = cfg.model_config(ds.obs_dim, ds.num_actions)
        for n in (1, 2, 3):
            att = replace(base.attention, attention_kind="full", future_n=n)
            st = train_model(ds, replace(base, attention=att), tc)
            reports.append(evaluate_model(st.model, ds, method=f"plate-full-future{n}",
                                          decode="beam", beam=cfg.beam_config(), seed=seed))
    if args.fc or args.compounding_horizon:
        T = args.compounding_horizon
        fc_report, _ = baseline_fc_transition(ds, cfg.model_config(ds.obs_dim, ds.num_actions), tc,
                                              curve_horizon=T)
        reports.append(fc_report)
        if T:
            reports[0].compounding_error = compounding_error(state.model, ds.test(), T)
            for r in (reports[0], fc_report):
                mono = is_non_decreasing(r.compounding_error)
                print(f"{r.method} compounding error non-decreasing: {mono}")
            gap = fc_report.compounding_error[-1][1] - reports[0].compounding_error[-1][1]
            print(f"observation: FC minus transformer error at t={T}: {gap:+.5f}")
    reports += evaluate_baselines(ds, state.model.encode, seed)
    _emit(out, "ablation", reports, cfg, meta, ds)
    return EXIT_OK


def _emit(out, stem, reports, cfg, meta, ds):
    lineage = {"config_hash": cfg.hash(), "checkpoint_config_hash": meta.get("config_hash"),
               "dataset_fingerprint": ds.fingerprint()}
    table = reports_to_table(reports)
    (out / f"{stem}.txt").write_text(
        table + "\n\n" + "\n".join(f"{k}: {v}" for k, v in lineage.items()) + "\n")
    (out / f"{stem}.csv").write_text(reports_to_csv(reports))
    (out / f"{stem}.meta.json").write_text(json.dumps(lineage, indent=2, sort_keys=True))
    print(table)
    print(f"wrote {out / (stem + '.txt')} and {out / (stem + '.csv')}")


def build_parser():
    parser = argparse.ArgumentParser(prog="plate", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    _add_config_flags(p)
    p.add_argument("--out", help="output directory (default: output.dir)")
    p.add_argument("--output", help="dataset file path (default: <out>/dataset.plte)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a dataset")
    _add_config_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    for name, func, hlp in (("plan", cmd_plan, "print plans for dataset episodes"),
                            ("eval", cmd_eval, "evaluate a checkpoint")):
        p = sub.add_parser(name, help=hlp)
        _add_config_flags(p)
        p.add_argument("--dataset", required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--out")
        p.add_argument("--force", action="store_true", help="ignore dataset lineage mismatch")
        p.add_argument("--beam-width", type=int)
        p.add_argument("--n-extensions", type=int)
        if name == "plan":
            p.add_argument("--decode", choices=["greedy", "beam"], default="beam")
            p.add_argument("--split", choices=["train", "test", "all"], default="test")
            p.add_argument("--index", type=int, nargs="*")
        else:
            p.add_argument("--baselines", action="store_true", help="add random and retrieval rows")
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", help="beam-width sweep, attention variants, FC ablation")
    _add_config_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", help="reuse a trained model instead of training one")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.add_argument("--widths", default="1,2,3")
    p.add_argument("--attention", action="store_true", help="also train full-attention variants")
    p.add_argument("--fc", action="store_true", help="also train the FC-transition ablation")
    p.add_argument("--compounding-horizon", type=int, default=0)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
