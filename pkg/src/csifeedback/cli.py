"""Command-line front end: dataset generation, training, evaluation
sweeps, information analysis, embedding export, and file inspection.

Every command takes --config/--set for the INI experiment configuration
and exits nonzero with a one-line `error: <reason>` on failure.
"""

import argparse
import csv
import os
import sys

import numpy as np

from . import channel, config, cqi, metrics, model, train


class CliError(Exception):
    pass


def _add_config_args(p):
    p.add_argument("--config", help="experiment config file (INI)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="override a config value")


def _load_config(args):
    try:
        return config.load(args.config, args.overrides)
    except config.ConfigError as exc:
        raise CliError(str(exc)) from exc


def cmd_gen_data(args):
    cfg = _load_config(args)
    seed = args.seed if args.seed is not None else cfg.scenario.seed
    if args.count == 0:
        print("warning: generating an empty dataset", file=sys.stderr)
    ds = channel.generate_dataset(cfg.scenario, args.count, seed=seed)
    channel.write_dataset(ds, args.out)
    print(f"wrote {ds.count} samples ({ds.n_tx}x{ds.n_subcarriers}) to {args.out}")
    if ds.count:
        rho = cqi.subcarrier_snr(ds.samples, cfg.link_budget())
        idx = cfg.cqi_table().lookup(rho.mean(axis=-1))
        hist = np.bincount(idx, minlength=cqi.N_LEVELS)
        print("wideband CQI histogram:")
        for level, n in enumerate(hist):
            print(f"  cqi {level:2d}: {n}")
        print(f"  total: {hist.sum()}")


def _load_data(path):
    try:
        return channel.read_dataset(path)
    except (OSError, channel.DatasetFormatError) as exc:
        raise CliError(f"dataset {path}: {exc}") from exc


def _split(ds, val_fraction):
    n_val = int(round(ds.count * val_fraction))
    n_train = ds.count - n_val
    return ds.samples[:n_train], ds.samples[n_train:]


def cmd_train(args):
    cfg = _load_config(args)
    ds = _load_data(args.data)
    model_cfg = cfg.model_config()
    if (ds.n_tx, ds.n_subcarriers) != (model_cfg.n_tx, model_cfg.n_subcarriers):
        raise CliError(f"dataset dims {ds.n_tx}x{ds.n_subcarriers} do not match "
                       f"config {model_cfg.n_tx}x{model_cfg.n_subcarriers}")
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "config.ini"), "w") as f:
        f.write(config.to_ini(cfg))

    h_train, h_val = _split(ds, cfg.train.val_fraction)
    cqi_train = train.cqi_indices_for(h_train, model_cfg, cfg.link_budget(),
                                      cfg.cqi_table())
    if args.resume:
        state, model_cfg, _ = train.load_state(args.resume)
    else:
        state = train.init_state(model_cfg, cfg.train, h_train)

    ckpt_path = os.path.join(args.out_dir, "checkpoint.smck")

    def save(st):
        train.save_state(ckpt_path, st, model_cfg, cfg.train)

    remaining = cfg.train.steps - state.step
    if remaining <= 0:
        raise CliError(f"checkpoint already at step {state.step} >= "
                       f"train.steps {cfg.train.steps}")
    metrics_path = os.path.join(args.out_dir, "metrics.csv")
    write_header = not (args.resume and os.path.exists(metrics_path))
    with open(metrics_path, "a" if args.resume else "w", newline="") as f:
        w = csv.writer(f)
        if write_header:
            w.writerow(["step", "loss", "tau", "snr_db"])
        try:
            train.train(state, h_train, cqi_train, model_cfg, cfg.train,
                        steps=remaining, metrics_writer=w, checkpoint_fn=save)
        except train.TrainError as exc:
            raise CliError(str(exc)) from exc
    save(state)
    print(f"trained to step {state.step}; checkpoint at {ckpt_path}")
    if h_val.shape[0]:
        cqi_val = train.cqi_indices_for(h_val, model_cfg, cfg.link_budget(),
                                        cfg.cqi_table())
        rows = train.evaluate(state.params, model_cfg, h_val, cqi_val,
                              cfg.eval.snr_db_list, mode=cfg.eval.mode,
                              norm_scale=state.norm_scale, seed=cfg.eval.seed)
        train.write_eval_csv(os.path.join(args.out_dir, "eval.csv"), rows)
        for r in rows:
            print(f"val snr {r['snr_db']:+.1f} dB: nmse {r['nmse_db']:.2f} dB, "
                  f"sgcs {r['sgcs']:.4f}")


def cmd_eval(args):
    cfg = _load_config(args)
    ds = _load_data(args.data)
    try:
        state, model_cfg, _ = train.load_state(args.checkpoint)
    except (OSError, model.CheckpointFormatError) as exc:
        raise CliError(f"checkpoint {args.checkpoint}: {exc}") from exc
    if (ds.n_tx, ds.n_subcarriers) != (model_cfg.n_tx, model_cfg.n_subcarriers):
        raise CliError("dataset dims do not match checkpoint")
    snr_list = ([float(s) for s in args.snr_list.split(",")]
                if args.snr_list else cfg.eval.snr_db_list)
    mode = args.mode or cfg.eval.mode
    cqi_idx = train.cqi_indices_for(ds.samples, model_cfg, cfg.link_budget(),
                                    cfg.cqi_table())
    rows = train.evaluate(state.params, model_cfg, ds.samples, cqi_idx,
                          snr_list, mode=mode, norm_scale=state.norm_scale,
                          seed=cfg.eval.seed, batch_size=cfg.eval.batch_size)
    train.write_eval_csv(args.out, rows)
    for r in rows:
        print(f"snr {r['snr_db']:+.1f} dB cr {r['cr']:.4f} {r['cqi_mode']}/"
              f"{r['mod_mode']}: nmse {r['nmse_db']:.2f} dB, sgcs {r['sgcs']:.4f}")
    print(f"wrote {args.out}")


def cmd_analyze(args):
    cfg = _load_config(args)
    ds = _load_data(args.data)
    if ds.count == 0:
        raise CliError("cannot analyze an empty dataset")
    lb, tbl = cfg.link_budget(), cfg.cqi_table()
    rho = cqi.subcarrier_snr(ds.samples, lb)
    if args.cqi_mode == "wideband":
        labels = tbl.lookup(rho.mean(axis=-1))[:, None].astype(np.float64)
    else:
        labels = cqi.subband_cqi(rho, tbl, cfg.cqi.subcarriers_per_subband)
        labels = labels.astype(np.float64)
    feats = metrics.normalized_features(ds.samples)
    try:
        ent = metrics.knn_entropy(labels, k=args.k)
        mi = metrics.knn_mutual_information(feats, labels, k=args.k)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    metrics.write_analysis_csv(args.out, [
        (f"{args.cqi_mode}_cqi", ent),
        (f"normalized_csi;{args.cqi_mode}_cqi", mi),
    ])
    print(f"entropy({args.cqi_mode} cqi): {ent.bits:.3f} bits")
    print(f"mutual information(csi'; cqi): {mi.bits:.3f} bits")
    print(f"wrote {args.out}")


def cmd_export_embeddings(args):
    cfg = _load_config(args)
    ds = _load_data(args.data)
    rho = cqi.subcarrier_snr(ds.samples, cfg.link_budget())
    labels = cfg.cqi_table().lookup(rho.mean(axis=-1))
    try:
        metrics.export_embeddings(ds.samples, labels, args.out)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    print(f"wrote {ds.count} rows to {args.out}")


def cmd_inspect(args):
    with open(args.path, "rb") as f:
        head = f.read(16)
    if head[:4] == channel.MAGIC:
        ds = _load_data(args.path)
        print(f"SMC1 dataset: {ds.count} samples, "
              f"{ds.n_tx} antennas x {ds.n_subcarriers} subcarriers")
        if ds.metadata:
            print(f"metadata keys: {sorted(ds.metadata)}")
    elif head[:4] == model.CKPT_MAGIC:
        try:
            model_cfg, params, meta = model.read_checkpoint(args.path)
        except model.CheckpointFormatError as exc:
            raise CliError(f"checkpoint {args.path}: {exc}") from exc
        n_values = sum(p.data.size for p in params.values())
        print(f"SMCK checkpoint: {len(params)} tensors, {n_values} values")
        print(f"model: {model_cfg}")
        if "step" in meta:
            print(f"step: {meta['step']}")
    else:
        raise CliError(f"{args.path}: unknown magic {head[:4]!r}")


def build_parser():
    p = argparse.ArgumentParser(
        prog="csifb",
        description="CQI-assisted CSI feedback simulation laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic CSI dataset")
    _add_config_args(g)
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a feedback model end to end")
    _add_config_args(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--resume", help="checkpoint to resume from")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint over SNRs")
    _add_config_args(e)
    e.add_argument("checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--snr-list", help="comma-separated SNRs in dB")
    e.add_argument("--mode", choices=["soft", "hard"])
    e.add_argument("--out", default="eval.csv")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("analyze", help="CQI entropy and CSI-CQI mutual information")
    _add_config_args(a)
    a.add_argument("--data", required=True)
    a.add_argument("--cqi-mode", choices=["wideband", "subband"], default="wideband")
    a.add_argument("--k", type=int, default=3)
    a.add_argument("--out", default="analysis.csv")
    a.set_defaults(fn=cmd_analyze)

    x = sub.add_parser("export-embeddings",
                       help="CSV of normalized channels + CQI labels for t-SNE tools")
    _add_config_args(x)
    x.add_argument("--data", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(fn=cmd_export_embeddings)

    i = sub.add_parser("inspect", help="print the header of an SMC1/SMCK file")
    i.add_argument("path")
    i.set_defaults(fn=cmd_inspect)

    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
