"""Command-line entry point: ``rcovnet <command> --config FILE [options]``.

Commands
--------
simulate   draw a CAW path, embed it and write ``dataset.rcov``
train      fit the ConvLSTM and write a checkpoint, history and parameter counts
evaluate   rolling test-split evaluation of a checkpoint or a baseline
ablate     transform x loss grid scored on the validation split
compare    baselines with lag / BIC selection plus the ConvLSTM on the test split
convert    per-day CSV matrices to a dataset file

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical error.
Every run leaves ``manifest.json`` in its output directory.
"""
import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from rcovnet import __version__, _backend
from rcovnet import linalg as la
from rcovnet.baselines import (
    ExponentialMovingAverage,
    MfaDcaw,
    MfaVar,
    MovingAverage,
    select_dcaw_by_bic,
    select_var_by_bic,
)
from rcovnet.config import embedding_seed, load_config
from rcovnet.errors import ConfigError, DataError, InvalidDegreesOfFreedom, NumericalError, RcovError
from rcovnet.evaluation import OracleForecaster, evaluate_series, report_csv, summary_csv
from rcovnet.io import read_dataset, read_matrix_csv, write_dataset
from rcovnet.nn import (
    ConvLstmForecaster,
    TrainConfig,
    count_params,
    load_checkpoint,
    save_checkpoint,
    train,
    validation_scores,
)
from rcovnet.nn.checkpoint import atomic_write_bytes
from rcovnet.nn.losses import LossKind
from rcovnet.simulator import embed_factors, make_embedding, simulate_caw
from rcovnet.transforms import TransformKind, make_windows, split_series

log = logging.getLogger("rcovnet")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


# -- output bookkeeping ---------------------------------------------------------

class Run:
    """Output directory plus the record of everything written to it."""

    def __init__(self, command, cfg, out, seed, argv):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.seed = seed
        self.argv = list(argv)
        self.outputs = {}
        self.seeds = {"experiment": seed}
        self.extra = {}
        self.workers = 1
        os.makedirs(out, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out, name)

    def write(self, name, data):
        if isinstance(data, str):
            data = data.encode()
        atomic_write_bytes(self.path(name), data)
        self.outputs[name] = hashlib.sha256(data).hexdigest()

    def write_json(self, name, obj):
        self.write(name, json.dumps(obj, indent=1, sort_keys=True) + "\n")

    def record(self, name, digest):
        self.outputs[name] = digest

    def manifest(self):
        return {
            "command": self.command,
            "argv": self.argv,
            "version": __version__,
            "backend": _backend.NAME,
            "config_digest": self.cfg.digest() if self.cfg is not None else None,
            "config": self.cfg.to_dict() if self.cfg is not None else None,
            "seeds": self.seeds,
            "outputs": dict(sorted(self.outputs.items())),
            **self.extra,
        }

    def finish(self):
        data = json.dumps(self.manifest(), indent=1, sort_keys=True, default=str) + "\n"
        atomic_write_bytes(self.path("manifest.json"), data.encode())


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else x


# -- data ------------------------------------------------------------------------

class Data:
    """A series with its split and, for simulated data, the latent truth."""

    def __init__(self, series, split, scales=None, embedding=None):
        self.series = series
        self.split = split
        self.scales = scales
        self.embedding = embedding

    @property
    def oracle(self):
        if self.scales is None:
            return None
        return OracleForecaster(self.scales, self.embedding)


def simulate_series(cfg, seed, innovation=None):
    """(series, path, embedding) for one simulation seed."""
    s = cfg.simulation
    params = s.caw_params()
    if params.r != s.r:
        raise ConfigError(f"[simulation] r = {s.r} but the CAW parameters have r = {params.r}")
    try:
        path = simulate_caw(params, s.length, innovation or s.innovation, la.Rng(seed), burn_in=s.burn_in)
    except InvalidDegreesOfFreedom as exc:
        raise ConfigError(f"[simulation] {exc}") from None
    if s.embedding == "series":
        if not s.embedding_series:
            raise ConfigError("[simulation] embedding = series needs embedding_series")
        emb = make_embedding(s.d, s.r, "series", series=read_dataset(s.embedding_series))
    else:
        emb = make_embedding(s.d, s.r, "random", seed=embedding_seed(cfg), sigma0_scale=s.sigma0_scale)
    note = f"CAW {s.params} {innovation or s.innovation} seed={seed} r={s.r}"
    return embed_factors(path.factors, emb, note=note), path, emb


def load_data(cfg, seed, innovation=None):
    if cfg.data.source == "file":
        series = read_dataset(cfg.data.path)
        return Data(series, split_series(series, cfg.data.scheme(), min_train=cfg.lag + 1))
    series, path, emb = simulate_series(cfg, seed, innovation)
    return Data(series, split_series(series, cfg.data.scheme(), min_train=cfg.lag + 1), path.scales, emb)


# -- model helpers ------------------------------------------------------------------

def _epoch_logger(tag):
    def on_epoch(rec):
        log.info("%s epoch %d loss %.6g val_rmse %.6g (%.1fs)", tag, rec.epoch, rec.train_loss,
                 rec.val_rmse, rec.seconds)
    return on_epoch


def fit_convlstm(cfg, data, kind=None, loss=None, seed=None, tag="train"):
    """Train on the training windows, select on the validation windows."""
    kind = TransformKind.parse(kind or cfg.transform)
    spec = cfg.model_spec(data.series.d)
    tc = cfg.train.to_dict()
    tc["seed"] = cfg.seed if seed is None else seed
    if loss is not None:
        tc["loss"] = loss
    config = TrainConfig(**tc)
    ws = make_windows(data.series, kind, cfg.lag)
    res = train(spec, ws.restrict(data.split.train), ws.restrict(data.split.val), config,
                on_epoch=_epoch_logger(tag))
    return spec, kind, ws, res


def baseline_forecaster(cfg, data):
    m = cfg.model
    train_mats = data.series.matrices[data.split.train.start:data.split.train.stop]
    if m.type == "ma":
        return MovingAverage(m.lag)
    if m.type == "ema":
        return ExponentialMovingAverage(m.lag)
    if m.type == "mfa-var":
        return MfaVar(train_mats, m.r, m.q)
    if m.type == "mfa-dcaw":
        return MfaDcaw(train_mats, m.r, m.p, m.q)
    raise ConfigError(f"[model] type {m.type!r} is not a baseline")


def _history_csv(history):
    # wall-clock seconds are logged, not written, so reruns give identical bytes
    rows = [(h.epoch, _fmt(h.train_loss), _fmt(h.train_objective), _fmt(h.val_rmse), _fmt(h.val_mae))
            for h in history]
    return _csv(("epoch", "train_loss", "train_objective", "val_rmse", "val_mae"), rows)


# -- commands -------------------------------------------------------------------------

def cmd_simulate(run, args):
    cfg = run.cfg
    series, path, emb = simulate_series(cfg, run.seed)
    run.seeds["embedding"] = embedding_seed(cfg)
    digest = write_dataset(run.path("dataset.rcov"), series)
    run.record("dataset.rcov", digest)
    buf = io.BytesIO()
    np.savez(buf, factors=path.factors, scales=path.scales, loading=emb.loading, sigma0=emb.sigma0)
    run.write("latent.npz", buf.getvalue())
    log.info("wrote %d days of %dx%d matrices to %s", series.T, series.d, series.d, run.path("dataset.rcov"))


def cmd_train(run, args):
    cfg = run.cfg
    if cfg.model.type != "convlstm":
        raise ConfigError("train needs [model] type = convlstm")
    data = load_data(cfg, run.seed)
    run.seeds["embedding"] = embedding_seed(cfg)
    spec, kind, _, res = fit_convlstm(cfg, data)
    weights_only, total = count_params(spec)
    meta = {"transform": kind.value, "best_epoch": res.best_epoch, "best_val_rmse": res.best_val_rmse,
            "config_digest": cfg.digest(), "seed": run.seed}
    save_checkpoint(run.path("model.ckpt"), res.weights, meta)
    with open(run.path("model.ckpt"), "rb") as fh:
        run.record("model.ckpt", hashlib.sha256(fh.read()).hexdigest())
    run.write("history.csv", _history_csv(res.history))
    run.write_json("params.json", {"weights_only": weights_only, "total": total})
    run.extra["training"] = {"best_epoch": res.best_epoch, "best_val_rmse": res.best_val_rmse,
                             "epochs": len(res.history), "stopped_early": res.stopped_early}
    print(f"parameters: {weights_only} weights, {total} with biases and peepholes")
    print(f"best epoch {res.best_epoch}, validation RMSE {res.best_val_rmse:.6g}")


def cmd_evaluate(run, args):
    cfg = run.cfg
    data = load_data(cfg, run.seed)
    if args.checkpoint:
        w, meta = load_checkpoint(args.checkpoint)
        kind = TransformKind.parse(meta.get("transform", cfg.transform))
        if w.spec.d != data.series.d:
            raise DataError(f"checkpoint is for d={w.spec.d}, the data has d={data.series.d}")
        forecaster = ConvLstmForecaster(w.spec, w, kind)
    elif cfg.model.type == "convlstm":
        raise ConfigError("evaluating a ConvLSTM needs --checkpoint")
    else:
        forecaster = baseline_forecaster(cfg, data)
    rep = evaluate_series(forecaster, data.series, data.split)
    run.write(f"eval_{_slug(rep.model)}.csv", report_csv(rep))
    run.write("summary.csv", summary_csv([rep]))
    print(summary_csv([rep]), end="")


def _slug(name):
    return name.lower().replace(" ", "-")


def _ablate_cell(cfg, data, t, l):
    spec, kind, ws, res = fit_convlstm(cfg, data, kind=t, loss=l, tag=f"{t}/{l}")
    return validation_scores(spec, res.weights, ws.restrict(data.split.val))


def parallel_map(fn, arg_tuples, workers=1):
    """``[fn(*a) for a in arg_tuples]``, on a process pool when ``workers > 1``.

    Every cell carries its own seed, so the results do not depend on the
    number of workers or on scheduling order.
    """
    arg_tuples = list(arg_tuples)
    if workers <= 1 or len(arg_tuples) <= 1:
        return [fn(*a) for a in arg_tuples]
    with ProcessPoolExecutor(max_workers=min(workers, len(arg_tuples))) as pool:
        futures = [pool.submit(fn, *a) for a in arg_tuples]
        return [f.result() for f in futures]


def ablation_grid(cfg, data, transforms, losses, workers=1):
    """Validation (rmse, mae) for every (transform, loss) cell."""
    cells = [(t, l) for t in transforms for l in losses]
    scores = parallel_map(_ablate_cell, [(cfg, data, t, l) for t, l in cells], workers)
    return dict(zip(cells, scores))


def cmd_ablate(run, args):
    cfg = run.cfg
    data = load_data(cfg, run.seed)
    transforms = [TransformKind.parse(t).value for t in cfg.ablate.transforms]
    losses = [LossKind.parse(l).value for l in cfg.ablate.losses]
    grid = ablation_grid(cfg, data, transforms, losses, run.workers)
    best = min(grid, key=lambda k: grid[k][0])
    rows = [(t, l, _fmt(grid[t, l][0]), _fmt(grid[t, l][1]), int((t, l) == best))
            for t in transforms for l in losses]
    run.write("ablation_grid.csv", _csv(("transform", "loss", "val_rmse", "val_mae", "best"), rows))
    # one row per transform at its best loss, and one row per loss at the best transform
    t_rows = []
    for t in transforms:
        l = min(losses, key=lambda l: grid[t, l][0])
        t_rows.append((t, l, _fmt(grid[t, l][0]), _fmt(grid[t, l][1]), int(t == best[0])))
    run.write("ablation_transforms.csv", _csv(("transform", "loss", "val_rmse", "val_mae", "best"), t_rows))
    l_rows = [(l, best[0], _fmt(grid[best[0], l][0]), _fmt(grid[best[0], l][1]), int(l == best[1]))
              for l in losses]
    run.write("ablation_losses.csv", _csv(("loss", "transform", "val_rmse", "val_mae", "best"), l_rows))
    run.extra["best"] = {"transform": best[0], "loss": best[1], "val_rmse": grid[best][0]}
    print(f"best transform {best[0]} with loss {best[1]}: validation RMSE {grid[best][0]:.6g}")


def select_lag(make, data, lags):
    """Lag with the lowest validation RMSE; ties go to the shorter lag."""
    val_split = data.split._replace(test=data.split.val)
    scores = [(evaluate_series(make(n), data.series, val_split).mean_rmse, n) for n in lags]
    return min(scores)[1]


def _pq_grid(orders):
    return tuple((p, q) for p in orders for q in orders)


def compare_models(cfg, data, seed, log_tag=""):
    """Test-split reports for every model, each selected without the test split."""
    tr = data.split.train
    train_mats = data.series.matrices[tr.start:tr.stop]
    c = cfg.compare
    reports = []
    selection = {}

    def timed(label, build):
        t0 = time.perf_counter()
        f = build()
        fit_s = time.perf_counter() - t0
        rep = evaluate_series(f, data.series, data.split)
        rep.elapsed += fit_s
        log.info("%s%s test RMSE %.6g", log_tag, label, rep.mean_rmse)
        reports.append(rep)
        return f

    n_ma = select_lag(MovingAverage, data, c.ma_lags)
    n_ema = select_lag(ExponentialMovingAverage, data, c.ma_lags)
    selection.update(ma_lag=n_ma, ema_lag=n_ema)
    timed("MA", lambda: MovingAverage(n_ma))
    timed("EMA", lambda: ExponentialMovingAverage(n_ema))
    _, r, q = select_var_by_bic(train_mats, c.var_r, c.var_q)
    selection["mfa_var"] = {"r": r, "q": q}
    timed("MFA-VAR", lambda: MfaVar(train_mats, r, q))
    _, r, p, q = select_dcaw_by_bic(train_mats, c.dcaw_r, _pq_grid(c.dcaw_pq))
    selection["mfa_dcaw"] = {"r": r, "p": p, "q": q}
    timed("MFA-DCAW", lambda: MfaDcaw(train_mats, r, p, q))

    def build_net():
        spec, kind, _, res = fit_convlstm(cfg, data, seed=seed, tag=f"{log_tag}ConvLSTM")
        selection["convlstm"] = {"best_epoch": res.best_epoch, "best_val_rmse": res.best_val_rmse}
        return ConvLstmForecaster(spec, res.weights, kind)

    timed("ConvLSTM", build_net)
    if data.oracle is not None:
        timed("Oracle", lambda: data.oracle)
    return reports, selection


def _simulation_cell(cfg, inn, seed):
    """Test RMSE of the DCAW, the ConvLSTM and the oracle on one simulated path."""
    r, p, q = cfg.compare.table2_dcaw
    data = load_data(cfg, seed, innovation=inn)
    tr = data.split.train
    dcaw = MfaDcaw(data.series.matrices[tr.start:tr.stop], r, p, q)
    spec, kind, _, res = fit_convlstm(cfg, data, seed=seed, tag=f"{inn}/{seed}")
    out = {}
    for name, f in (("MFA-DCAW", dcaw), ("ConvLSTM", ConvLstmForecaster(spec, res.weights, kind)),
                    ("Oracle", data.oracle)):
        out[name] = evaluate_series(f, data.series, data.split).mean_rmse
    log.info("%s seed %d: %s", inn, seed, out)
    return out


def simulation_table(cfg, seeds, innovations, workers=1):
    """Per innovation and model, the test RMSE of every seed and their mean."""
    cells = [(inn, seed) for inn in innovations for seed in seeds]
    results = dict(zip(cells, parallel_map(_simulation_cell, [(cfg, i, s) for i, s in cells], workers)))
    rows = []
    for inn in innovations:
        for name in ("MFA-DCAW", "ConvLSTM", "Oracle"):
            vals = [results[inn, seed][name] for seed in seeds]
            rows.append((name, inn, *map(_fmt, vals), _fmt(np.mean(vals))))
    header = ("model", "innovation", *[f"seed_{s}" for s in seeds], "mean")
    return _csv(header, rows), rows


def cmd_compare(run, args):
    cfg = run.cfg
    data = load_data(cfg, run.seed)
    reports, selection = compare_models(cfg, data, run.seed)
    for rep in reports:
        run.write(f"eval_{_slug(rep.model)}.csv", report_csv(rep))
    run.write("comparison.csv", summary_csv(reports))
    run.write_json("selection.json", selection)
    print(summary_csv(reports), end="")
    if cfg.compare.table2_seeds and cfg.data.source == "simulate":
        run.seeds["table2"] = list(cfg.compare.table2_seeds)
        text, _ = simulation_table(cfg, cfg.compare.table2_seeds, cfg.compare.table2_innovations, run.workers)
        run.write("simulation_table.csv", text)
        print(text, end="")


def cmd_convert(run, args):
    series = read_matrix_csv(args.input, note=args.note)
    digest = write_dataset(run.path("dataset.rcov"), series)
    run.record("dataset.rcov", digest)
    print(f"converted {series.T} days of {series.d}x{series.d} matrices")


COMMANDS = {
    "simulate": (cmd_simulate, "simulate a CAW path and write a dataset"),
    "train": (cmd_train, "train the ConvLSTM"),
    "evaluate": (cmd_evaluate, "evaluate a checkpoint or a baseline on the test split"),
    "ablate": (cmd_ablate, "transform x loss ablation on the validation split"),
    "compare": (cmd_compare, "compare baselines and the ConvLSTM on the test split"),
    "convert": (cmd_convert, "convert per-day CSV matrices to a dataset file"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rcovnet", description="Realized covariance forecasting.")
    parser.add_argument("--version", action="version", version=f"rcovnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=name != "convert", help="experiment INI file")
        p.add_argument("--seed", type=int, help="override [experiment] seed")
        p.add_argument("--out", help="output directory (default: [experiment] out)")
        p.add_argument("--threads", type=int, default=None, help="worker processes for ablation and simulation-table cells")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config key; repeatable")
        p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
        if name == "evaluate":
            p.add_argument("--checkpoint", help="ConvLSTM checkpoint; omit to evaluate [model] type")
        if name == "convert":
            p.add_argument("input", help="CSV with header day,<assets> and d rows per day")
            p.add_argument("--note", default="", help="free-form note stored in the sidecar")
    return parser


def _overrides(args):
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    if args.seed is not None:
        out["experiment.seed"] = str(args.seed)
    return out


def _execute(args, argv):
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be positive")
    cfg = None
    if args.config:
        cfg = load_config(args.config, _overrides(args))
    elif args.set or args.seed is not None:
        raise ConfigError("--set and --seed need --config")
    out = args.out or (cfg.out if cfg is not None else None)
    if not out:
        raise ConfigError("no output directory: pass --out")
    run = Run(args.command, cfg, out, cfg.seed if cfg is not None else None, argv)
    run.workers = args.threads or 1
    COMMANDS[args.command][0](run, args)
    run.finish()


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        _execute(args, argv)
    except (ConfigError, InvalidDegreesOfFreedom) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RcovError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
