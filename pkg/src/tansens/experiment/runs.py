"""Run drivers behind the ``train``, ``correlate`` and ``bound`` subcommands."""

import logging
import os

import numpy as np

from ..bound import assemble_bound, bound_vs_gap, dump_report, dump_report_csv, estimate_H, estimate_constants
from ..grad_engine import get_loss
from ..network import forward_batch, init_network, load_checkpoint, save_checkpoint
from ..sensitivity import sample_norms
from ..training import Schedule, atomic_write_text, load_record, make_optimizer, save_record, train
from .config import ConfigError, load_config, load_datasets, network_dims
from .correlate import CorrelationRow, rows_to_csv, summarize, summary_text
from .plot import emit_plot

log = logging.getLogger(__name__)

CONFIG_NAME = "resolved_config.txt"


def _setup(cfg):
    train_set, test_set = load_datasets(cfg)
    dims = network_dims(cfg, train_set)
    if train_set.n_in != dims[0]:
        raise ConfigError("network input width does not match the data")
    net0 = init_network(dims, cfg.biasless, cfg.seed, cfg.init_scale)
    spe = cfg.steps_per_epoch(len(train_set))
    T = cfg.epochs * spe
    schedule = None
    if T:
        schedule = Schedule.inverse_time(cfg.lr, cfg.lr_decay, T) if cfg.lr_decay else Schedule.constant(cfg.lr, T)
    batch = cfg.batch_size if cfg.batch_size > 0 else None
    opt = make_optimizer(cfg.optimizer, batch_size=batch or len(train_set), seed=cfg.train_seed,
                         beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    return train_set, test_set, net0, schedule, opt, cfg.stride(len(train_set))


def _prepare_out(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    atomic_write_text(os.path.join(cfg.out_dir, CONFIG_NAME), cfg.to_text())


def run_train(cfg):
    train_set, test_set, net0, schedule, opt, stride = _setup(cfg)
    _prepare_out(cfg)
    classes = cfg.resolved_classes(net0.n_out)
    log.info("training %s for %d steps (%s)", net0.dims, schedule.T if schedule else 0, opt.name)
    rec = train(net0, train_set, schedule, opt, stride, test_set, cfg.loss, track_cts=cfg.track_cts,
                cts_outputs=classes, check_descent=cfg.check_descent)
    out = cfg.out_dir
    rec.export_csv(os.path.join(out, "trajectory.csv"), classes)
    save_checkpoint(os.path.join(out, "checkpoint_init.ckpt"), net0)
    save_checkpoint(os.path.join(out, "checkpoint.ckpt"), rec.net_at(len(rec.steps) - 1))
    save_record(os.path.join(out, "record.npz"), rec)
    return rec


def run_correlate(cfg, svg=None):
    train_set, test_set, net0, schedule, opt, stride = _setup(cfg)
    _prepare_out(cfg)
    classes = cfg.resolved_classes(net0.n_out)
    total = schedule.T if schedule else 0
    if total // stride + 1 < 3:
        raise ConfigError("correlate needs at least 3 checkpoints")
    loss = get_loss(cfg.loss)
    Ytr = train_set.targets(net0.n_out)
    Yte = test_set.targets(net0.n_out)
    rows = []

    def on_checkpoint(t, net):
        tr = np.mean(loss.value(forward_batch(net, train_set.inputs)[0], Ytr), axis=0)
        te = np.mean(loss.value(forward_batch(net, test_set.inputs)[0], Yte), axis=0)
        norms = np.mean(sample_norms(net, test_set, classes, cfg.sensitivity_method, cfg.probes, cfg.seed), axis=0)
        rows.append(CorrelationRow(t, {c: float(tr[c]) for c in classes}, {c: float(te[c]) for c in classes},
                                   {c: float(v) for c, v in zip(classes, norms)}))
        log.info("checkpoint t=%d mean gap %.4g", t, rows[-1].mean_gap)

    train(net0, train_set, schedule, opt, stride, None, cfg.loss, track_cts=False,
          check_descent=cfg.check_descent, on_checkpoint=on_checkpoint)
    csv_path = os.path.join(cfg.out_dir, "correlation.csv")
    atomic_write_text(csv_path, rows_to_csv(rows, classes))
    summary = summarize(rows, classes)
    atomic_write_text(os.path.join(cfg.out_dir, "summary.csv"), summary_text(summary))
    if svg or cfg.plot:
        emit_plot(csv_path, svg or os.path.join(cfg.out_dir, "correlation.svg"))
    return rows, summary


def run_bound(run_dir, overrides=()):
    """Assemble bound reports for a finished ``train`` run directory."""
    cfg_path = os.path.join(run_dir, CONFIG_NAME)
    cfg = load_config(cfg_path, overrides)
    for name in ("record.npz", "checkpoint.ckpt", "checkpoint_init.ckpt"):
        if not os.path.exists(os.path.join(run_dir, name)):
            raise ConfigError(f"missing run artifact: {os.path.join(run_dir, name)}")
    rec = load_record(os.path.join(run_dir, "record.npz"))
    net0 = load_checkpoint(os.path.join(run_dir, "checkpoint_init.ckpt"))
    netT = load_checkpoint(os.path.join(run_dir, "checkpoint.ckpt"))
    train_set, test_set = load_datasets(cfg)
    classes = cfg.resolved_classes(net0.n_out)
    family = [(net0, rec.net_at(i)) for i in range(len(rec.steps))]
    reports = []
    for c in classes:
        consts = estimate_constants(net0, test_set, rec, cfg.loss, c, train=train_set)
        H = estimate_H(family, test_set, c, cfg.rademacher_draws, cfg.seed)
        flags = list(rec.flags)
        rep = assemble_bound(consts, H, len(test_set), cfg.delta, cfg.log_base, flags)
        bound_vs_gap(rep, netT, train_set, test_set, c, cfg.loss)
        atomic_write_text(os.path.join(run_dir, f"bound_report_{c}.txt"), dump_report(rep))
        reports.append(rep)
    csv_lines = [dump_report_csv(r).splitlines() for r in reports]
    text = csv_lines[0][0] + "\n" + "".join(lines[1] + "\n" for lines in csv_lines)
    atomic_write_text(os.path.join(run_dir, "bound_report.csv"), text)
    return reports
