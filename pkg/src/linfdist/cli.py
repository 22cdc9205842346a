"""Command-line entry points: train, eval, certify, attack, selftest, fetch.

Every RunConfig field is exposed as a flag (underscores become dashes);
values merge as defaults < --config file < flags.  Each run prints and
writes a resolved-config echo next to its primary output so results are
attributable to exact settings.
"""

import argparse
import csv
import dataclasses
import os
import sys
import urllib.request

import numpy as np

from .attack import AttackConfig, evaluate, pgd_attack
from .certify import certify_batch
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, format_resolved, parse_config, write_resolved
from .data import AugmentPolicy, load_dataset, write_metrics
from .errors import ConfigError
from .network import build_network
from .optim import Adam
from .schedules import TrainPlan, eps_schedule, lr_schedule
from .selftest import run_selftest
from .training import fit


def _add_config_flags(sub):
    sub.add_argument("--config", default=None, help="key=value config file")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type is bool:
            sub.add_argument(flag, dest=f.name, default=argparse.SUPPRESS,
                             action=argparse.BooleanOptionalAction)
        else:
            sub.add_argument(flag, dest=f.name, default=argparse.SUPPRESS,
                             type=f.type)


def _build_parser():
    ap = argparse.ArgumentParser(prog="linfdist",
                                 description="train / evaluate / attack / "
                                             "certify distance networks")
    subs = ap.add_subparsers(dest="command", required=True)
    for cmd in ("train", "eval", "certify", "attack", "selftest", "fetch"):
        sub = subs.add_parser(cmd)
        _add_config_flags(sub)
    return ap


def _config_from_args(args):
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config")}
    return parse_config(args.config, overrides)


def _plan(cfg):
    return TrainPlan(e1=cfg.e1, e2=cfg.e2, e3=cfg.e3, p_start=cfg.p_start,
                     p_end=cfg.p_end, lr0=cfg.lr, eps_train=cfg.eps_train,
                     kappa=cfg.kappa, hinge_t=cfg.hinge_t,
                     weight_decay=cfg.weight_decay, batch_size=cfg.batch_size,
                     seed=cfg.seed, hinge_variant=cfg.hinge_variant)


def _attack_config(cfg):
    return AttackConfig(eps=cfg.eps, steps=cfg.attack_steps,
                        step_size=cfg.attack_step_size or None,
                        random_start=cfg.attack_random_start,
                        restarts=cfg.attack_restarts, loss=cfg.attack_loss)


def _eval_subset(test, size):
    if size and size < len(test):
        return test.images[:size], test.labels[:size]
    return test.images, test.labels


def cmd_train(cfg):
    train = load_dataset(cfg.dataset, cfg.data_dir, "train")
    test = load_dataset(cfg.dataset, cfg.data_dir, "test")
    n_classes = max(train.n_classes, test.n_classes)
    input_shape = train.images.shape[1:]
    net = build_network(cfg.arch, input_shape, n_classes, seed=cfg.seed,
                        identity=cfg.identity_init, c0=cfg.c0,
                        momentum=cfg.momentum, pad_value=cfg.conv_pad_value)
    plan = _plan(cfg)
    policy = AugmentPolicy(crop_pad=cfg.augment_pad, hflip=cfg.augment_flip)
    Xe, ye = _eval_subset(test, cfg.eval_size)
    atk = _attack_config(cfg)
    if os.path.exists(cfg.metrics):
        os.remove(cfg.metrics)

    def on_epoch(epoch, net_, adam_, stats):
        report = evaluate(net_, Xe, ye, cfg.eps, cfg=atk, seed=cfg.seed)
        row = dict(epoch=epoch, p=stats["p"], eps_train=stats["eps"],
                   lr=stats["lr"], train_loss=stats["loss"],
                   train_acc=stats["acc"], test_acc=report.clean_acc,
                   pgd_acc=report.robust_acc,
                   certified_acc=report.certified_acc)
        write_metrics(cfg.metrics, [row])
        save_checkpoint(net_, cfg.checkpoint, train_state={
            "epoch": epoch + 1, "adam_t": adam_.t,
            "adam_arrays": adam_.state_arrays()})
        print(f"epoch {epoch:3d}  p {stats['p']:9.2f}  lr {stats['lr']:.5f}  "
              f"loss {stats['loss']:.4f}  train {stats['acc']:.4f}  "
              f"test {report.clean_acc:.4f}  pgd {report.robust_acc:.4f}  "
              f"cert {report.certified_acc:.4f}")

    loss_kind = cfg.loss
    fit(net, train.images, train.labels, plan, loss_kind=loss_kind,
        augment_policy=policy, epoch_callback=on_epoch)
    if plan.total_epochs == 0:
        save_checkpoint(net, cfg.checkpoint,
                        train_state={"epoch": 0, "adam_t": 0, "adam_arrays": []})
    echo = write_resolved(cfg, cfg.metrics)
    print(f"checkpoint: {cfg.checkpoint}\nmetrics: {cfg.metrics}\nconfig echo: {echo}")
    return 0


def _load_model_and_test(cfg):
    net, _ = load_checkpoint(cfg.checkpoint)
    test = load_dataset(cfg.dataset, cfg.data_dir, "test")
    Xe, ye = _eval_subset(test, cfg.eval_size)
    return net, Xe, ye


def _write_report(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def cmd_eval(cfg):
    net, X, y = _load_model_and_test(cfg)
    report = evaluate(net, X, y, cfg.eps, cfg=_attack_config(cfg), seed=cfg.seed)
    print(report.summary())
    _write_report(cfg.report,
                  ("label", "prediction", "attacked_prediction", "certified",
                   "radius_lower_bound"), list(report.rows()))
    write_resolved(cfg, cfg.report)
    print(f"report: {cfg.report}")
    return 0


def cmd_certify(cfg):
    net, X, y = _load_model_and_test(cfg)
    certified, radii = certify_batch(net, X, y, cfg.eps)
    acc = float(certified.mean())
    print(f"certified accuracy at eps={cfg.eps:g}: {acc:.4f}  (n={len(y)})")
    rows = [(int(y[i]), bool(certified[i]), f"{radii[i]:.6g}")
            for i in range(len(y))]
    _write_report(cfg.report, ("label", "certified", "radius_lower_bound"), rows)
    write_resolved(cfg, cfg.report)
    print(f"report: {cfg.report}")
    return 0


def cmd_attack(cfg):
    net, X, y = _load_model_and_test(cfg)
    atk = _attack_config(cfg)
    adv = pgd_attack(net, X, y, atk, seed=cfg.seed)
    preds = net.logits(X).argmax(axis=1)
    adv_preds = net.logits(adv).argmax(axis=1)
    robust = float(((preds == y) & (adv_preds == y)).mean())
    print(f"pgd-{atk.steps} robust accuracy at eps={cfg.eps:g}: {robust:.4f} "
          f"(n={len(y)})")
    rows = [(int(y[i]), int(preds[i]), int(adv_preds[i])) for i in range(len(y))]
    _write_report(cfg.report, ("label", "prediction", "attacked_prediction"), rows)
    write_resolved(cfg, cfg.report)
    print(f"report: {cfg.report}")
    return 0


def cmd_selftest(cfg):
    print(format_resolved(cfg), end="")
    return 0 if run_selftest() else 1


_MIRRORS = {
    "mnist": ("https://storage.googleapis.com/cvdf-datasets/mnist/",
              ["train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz",
               "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"]),
    "fashion": ("http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
                ["train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz",
                 "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"]),
}


def cmd_fetch(cfg):
    if cfg.dataset not in _MIRRORS:
        print(f"no fetch mirror configured for {cfg.dataset!r}", file=sys.stderr)
        return 1
    base, files = _MIRRORS[cfg.dataset]
    dest = os.path.join(cfg.data_dir, cfg.dataset)
    os.makedirs(dest, exist_ok=True)
    for fname in files:
        out = os.path.join(dest, fname)
        if os.path.exists(out):
            print(f"have {out}")
            continue
        print(f"fetching {base + fname}")
        urllib.request.urlretrieve(base + fname, out)
    return 0


_COMMANDS = {"train": cmd_train, "eval": cmd_eval, "certify": cmd_certify,
             "attack": cmd_attack, "selftest": cmd_selftest, "fetch": cmd_fetch}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](cfg)
    except FileNotFoundError as e:
        print(f"error [{args.command}]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
