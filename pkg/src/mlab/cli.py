"""Command-line entry point: ``mlab <subcommand> ...``.

Exit codes: 0 success, 1 usage or validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import backend, nn
from .cka import cka, cka_profile
from .config import load_config
from .degrade import DegradationSpec, degradation_report
from .errors import MlabError, ValidationError
from .formats import load_actmat, load_checkpoint, save_checkpoint
from .pipelines import derive_seed, misalignment_correlation, run_pipeline
from .report import export_metrics, load_record, save_record, scatter_rows
from .tasks import generate

log = logging.getLogger("mlab")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _on_off(value):
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on or off, got {value!r}")
    return value == "on"


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="override the run seed(s)")
    p.add_argument("--out", default=None, help="output file or directory")
    p.add_argument("--preprocess", type=_on_off, default=None, metavar="on|off",
                   help="standardize activations before CKA")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="mlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("train", help="train a model on the config's task A")
    p.add_argument("config")
    _common(p)

    p = sub.add_parser("degrade", help="quantize or prune a checkpoint")
    p.add_argument("checkpoint")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--bits", type=int, help="symmetric uniform quantization bit width")
    g.add_argument("--prune", type=float, metavar="FRACTION", help="fraction of hidden units to zero")
    p.add_argument("--layers", type=int, nargs="+", default=None, help="restrict to these layer indices")
    p.add_argument("--config", default=None, help="report accuracy and CKA on this config's tasks")
    _common(p)

    p = sub.add_parser("recover", help="distill a degraded checkpoint against a teacher")
    p.add_argument("degraded")
    p.add_argument("teacher")
    p.add_argument("config")
    _common(p)

    p = sub.add_parser("cka", help="CKA between two .actmat files or two checkpoints")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--config", default=None, help="probe config (required for checkpoints)")
    p.add_argument("--csv", default=None, help="write the per-layer profile to this CSV")
    _common(p)

    p = sub.add_parser("pipeline", help="run a scenario config end to end")
    p.add_argument("config")
    _common(p)

    p = sub.add_parser("report", help="pooled misalignment/accuracy correlation over records")
    p.add_argument("records", nargs="+", help="record JSON files or directories holding them")
    p.add_argument("--reference", default=None)
    p.add_argument("--task", default=None)
    _common(p)
    return parser


def _config(args):
    cfg = load_config(args.config)
    seeds = None if args.seed is None else [args.seed]
    return cfg.with_overrides(seeds=seeds, output_dir=args.out, preprocess=args.preprocess)


def _task_data(cfg):
    return generate(cfg.task_specs(), run_seed=cfg.seeds[0])


def _default_out(args, fallback: Path) -> Path:
    out = Path(args.out) if args.out else fallback
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args):
    cfg = load_config(args.config)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    data = generate(cfg.task_specs(), run_seed=seed)[cfg.task_a.name]
    start = nn.init(cfg.architecture, derive_seed(seed, "init"))
    t = cfg.training
    cp = nn.train(start, data.train, "sft", epochs=t.epochs, lr=t.lr, seed=derive_seed(seed, "train"),
                  batch_size=t.batch_size, betas=t.betas, eps=t.eps, stage_label="trained")
    out = _default_out(args, Path(cfg.output_dir) / "model.ckpt")
    save_checkpoint(cp, out)
    print(f"accuracy[{cfg.task_a.name}] = {nn.evaluate(cp, data.eval):.12g}")
    print(f"wrote {out}")


def cmd_degrade(args):
    cp = load_checkpoint(args.checkpoint)
    scope = "all_hidden_layers" if args.layers is None else "layer_list"
    if args.bits is not None:
        spec = DegradationSpec("quantize", bits=args.bits, scope=scope, layers=args.layers or ())
    else:
        spec = DegradationSpec("prune", fraction=args.prune, scope=scope, layers=args.layers or ())
    degraded = spec.apply(cp)
    src = Path(args.checkpoint)
    out = _default_out(args, src.with_name(f"{src.stem}_{spec.describe()}.ckpt"))
    save_checkpoint(degraded, out)
    if args.config:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_overrides(seeds=[args.seed])
        evals = {name: d.eval for name, d in _task_data(cfg).items()}
        pre = cfg.preprocess if args.preprocess is None else args.preprocess
        rep = degradation_report(cp, degraded, evals, preprocess=pre)
        for task, delta in rep.accuracy_delta.items():
            print(f"{task}: accuracy_delta = {delta:.12g}  cka = {rep.cka[task].cka:.12g}")
    print(f"wrote {out}")


def cmd_recover(args):
    degraded = load_checkpoint(args.degraded)
    teacher = load_checkpoint(args.teacher)
    cfg = _config(args)
    seed = cfg.seeds[0]
    data = _task_data(cfg)[cfg.task_a.name]
    d, t = cfg.distill, cfg.training
    objective = nn.DistillConfig(teacher, temperature=d.temperature, mix=d.mix)
    cp = nn.train(degraded, data.train, objective, epochs=t.recovery_epochs, lr=t.lr,
                  seed=derive_seed(seed, "recovered"), batch_size=t.batch_size, betas=t.betas,
                  eps=t.eps, stage_label="recovered")
    src = Path(args.degraded)
    out = _default_out(args, src.with_name(f"{src.stem}_recovered.ckpt"))
    save_checkpoint(cp, out)
    print(f"accuracy[{cfg.task_a.name}]: degraded = {nn.evaluate(degraded, data.eval):.12g}"
          f"  recovered = {nn.evaluate(cp, data.eval):.12g}")
    print(f"wrote {out}")


def _score_line(label, score):
    return f"{label}: cka = {round(score.cka, 12)!r}"


def cmd_cka(args):
    suffixes = {Path(args.a).suffix, Path(args.b).suffix}
    rows = []
    if suffixes == {".actmat"}:
        # raw matrices are compared as given unless asked otherwise
        pre = bool(args.preprocess)
        score = cka(load_actmat(args.a), load_actmat(args.b), preprocess=pre)
        print(round(score.cka, 12))
        rows.append(("", score))
    else:
        if args.config is None:
            raise UsageError("cka: --config is required to compare checkpoints")
        cfg = load_config(args.config)
        seed = cfg.seeds[0] if args.seed is None else args.seed
        pre = cfg.preprocess if args.preprocess is None else args.preprocess
        probe = generate(cfg.task_specs(), run_seed=seed)[cfg.task_a.name].eval.inputs
        profile = cka_profile(load_checkpoint(args.a), load_checkpoint(args.b), probe, preprocess=pre)
        for layer, score in profile:
            print(_score_line(f"layer {layer}", score))
            rows.append((layer, score))
        print(round(profile[-1][1].cka, 12))
    if args.csv:
        lines = ["layer,cka,hsic_st,hsic_ss,hsic_tt"]
        lines += [f"{layer},{s.cka:.12g},{s.hsic_st:.12g},{s.hsic_ss:.12g},{s.hsic_tt:.12g}" for layer, s in rows]
        Path(args.csv).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_pipeline(args):
    cfg = _config(args)
    out = Path(cfg.output_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.dump(), encoding="utf-8")
    log.info("backend: %s", backend.DEFAULT)
    for record in run_pipeline(cfg):
        tag = f"seed{record.seed}"
        save_record(record, out / f"record_{tag}.json")
        export_metrics(record, out / f"metrics_{tag}.csv")
        for label, cp in record.checkpoints.items():
            save_checkpoint(cp, out / "checkpoints" / f"{tag}_{label}.ckpt")
        summary = "  ".join(
            f"{s.label}:{s.accuracy[record.primary_task]:.3f}/"
            f"{s.cka_value(record.primary_reference, record.primary_task):.4f}"
            for s in record.stages
        )
        print(f"{cfg.scenario} {tag} (acc/cka) {summary}")
    print(f"wrote {out}")


def _record_paths(items):
    paths = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("record_*.json")))
        elif p.is_file():
            paths.append(p)
        else:
            raise ValidationError(f"no such record file or directory: {p}")
    if not paths:
        raise ValidationError("no record files found")
    return paths


def cmd_report(args):
    records = [load_record(p) for p in _record_paths(args.records)]
    rho = misalignment_correlation(records, reference=args.reference, task=args.task)
    print(f"records = {len(records)}")
    print(f"spearman(misalignment, accuracy) = {rho:.12g}")
    if args.out:
        lines = ["seed,misalignment,accuracy_delta"]
        for r in records:
            lines += [f"{r.seed},{m},{a}" for m, a in scatter_rows(r)]
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")


COMMANDS = {
    "train": cmd_train,
    "degrade": cmd_degrade,
    "recover": cmd_recover,
    "cka": cmd_cka,
    "pipeline": cmd_pipeline,
    "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore", under="ignore")
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (MlabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
