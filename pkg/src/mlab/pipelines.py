"""Degradation -> recovery scenarios and their metrics records.

Each runner produces a ``RunRecord`` holding one ``StageMetrics`` per stage:
accuracy on every configured task's eval set, plus last-hidden-layer CKA
against each reference checkpoint on every task's probe set. The probe set
of a task is its eval inputs, so all stages of a run see identical rows.

Recovery stages always start from the degraded checkpoint, never from a
fresh initialization.

Scenarios
---------
forgetting
    base -> expert on A (distilled against base) -> plain SFT on B
    -> recovery distillation on A data with the base or expert as teacher.
compression
    train on A -> quantize or prune -> distill the degraded copy against
    the original on A data.
two_stage
    wide teacher trained on B, narrow student trained on A -> off-policy
    distillation of the student from the teacher on a small B transfer set
    -> self-distillation on A against the student's own stage-0 copy.
    A control arm replaces the teacher with plain SFT on the same transfer
    set and then applies the same recovery stage.
"""

from __future__ import annotations

import logging
import time
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import nn
from .cka import ActivationMatrix, centered_kernel, cka_from_kernels
from .config import RunConfig
from .errors import DivergedTraining, InsufficientData, ValidationError
from .tasks import generate

logger = logging.getLogger(__name__)

ROLES = ("base", "expert", "degraded", "recovered", "control")


def derive_seed(seed: int, tag: str) -> int:
    """Independent 64-bit sub-seed for one purpose within a run."""
    ss = np.random.SeedSequence([seed, zlib.crc32(tag.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class StageMetrics:
    label: str
    role: str
    accuracy: dict = field(default_factory=dict)  # task -> accuracy
    cka: dict = field(default_factory=dict)  # (reference label, probe task) -> AlignmentScore

    def cka_value(self, reference: str, task: str) -> float:
        return self.cka[(reference, task)].cka


@dataclass(frozen=True, eq=False)
class PipelineStage:
    label: str
    checkpoint: nn.Checkpoint
    role: str
    parent: str | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"unknown stage role {self.role!r}")


@dataclass
class RunRecord:
    scenario: str
    seed: int
    config: dict
    primary_reference: str
    primary_task: str
    stages: list = field(default_factory=list)  # StageMetrics, in execution order
    wall_clock: dict = field(default_factory=dict)  # stage label -> seconds
    lineage: dict = field(default_factory=dict)  # stage label -> parent label
    checkpoints: dict = field(default_factory=dict, repr=False)  # label -> Checkpoint, not persisted

    def stage(self, label: str) -> StageMetrics:
        for s in self.stages:
            if s.label == label:
                return s
        raise KeyError(label)

    @property
    def labels(self):
        return [s.label for s in self.stages]


class _Run:
    """Bookkeeping shared by the scenario runners."""

    def __init__(self, cfg: RunConfig, seed: int, primary_reference: str):
        self.cfg = cfg
        self.seed = seed
        self.data = generate(cfg.task_specs(), run_seed=seed)
        self.task_names = [t.name for t in cfg.task_specs()]
        self.stages = {}
        self.kernels = {}
        self.recorded = []
        self.references = []
        self.record = RunRecord(
            scenario=cfg.scenario,
            seed=seed,
            config=cfg.with_overrides(seeds=[seed]).to_dict(),
            primary_reference=primary_reference,
            primary_task=cfg.task_a.name,
        )

    def data_of(self, role: str):
        return self.data[self.cfg.tasks[role].name]

    def distill(self, teacher, mix=None):
        d = self.cfg.distill
        return nn.DistillConfig(teacher, temperature=d.temperature, mix=d.mix if mix is None else mix)

    def train(self, label, start, dataset, objective, epochs):
        t = self.cfg.training
        t0 = time.perf_counter()
        try:
            cp = nn.train(start, dataset, objective, epochs=epochs, lr=t.lr,
                          seed=derive_seed(self.seed, label), batch_size=t.batch_size,
                          betas=t.betas, eps=t.eps, stage_label=label)
        except DivergedTraining as exc:
            raise DivergedTraining(str(exc), stage=label) from exc
        self.record.wall_clock[label] = time.perf_counter() - t0
        return cp

    def add(self, label, cp, role, parent=None, record=True, reference=False):
        if label in self.stages:
            raise ValidationError(f"duplicate stage label {label!r}")
        self.stages[label] = PipelineStage(label, cp, role, parent)
        self.record.checkpoints[label] = cp
        self.record.lineage[label] = parent
        self.record.wall_clock.setdefault(label, 0.0)
        if reference:
            self.references.append(label)
        if record:
            self.recorded.append(label)
        return cp

    def finish(self) -> RunRecord:
        self.record.stages = [self.metrics(label) for label in self.recorded]
        return self.record

    def kernel(self, label, task):
        """Centered last-hidden-layer kernel of a stage on a task's probe inputs, cached."""
        key = (label, task)
        if key not in self.kernels:
            _, hidden = nn.forward(self.stages[label].checkpoint, self.data[task].eval.inputs)
            self.kernels[key] = centered_kernel(ActivationMatrix(hidden[-1], "last_hidden"),
                                                self.cfg.preprocess)
        return self.kernels[key]

    def metrics(self, label) -> StageMetrics:
        stage = self.stages[label]
        m = StageMetrics(label=label, role=stage.role)
        for name in self.task_names:
            m.accuracy[name] = nn.evaluate(stage.checkpoint, self.data[name].eval)
        for ref in self.references:
            for name in self.task_names:
                m.cka[(ref, name)] = cka_from_kernels(self.kernel(label, name), self.kernel(ref, name))
        return m


def run_forgetting(cfg: RunConfig, seed: int | None = None) -> RunRecord:
    seed = cfg.seeds[0] if seed is None else seed
    run = _Run(cfg, seed, primary_reference="expert")
    a, b = run.data_of("a"), run.data_of("b")
    t = cfg.training

    base = nn.init(cfg.architecture, derive_seed(seed, "init"), stage_label="base")
    run.add("base", base, "base", record=False)
    expert = run.train("expert", base, a.train, run.distill(base), t.epochs)
    run.add("expert", expert, "expert", parent="base", reference=True)
    sft = run.train("sft", expert, b.train, "sft", t.sft_epochs)
    run.add("sft", sft, "degraded", parent="expert")
    teacher = base if cfg.teacher_role == "base" else expert
    recovered = run.train("recovered", sft, a.train, run.distill(teacher), t.recovery_epochs)
    run.add("recovered", recovered, "recovered", parent="sft")
    return run.finish()


def run_compression(cfg: RunConfig, seed: int | None = None) -> RunRecord:
    seed = cfg.seeds[0] if seed is None else seed
    run = _Run(cfg, seed, primary_reference="original")
    a = run.data_of("a")
    t = cfg.training

    start = nn.init(cfg.architecture, derive_seed(seed, "init"), stage_label="init")
    theta = run.train("original", start, a.train, "sft", t.epochs)
    run.add("original", theta, "base", reference=True)
    theta1 = cfg.degradation.apply(theta).replace(stage_label="degraded")
    run.add("degraded", theta1, "degraded", parent="original")
    theta2 = run.train("recovered", theta1, a.train, run.distill(theta), t.recovery_epochs)
    run.add("recovered", theta2, "recovered", parent="degraded")
    return run.finish()


def run_two_stage(cfg: RunConfig, seed: int | None = None) -> RunRecord:
    seed = cfg.seeds[0] if seed is None else seed
    run = _Run(cfg, seed, primary_reference="student")
    a, b = run.data_of("a"), run.data_of("b")
    t = cfg.training
    transfer = b.train.subset(cfg.transfer_size)

    student_init = nn.init(cfg.architecture, derive_seed(seed, "student_init"), stage_label="init")
    student = run.train("student", student_init, a.train, "sft", t.epochs)
    if cfg.teacher_training == "mirror_student":
        teacher = student.replace(stage_label="teacher")
    else:
        teacher_init = nn.init(cfg.teacher_architecture, derive_seed(seed, "teacher_init"))
        teacher = run.train("teacher", teacher_init, b.train, "sft", t.epochs)
    run.add("teacher", teacher, "expert", reference=True)
    run.add("student", student, "base", reference=True)
    off = run.train("off_policy", student, transfer,
                    run.distill(teacher, mix=cfg.distill.off_policy_mix), t.transfer_epochs)
    run.add("off_policy", off, "degraded", parent="student")
    recovered = run.train("recovered", off, a.train, run.distill(student), t.recovery_epochs)
    run.add("recovered", recovered, "recovered", parent="off_policy")
    # control arm: same schedule with hard labels in place of the teacher
    direct = run.train("no_teacher", student, transfer, "sft", t.transfer_epochs)
    run.add("no_teacher", direct, "control", parent="student")
    direct_rec = run.train("no_teacher_recovered", direct, a.train, run.distill(student), t.recovery_epochs)
    run.add("no_teacher_recovered", direct_rec, "control", parent="no_teacher")
    return run.finish()


RUNNERS = {
    "forgetting": run_forgetting,
    "compression": run_compression,
    "two_stage": run_two_stage,
}


def run_pipeline(cfg: RunConfig, seeds=None) -> list:
    """Run ``cfg.scenario`` once per seed; records come back in seed order."""
    runner = RUNNERS[cfg.scenario]
    out = []
    for seed in (cfg.seeds if seeds is None else seeds):
        logger.info("running %s seed=%d", cfg.scenario, seed)
        out.append(runner(cfg, seed))
    return out


def misalignment_points(records, reference=None, task=None):
    """``(1 - CKA to reference, accuracy on task)`` for every stage of every record."""
    xs, ys = [], []
    for rec in records:
        ref = rec.primary_reference if reference is None else reference
        name = rec.primary_task if task is None else task
        for s in rec.stages:
            if (ref, name) in s.cka and name in s.accuracy:
                xs.append(1.0 - s.cka_value(ref, name))
                ys.append(s.accuracy[name])
    return np.array(xs), np.array(ys)


def misalignment_correlation(records, reference=None, task=None) -> float:
    """Spearman rank correlation between misalignment and accuracy, pooled over runs."""
    records = list(records)
    if len(records) < 2:
        raise InsufficientData(f"need stages from >= 2 runs, got {len(records)}")
    x, y = misalignment_points(records, reference, task)
    if len(x) < 3:
        raise InsufficientData(f"need >= 3 (stage, metrics) points, got {len(x)}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise InsufficientData("all points share a value; rank correlation is undefined")
    rho = stats.spearmanr(x, y).statistic
    return float(rho)

