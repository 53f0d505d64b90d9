"""Synthetic classification tasks that stand in for the two task domains.

``gaussian_blobs`` draws isotropic Gaussian clusters, one per class.
``label_permuted`` reuses another task's inputs verbatim and relabels them
through a permutation, which gives maximal interference between the two
tasks because they share the input distribution.

Train and eval sets use distinct sub-seeds, so they never share draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .nn import Batch

GENERATORS = ("gaussian_blobs", "label_permuted")

_TRAIN, _EVAL = 0, 1


@dataclass(frozen=True)
class TaskSpec:
    name: str
    generator: str = "gaussian_blobs"
    centers: tuple = ()
    spread: float = 0.6
    base_task: str | None = None
    permutation: tuple = ()
    train_size: int = 512
    eval_size: int = 512
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(tuple(float(v) for v in c) for c in self.centers))
        object.__setattr__(self, "permutation", tuple(int(p) for p in self.permutation))
        if self.generator not in GENERATORS:
            raise ValidationError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        if self.train_size < 1 or self.eval_size < 1:
            raise ValidationError(f"task {self.name!r}: train_size and eval_size must be positive")
        if self.generator == "gaussian_blobs":
            if len(self.centers) < 2:
                raise ValidationError(f"task {self.name!r}: need >= 2 centers (one per class)")
            if len({len(c) for c in self.centers}) != 1:
                raise ValidationError(f"task {self.name!r}: centers must share a dimension")
            if not self.spread > 0:
                raise ValidationError(f"task {self.name!r}: spread must be > 0")
        else:
            if not self.base_task:
                raise ValidationError(f"task {self.name!r}: label_permuted needs base_task")
            if sorted(self.permutation) != list(range(len(self.permutation))) or len(self.permutation) < 2:
                raise ValidationError(f"task {self.name!r}: permutation must be a permutation of 0..C-1")

    @property
    def classes(self) -> int:
        return len(self.centers) if self.generator == "gaussian_blobs" else len(self.permutation)


@dataclass(frozen=True, eq=False)
class TaskData:
    spec: TaskSpec
    train: Batch
    eval: Batch

    @property
    def name(self) -> str:
        return self.spec.name


def _blobs(spec: TaskSpec, n: int, rng: np.random.Generator) -> Batch:
    centers = np.asarray(spec.centers)
    labels = rng.integers(0, len(centers), size=n)
    inputs = centers[labels] + spec.spread * rng.standard_normal((n, centers.shape[1]))
    return Batch(inputs, labels)


def _permuted(batch: Batch, permutation) -> Batch:
    perm = np.asarray(permutation)
    if batch.labels.max() >= len(perm):
        raise ValidationError("permutation is shorter than the base task's class count")
    return Batch(batch.inputs, perm[batch.labels])


def generate(specs, run_seed: int = 0) -> dict:
    """Materialize ``{name: TaskData}`` for a set of task specs.

    ``run_seed`` is mixed into every task's own seed so that a multi-seed
    batch draws fresh data per run.
    """
    by_name = {s.name: s for s in specs}
    if len(by_name) != len(specs):
        raise ValidationError("task names must be unique")
    out = {}

    def build(name, trail=()):
        if name in out:
            return out[name]
        if name in trail:
            raise ValidationError(f"cyclic base_task chain through {name!r}")
        spec = by_name.get(name)
        if spec is None:
            raise ValidationError(f"unknown task {name!r}")
        if spec.generator == "gaussian_blobs":
            train = _blobs(spec, spec.train_size, np.random.default_rng([run_seed, spec.seed, _TRAIN]))
            ev = _blobs(spec, spec.eval_size, np.random.default_rng([run_seed, spec.seed, _EVAL]))
        else:
            base = build(spec.base_task, trail + (name,))
            train = _permuted(base.train.subset(spec.train_size), spec.permutation)
            ev = _permuted(base.eval.subset(spec.eval_size), spec.permutation)
        out[name] = TaskData(spec, train, ev)
        return out[name]

    for s in specs:
        build(s.name)
    return out
