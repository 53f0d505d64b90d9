"""Minimal multilayer perceptron: init, forward, losses, Adam training.

Weights are stored ``out x in`` so layer ``i`` computes
``a @ W[i].T + b[i]``. Checkpoints are immutable values; training returns a
new checkpoint and never touches its input.

The distillation objective is

    mix * T^2 * KL(softmax(teacher / T) || softmax(student / T))
        + (1 - mix) * cross_entropy(student, labels)

averaged over the batch. The KL direction is forward (teacher first) and the
``T^2`` factor keeps gradient magnitudes comparable across temperatures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import _pykernels
from .backend import get_kernels
from .errors import DivergedTraining, ShapeMismatch, ValidationError

ACTIVATIONS = ("tanh", "relu")

DEFAULT_TEMPERATURE = 2.0
DEFAULT_MIX = 0.5
DEFAULT_LR = 1e-3
DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_EPS = 1e-8
DEFAULT_BATCH_SIZE = 32


@dataclass(frozen=True)
class ArchitectureDescriptor:
    layer_sizes: tuple
    activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise ValidationError("architecture needs input, at least one hidden layer, and output")
        if any(s < 1 for s in sizes):
            raise ValidationError(f"layer sizes must be >= 1, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def class_count(self) -> int:
        return self.layer_sizes[-1]

    @property
    def hidden_sizes(self) -> tuple:
        return self.layer_sizes[1:-1]

    @property
    def activation_code(self) -> int:
        return ACTIVATIONS.index(self.activation)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Checkpoint:
    descriptor: ArchitectureDescriptor
    weights: tuple
    biases: tuple
    seed: int = 0
    stage_label: str = ""

    def __post_init__(self):
        weights = tuple(_frozen(w) for w in self.weights)
        biases = tuple(_frozen(b) for b in self.biases)
        sizes = self.descriptor.layer_sizes
        if len(weights) != len(sizes) - 1 or len(biases) != len(sizes) - 1:
            raise ShapeMismatch("parameter count does not match descriptor")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ShapeMismatch(
                    f"layer {i}: expected W {(sizes[i + 1], sizes[i])} and b {(sizes[i + 1],)}, "
                    f"got {w.shape} and {b.shape}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError(f"layer {i} has non-finite parameters")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must fit in an unsigned 64-bit integer")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "seed", int(self.seed))

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.descriptor == other.descriptor
            and self.seed == other.seed
            and self.stage_label == other.stage_label
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )

    def replace(self, **changes) -> "Checkpoint":
        fields = dict(
            descriptor=self.descriptor,
            weights=self.weights,
            biases=self.biases,
            seed=self.seed,
            stage_label=self.stage_label,
        )
        fields.update(changes)
        return Checkpoint(**fields)

    def parameters(self):
        return list(self.weights) + list(self.biases)


@dataclass(frozen=True, eq=False)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = _frozen(self.inputs)
        y = np.array(self.labels, dtype=np.int64, copy=True)
        y.setflags(write=False)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ShapeMismatch(f"inputs {x.shape} and labels {y.shape} are inconsistent")
        if x.shape[0] < 1:
            raise ValidationError("batch must hold at least one sample")
        if y.min() < 0:
            raise ValidationError("labels must be non-negative")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, n: int) -> "Batch":
        return Batch(self.inputs[:n], self.labels[:n])


@dataclass(frozen=True)
class DistillConfig:
    teacher: Checkpoint = field(repr=False, compare=False)
    temperature: float = DEFAULT_TEMPERATURE
    mix: float = DEFAULT_MIX

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.mix <= 1.0:
            raise ValidationError(f"mix must lie in [0, 1], got {self.mix}")


Objective = Union[str, DistillConfig]


def init(descriptor: ArchitectureDescriptor, seed: int, stage_label: str = "init") -> Checkpoint:
    rng = np.random.default_rng(seed)
    sizes = descriptor.layer_sizes
    weights = [
        rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
    ]
    biases = [np.zeros(n) for n in sizes[1:]]
    return Checkpoint(descriptor, weights, biases, seed=seed, stage_label=stage_label)


def forward(cp: Checkpoint, inputs):
    """Return ``(logits, hidden)``; ``hidden[l]`` is post-nonlinearity, N x size."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cp.descriptor.input_dim:
        raise ShapeMismatch(
            f"expected inputs of shape (N, {cp.descriptor.input_dim}), got {x.shape}"
        )
    logits, acts = _pykernels._forward(cp.weights, cp.biases, x, cp.descriptor.activation_code)
    return logits, acts[1:]


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    return np.exp(_pykernels._log_softmax(np.asarray(logits, dtype=np.float64) / temperature))


def _check_logits(logits, labels):
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or y.shape != (z.shape[0],):
        raise ShapeMismatch(f"logits {z.shape} and labels {y.shape} are inconsistent")
    if y.size and (y.min() < 0 or y.max() >= z.shape[1]):
        raise ValidationError("label out of range")
    return z, y


def cross_entropy_loss(logits, labels):
    """Batch-mean cross-entropy and its gradient ``(softmax - onehot) / N``."""
    z, y = _check_logits(logits, labels)
    return _pykernels._loss_and_dlogits(z, y, None, 1.0, 0.0)


def distill_loss(student_logits, teacher_logits, labels, cfg: DistillConfig):
    z, y = _check_logits(student_logits, labels)
    t = np.asarray(teacher_logits, dtype=np.float64)
    if t.shape != z.shape:
        raise ShapeMismatch(f"teacher logits {t.shape} vs student {z.shape}")
    return _pykernels._loss_and_dlogits(z, y, t, cfg.temperature, cfg.mix)


def kl_divergence(student_logits, teacher_logits, temperature: float = 1.0) -> float:
    """Batch-mean KL(softmax(teacher/T) || softmax(student/T))."""
    ls = _pykernels._log_softmax(np.asarray(student_logits, dtype=np.float64) / temperature)
    lt = _pykernels._log_softmax(np.asarray(teacher_logits, dtype=np.float64) / temperature)
    return float(np.sum(np.exp(lt) * (lt - ls)) / ls.shape[0])


def train(
    cp: Checkpoint,
    dataset: Batch,
    objective: Objective = "sft",
    epochs: int = 100,
    lr: float = DEFAULT_LR,
    seed: int = 0,
    batch_size: int = DEFAULT_BATCH_SIZE,
    betas: Sequence[float] = DEFAULT_BETAS,
    eps: float = DEFAULT_EPS,
    stage_label: str | None = None,
    backend: str | None = None,
) -> Checkpoint:
    """Minibatch Adam from ``cp``; the sample order is reshuffled every epoch.

    ``objective`` is ``"sft"`` (cross-entropy) or a ``DistillConfig`` whose
    frozen teacher is evaluated once on the full dataset up front.
    """
    if len(dataset) == 0:
        raise ValidationError("dataset is empty")
    if dataset.inputs.shape[1] != cp.descriptor.input_dim:
        raise ShapeMismatch("dataset input dimension does not match the architecture")
    if dataset.labels.max() >= cp.descriptor.class_count:
        raise ValidationError("dataset labels exceed the class count")
    if batch_size < 1 or epochs < 0:
        raise ValidationError("batch_size must be >= 1 and epochs >= 0")
    label = cp.stage_label if stage_label is None else stage_label

    if objective == "sft":
        teacher_logits, temperature, mix = None, 1.0, 0.0
    elif isinstance(objective, DistillConfig):
        teacher = objective.teacher
        if teacher.descriptor.class_count != cp.descriptor.class_count:
            raise ShapeMismatch("teacher and student disagree on class count")
        teacher_logits, _ = forward(teacher, dataset.inputs)
        temperature, mix = float(objective.temperature), float(objective.mix)
    else:
        raise ValidationError(f"unknown objective {objective!r}")

    kernels = get_kernels(backend)
    weights = [np.array(w, order="C") for w in cp.weights]
    biases = [np.array(b) for b in cp.biases]
    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    rng = np.random.default_rng(seed)
    n = len(dataset)
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        # a blow-up is reported as DivergedTraining below, not as numpy warnings
        with np.errstate(over="ignore", invalid="ignore"):
            total, step = kernels.train_epoch(
                weights, biases, m_w, v_w, m_b, v_b,
                dataset.inputs, dataset.labels, teacher_logits, order, batch_size,
                cp.descriptor.activation_code, temperature, mix,
                lr, betas[0], betas[1], eps, step,
            )
        if not np.isfinite(total) or not all(np.all(np.isfinite(w)) for w in weights):
            raise DivergedTraining(f"non-finite loss at epoch {epoch}", stage=label)
    return Checkpoint(cp.descriptor, weights, biases, seed=seed, stage_label=label)


def predict(cp: Checkpoint, inputs) -> np.ndarray:
    logits, _ = forward(cp, inputs)
    # argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(logits, axis=1)


def evaluate(cp: Checkpoint, dataset: Batch) -> float:
    return float(np.mean(predict(cp, dataset.inputs) == dataset.labels))
