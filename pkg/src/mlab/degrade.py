"""Lossy operators that turn a checkpoint into a degraded one.

Quantization is simulated: weights are snapped to a symmetric uniform grid
of ``2**bits - 1`` levels spanning ``[-max|w|, +max|w|]`` per tensor and
stored dequantized. Pruning zeroes whole hidden units ranked by the norm of
their incoming row concatenated with their outgoing column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cka import last_hidden_cka
from .errors import AllPruned, ArchitectureMismatch, ValidationError
from .nn import Checkpoint, evaluate

SCOPES = ("all_hidden_layers", "layer_list")


@dataclass(frozen=True)
class DegradationSpec:
    """``kind`` is ``"quantize"`` (uses ``bits``) or ``"prune"`` (uses ``fraction``).

    ``scope="layer_list"`` restricts the operator to ``layers``: linear-map
    indices for quantization, hidden-layer indices for pruning.
    """

    kind: str
    bits: int = 4
    fraction: float = 0.1
    scope: str = "all_hidden_layers"
    layers: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(int(i) for i in self.layers))
        if self.kind not in ("quantize", "prune"):
            raise ValidationError(f"degradation kind must be quantize or prune, got {self.kind!r}")
        if self.kind == "quantize" and not 2 <= int(self.bits) <= 16:
            raise ValidationError(f"bits must lie in [2, 16], got {self.bits}")
        if self.kind == "prune" and not 0.0 <= self.fraction < 1.0:
            raise ValidationError(f"fraction must lie in [0, 1), got {self.fraction}")
        if self.scope not in SCOPES:
            raise ValidationError(f"scope must be one of {SCOPES}, got {self.scope!r}")

    def layer_selection(self):
        return None if self.scope == "all_hidden_layers" else self.layers

    def apply(self, cp: Checkpoint) -> Checkpoint:
        if self.kind == "quantize":
            return quantize(cp, self.bits, layers=self.layer_selection())
        return prune(cp, self.fraction, layers=self.layer_selection())

    def describe(self) -> str:
        if self.kind == "quantize":
            return f"quantize{self.bits}"
        return f"prune{self.fraction:g}"


def quantize_tensor(w: np.ndarray, bits: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    top = float(np.max(np.abs(w))) if w.size else 0.0
    if top == 0.0:
        return np.zeros_like(w)
    k_max = 2 ** (bits - 1) - 1
    step = top / k_max
    k = np.clip(np.rint(w / step), -k_max, k_max)
    q = k * step
    # pin the extremes so a second pass sees the same max|w| and step
    q[k == k_max] = top
    q[k == -k_max] = -top
    return q


def quantize(cp: Checkpoint, bits: int, layers=None) -> Checkpoint:
    if not 2 <= int(bits) <= 16:
        raise ValidationError(f"bits must lie in [2, 16], got {bits}")
    chosen = range(len(cp.weights)) if layers is None else layers
    weights = list(cp.weights)
    for i in chosen:
        weights[i] = quantize_tensor(weights[i], int(bits))
    return cp.replace(weights=weights, stage_label=f"{cp.stage_label}+q{bits}")


def pruned_count(fraction: float, units: int) -> int:
    # absorb representation error, e.g. 0.29 * 100 = 28.999999999999996
    return int(math.floor(fraction * units + 1e-9))


def unit_norms(cp: Checkpoint, hidden: int) -> np.ndarray:
    incoming = cp.weights[hidden]
    outgoing = cp.weights[hidden + 1]
    return np.sqrt(np.sum(incoming**2, axis=1) + np.sum(outgoing**2, axis=0))


def prune(cp: Checkpoint, fraction: float, criterion: str = "l2_norm", layers=None) -> Checkpoint:
    """Zero the ``floor(fraction * n)`` weakest units of each selected hidden layer.

    All rankings come from the input checkpoint, so pruning one layer's
    outgoing columns does not influence the ranking of the next layer.
    """
    if criterion != "l2_norm":
        raise ValidationError(f"unknown pruning criterion {criterion!r}")
    if not 0.0 <= fraction < 1.0:
        raise ValidationError(f"fraction must lie in [0, 1), got {fraction}")
    n_hidden = len(cp.descriptor.hidden_sizes)
    chosen = range(n_hidden) if layers is None else layers
    weights = [np.array(w) for w in cp.weights]
    biases = [np.array(b) for b in cp.biases]
    for h in chosen:
        if not 0 <= h < n_hidden:
            raise ValidationError(f"hidden layer {h} does not exist")
        n = cp.descriptor.hidden_sizes[h]
        drop = pruned_count(fraction, n)
        if drop >= n:
            raise AllPruned(f"hidden layer {h} would lose all {n} units")
        if drop == 0:
            continue
        victims = np.argsort(unit_norms(cp, h), kind="stable")[:drop]
        weights[h][victims, :] = 0.0
        biases[h][victims] = 0.0
        weights[h + 1][:, victims] = 0.0
    return cp.replace(weights=weights, biases=biases, stage_label=f"{cp.stage_label}+p{fraction:g}")


@dataclass
class DegradationReport:
    """Accuracy deltas ``theta1 - theta`` and last-hidden-layer CKA(theta, theta1) per task."""

    accuracy_before: dict = field(default_factory=dict)
    accuracy_after: dict = field(default_factory=dict)
    cka: dict = field(default_factory=dict)

    @property
    def accuracy_delta(self) -> dict:
        return {t: self.accuracy_after[t] - self.accuracy_before[t] for t in self.accuracy_before}


def degradation_report(theta: Checkpoint, theta1: Checkpoint, eval_sets: dict,
                       preprocess: bool = True) -> DegradationReport:
    if theta.descriptor != theta1.descriptor:
        raise ArchitectureMismatch(f"{theta.descriptor} vs {theta1.descriptor}")
    report = DegradationReport()
    for task, batch in eval_sets.items():
        report.accuracy_before[task] = evaluate(theta, batch)
        report.accuracy_after[task] = evaluate(theta1, batch)
        report.cka[task] = last_hidden_cka(theta1, theta, batch.inputs, preprocess)
    return report

