"""Run configuration: a single YAML file with a strict key schema.

Every key is optional except ``scenario``; missing keys take the scenario's
defaults (see ``DEFAULTS`` and ``configs/*.yaml`` in the repository).
Unknown keys anywhere are rejected. Validation errors name the offending
field as a dotted path and, when the file came from disk, its line.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .degrade import DegradationSpec
from .errors import ParseError, ValidationError
from .nn import ArchitectureDescriptor
from .tasks import TaskSpec

SCENARIOS = ("forgetting", "compression", "two_stage")
TEACHER_ROLES = ("base", "expert")
TEACHER_TRAINING = ("task_b", "mirror_student")

_BLOBS_2D = [[2.0, 2.0], [-2.0, 2.0], [-2.0, -2.0], [2.0, -2.0]]

# compression: 12 tight classes on a circle; the thin margins between
# neighbours make a lossy operator cost measurable accuracy
_RING_12 = [
    [2.0 * math.cos(2 * math.pi * i / 12), 2.0 * math.sin(2 * math.pi * i / 12)] for i in range(12)
]

# two-stage: task A lives in the first two input dims, task B in the last two
_A_4D = [[x, y, 0.0, 0.0] for x, y in _BLOBS_2D]
_B_4D = [[0.0, 0.0, x, y] for x, y in _BLOBS_2D]

_TRAINING = {
    "epochs": 30,
    "sft_epochs": 30,
    "recovery_epochs": 30,
    "transfer_epochs": 200,
    "lr": 1e-3,
    "batch_size": 32,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
}
_DISTILL = {"temperature": 2.0, "mix": 0.5, "off_policy_mix": 1.0}
_DEGRADATION = {"kind": "quantize", "bits": 3, "fraction": 0.3, "scope": "all_hidden_layers", "layers": []}

DEFAULTS = {
    "forgetting": {
        # a long, well-converged expert stage and short interference/recovery
        # stages keep the CKA-to-expert ordering stable across seeds
        "architecture": {"layer_sizes": [2, 16, 16, 4], "activation": "relu"},
        "training": {"epochs": 200, "sft_epochs": 5, "recovery_epochs": 5},
        "teacher_role": "base",
        "tasks": {
            "a": {"name": "task_a", "generator": "gaussian_blobs", "centers": _BLOBS_2D,
                  "spread": 0.6, "train_size": 512, "eval_size": 512, "seed": 1},
            "b": {"name": "task_b", "generator": "label_permuted", "base_task": "task_a",
                  "permutation": [1, 2, 3, 0], "train_size": 512, "eval_size": 512, "seed": 2},
        },
    },
    "compression": {
        "architecture": {"layer_sizes": [2, 16, 16, 12], "activation": "tanh"},
        "tasks": {
            "a": {"name": "task_a", "generator": "gaussian_blobs", "centers": _RING_12,
                  "spread": 0.2, "train_size": 1024, "eval_size": 1024, "seed": 1},
        },
    },
    "two_stage": {
        "architecture": {"layer_sizes": [4, 8, 8, 4], "activation": "tanh"},
        "teacher_architecture": {"layer_sizes": [4, 64, 64, 4], "activation": "tanh"},
        "transfer_size": 64,
        "tasks": {
            "a": {"name": "task_a", "generator": "gaussian_blobs", "centers": _A_4D,
                  "spread": 0.6, "train_size": 512, "eval_size": 1024, "seed": 1},
            "b": {"name": "task_b", "generator": "gaussian_blobs", "centers": _B_4D,
                  "spread": 1.4, "train_size": 2048, "eval_size": 2048, "seed": 2},
        },
    },
}

_COMMON = {
    "seeds": [0],
    "output_dir": "runs",
    "preprocess": True,
    "teacher_architecture": None,
    "training": _TRAINING,
    "distill": _DISTILL,
    "teacher_role": "expert",
    "degradation": None,
    "transfer_size": 64,
    "teacher_training": "task_b",
}

_TOP_KEYS = {"scenario", "seed", "architecture", "tasks"} | set(_COMMON)
_TASK_KEYS = {"name", "generator", "centers", "spread", "base_task", "permutation",
              "train_size", "eval_size", "seed"}
_ARCH_KEYS = {"layer_sizes", "activation"}
_DEGRADATION_KEYS = set(_DEGRADATION)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 30
    sft_epochs: int = 30
    recovery_epochs: int = 30
    transfer_epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @property
    def betas(self):
        return (self.beta1, self.beta2)


@dataclass(frozen=True)
class DistillSettings:
    temperature: float = 2.0
    mix: float = 0.5
    off_policy_mix: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    seeds: tuple
    output_dir: str
    preprocess: bool
    architecture: ArchitectureDescriptor
    teacher_architecture: ArchitectureDescriptor | None
    training: TrainingConfig
    distill: DistillSettings
    teacher_role: str
    degradation: DegradationSpec | None
    transfer_size: int
    teacher_training: str
    tasks: dict  # role ("a" / "b") -> TaskSpec

    @property
    def task_a(self) -> TaskSpec:
        return self.tasks["a"]

    @property
    def task_b(self) -> TaskSpec | None:
        return self.tasks.get("b")

    def task_specs(self):
        return list(self.tasks.values())

    def to_dict(self) -> dict:
        def arch(a):
            return None if a is None else {"layer_sizes": list(a.layer_sizes), "activation": a.activation}

        def task(t: TaskSpec):
            d = {"name": t.name, "generator": t.generator}
            if t.generator == "gaussian_blobs":
                d["centers"] = [list(c) for c in t.centers]
                d["spread"] = t.spread
            else:
                d["base_task"] = t.base_task
                d["permutation"] = list(t.permutation)
            d.update(train_size=t.train_size, eval_size=t.eval_size, seed=t.seed)
            return d

        deg = None
        if self.degradation is not None:
            g = self.degradation
            deg = {"kind": g.kind, "bits": g.bits, "fraction": g.fraction,
                   "scope": g.scope, "layers": list(g.layers)}
        return {
            "scenario": self.scenario,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "preprocess": self.preprocess,
            "architecture": arch(self.architecture),
            "teacher_architecture": arch(self.teacher_architecture),
            "training": dict(vars(self.training)),
            "distill": dict(vars(self.distill)),
            "teacher_role": self.teacher_role,
            "degradation": deg,
            "transfer_size": self.transfer_size,
            "teacher_training": self.teacher_training,
            "tasks": {role: task(t) for role, t in self.tasks.items()},
        }

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def with_overrides(self, seeds=None, output_dir=None, preprocess=None) -> "RunConfig":
        raw = self.to_dict()
        if seeds is not None:
            raw["seeds"] = list(seeds)
        if output_dir is not None:
            raw["output_dir"] = str(output_dir)
        if preprocess is not None:
            raw["preprocess"] = bool(preprocess)
        return from_dict(raw)


class _Fields:
    """Raises ValidationError with dotted field path and source line."""

    def __init__(self, lines):
        self.lines = lines

    def fail(self, path, message):
        line = self.lines.get(path)
        where = f" (line {line})" if line else ""
        raise ValidationError(f"{'.'.join(path)}: {message}{where}")

    def keys(self, path, mapping, allowed):
        if not isinstance(mapping, dict):
            self.fail(path, f"expected a mapping, got {type(mapping).__name__}")
        for k in mapping:
            if k not in allowed:
                self.fail(path + (str(k),), f"unknown key (allowed: {', '.join(sorted(allowed))})")

    def integer(self, path, value, lo=None):
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, f"expected an integer, got {value!r}")
        if lo is not None and value < lo:
            self.fail(path, f"must be >= {lo}, got {value}")
        return value

    def real(self, path, value, lo=None, hi=None, lo_open=False, hi_open=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        value = float(value)
        bad_lo = lo is not None and (value <= lo if lo_open else value < lo)
        bad_hi = hi is not None and (value >= hi if hi_open else value > hi)
        if bad_lo or bad_hi:
            lb = "(" if lo_open else "["
            rb = ")" if hi_open else "]"
            self.fail(path, f"must lie in {lb}{lo}, {hi}{rb}, got {value}")
        return value

    def choice(self, path, value, options):
        if value not in options:
            self.fail(path, f"must be one of {', '.join(options)}, got {value!r}")
        return value

    def wrap(self, path, build):
        try:
            return build()
        except ValidationError as exc:
            self.fail(path, str(exc))


def _merge(base, override):
    if isinstance(base, dict) and isinstance(override, dict):
        out = dict(base)
        for k, v in override.items():
            out[k] = _merge(base.get(k), v) if k in base else v
        return out
    return copy.deepcopy(override)


def _key_lines(text):
    lines = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (str(k.value),)
                lines[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (str(i),))

    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return lines
    if root is not None:
        walk(root, ())
    return lines


def _arch(f, path, raw):
    f.keys(path, raw, _ARCH_KEYS)
    if "layer_sizes" not in raw:
        f.fail(path + ("layer_sizes",), "required")
    sizes = raw["layer_sizes"]
    if not isinstance(sizes, list):
        f.fail(path + ("layer_sizes",), "expected a list of integers")
    for i, s in enumerate(sizes):
        f.integer(path + ("layer_sizes", str(i)), s, lo=1)
    return f.wrap(path, lambda: ArchitectureDescriptor(tuple(sizes), raw.get("activation", "tanh")))


def _task(f, path, raw):
    f.keys(path, raw, _TASK_KEYS)
    for key in ("train_size", "eval_size"):
        if key in raw:
            f.integer(path + (key,), raw[key], lo=1)
    if "seed" in raw:
        f.integer(path + ("seed",), raw["seed"], lo=0)
    if "spread" in raw:
        f.real(path + ("spread",), raw["spread"], lo=0.0, lo_open=True)
    if not isinstance(raw.get("name"), str) or not raw.get("name"):
        f.fail(path + ("name",), "required non-empty string")
    return f.wrap(path, lambda: TaskSpec(
        name=raw["name"],
        generator=raw.get("generator", "gaussian_blobs"),
        centers=tuple(tuple(c) for c in raw.get("centers") or ()),
        spread=float(raw.get("spread", 0.6)),
        base_task=raw.get("base_task"),
        permutation=tuple(raw.get("permutation") or ()),
        train_size=raw.get("train_size", 512),
        eval_size=raw.get("eval_size", 512),
        seed=raw.get("seed", 0),
    ))


def from_dict(raw: dict, lines=None) -> RunConfig:
    f = _Fields(lines or {})
    if not isinstance(raw, dict):
        raise ValidationError("config must be a mapping at the top level")
    f.keys((), raw, _TOP_KEYS)
    if "scenario" not in raw:
        f.fail(("scenario",), "required")
    scenario = f.choice(("scenario",), raw["scenario"], SCENARIOS)
    if "seed" in raw and "seeds" in raw:
        f.fail(("seed",), "give either seed or seeds, not both")

    user = dict(raw)
    if "seed" in user:
        user["seeds"] = [user.pop("seed")]
    if scenario == "compression" and user.get("degradation") is None:
        user["degradation"] = {}
    merged = _merge(_merge(_COMMON, DEFAULTS[scenario]), user)
    if merged.get("degradation") is not None:
        f.keys(("degradation",), merged["degradation"], _DEGRADATION_KEYS)
        merged["degradation"] = _merge(_DEGRADATION, merged["degradation"])

    seeds = merged["seeds"]
    if not isinstance(seeds, list) or not seeds:
        f.fail(("seeds",), "expected a non-empty list of integers")
    for i, s in enumerate(seeds):
        f.integer(("seeds", str(i)), s, lo=0)
    if not isinstance(merged["output_dir"], str):
        f.fail(("output_dir",), "expected a string path")
    if not isinstance(merged["preprocess"], bool):
        f.fail(("preprocess",), "expected true or false")

    tr = merged["training"]
    f.keys(("training",), tr, set(_TRAINING))
    training = TrainingConfig(
        epochs=f.integer(("training", "epochs"), tr["epochs"], lo=0),
        sft_epochs=f.integer(("training", "sft_epochs"), tr["sft_epochs"], lo=0),
        recovery_epochs=f.integer(("training", "recovery_epochs"), tr["recovery_epochs"], lo=0),
        transfer_epochs=f.integer(("training", "transfer_epochs"), tr["transfer_epochs"], lo=0),
        lr=f.real(("training", "lr"), tr["lr"], lo=0.0, lo_open=True),
        batch_size=f.integer(("training", "batch_size"), tr["batch_size"], lo=1),
        beta1=f.real(("training", "beta1"), tr["beta1"], 0.0, 1.0, hi_open=True),
        beta2=f.real(("training", "beta2"), tr["beta2"], 0.0, 1.0, hi_open=True),
        eps=f.real(("training", "eps"), tr["eps"], lo=0.0, lo_open=True),
    )
    ds = merged["distill"]
    f.keys(("distill",), ds, set(_DISTILL))
    distill = DistillSettings(
        temperature=f.real(("distill", "temperature"), ds["temperature"], lo=0.0, lo_open=True),
        mix=f.real(("distill", "mix"), ds["mix"], 0.0, 1.0),
        off_policy_mix=f.real(("distill", "off_policy_mix"), ds["off_policy_mix"], 0.0, 1.0),
    )

    architecture = _arch(f, ("architecture",), merged["architecture"])
    teacher_arch = None
    if merged["teacher_architecture"] is not None:
        teacher_arch = _arch(f, ("teacher_architecture",), merged["teacher_architecture"])

    degradation = None
    if merged["degradation"] is not None:
        g = merged["degradation"]
        f.choice(("degradation", "kind"), g["kind"], ("quantize", "prune"))
        f.integer(("degradation", "bits"), g["bits"])
        if not 2 <= g["bits"] <= 16:
            f.fail(("degradation", "bits"), f"must lie in [2, 16], got {g['bits']}")
        f.real(("degradation", "fraction"), g["fraction"], 0.0, 1.0, hi_open=True)
        f.choice(("degradation", "scope"), g["scope"], ("all_hidden_layers", "layer_list"))
        degradation = f.wrap(("degradation",), lambda: DegradationSpec(
            kind=g["kind"], bits=g["bits"], fraction=float(g["fraction"]),
            scope=g["scope"], layers=tuple(g["layers"] or ())))

    tasks_raw = merged["tasks"]
    f.keys(("tasks",), tasks_raw, {"a", "b"})
    tasks = {role: _task(f, ("tasks", role), tasks_raw[role])
             for role in ("a", "b") if tasks_raw.get(role) is not None}
    if "a" not in tasks:
        f.fail(("tasks", "a"), "required")
    names = [t.name for t in tasks.values()]
    if len(set(names)) != len(names):
        f.fail(("tasks",), "task names must be unique")
    for role, t in tasks.items():
        if t.generator == "label_permuted" and t.base_task not in names:
            f.fail(("tasks", role, "base_task"), f"unknown task {t.base_task!r}")

    cfg = RunConfig(
        scenario=scenario,
        seeds=tuple(seeds),
        output_dir=merged["output_dir"],
        preprocess=merged["preprocess"],
        architecture=architecture,
        teacher_architecture=teacher_arch,
        training=training,
        distill=distill,
        teacher_role=f.choice(("teacher_role",), merged["teacher_role"], TEACHER_ROLES),
        degradation=degradation,
        transfer_size=f.integer(("transfer_size",), merged["transfer_size"], lo=1),
        teacher_training=f.choice(("teacher_training",), merged["teacher_training"], TEACHER_TRAINING),
        tasks=tasks,
    )
    _check_scenario(f, cfg)
    return cfg


def _task_dim(cfg, spec):
    while spec.generator == "label_permuted":
        spec = next(t for t in cfg.tasks.values() if t.name == spec.base_task)
    return len(spec.centers[0])


def _check_scenario(f, cfg: RunConfig):
    archs = [("architecture", cfg.architecture)]
    if cfg.scenario == "two_stage":
        if cfg.teacher_architecture is None:
            f.fail(("teacher_architecture",), "required for the two_stage scenario")
        archs.append(("teacher_architecture", cfg.teacher_architecture))
        if cfg.teacher_training == "mirror_student" and cfg.teacher_architecture != cfg.architecture:
            f.fail(("teacher_training",), "mirror_student needs teacher_architecture == architecture")
    if cfg.scenario in ("forgetting", "two_stage") and cfg.task_b is None:
        f.fail(("tasks", "b"), f"required for the {cfg.scenario} scenario")
    if cfg.scenario == "compression" and cfg.degradation is None:
        f.fail(("degradation",), "required for the compression scenario")
    if cfg.scenario != "compression" and cfg.degradation is not None:
        f.fail(("degradation",), "only the compression scenario takes a degradation")
    for role, spec in cfg.tasks.items():
        for key, arch in archs:
            if spec.classes > arch.class_count:
                f.fail(("tasks", role), f"{spec.classes} classes exceed {key} output size {arch.class_count}")
            if _task_dim(cfg, spec) != arch.input_dim:
                f.fail(("tasks", role), f"input dimension differs from {key} input size {arch.input_dim}")


def loads(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ParseError(f"invalid YAML: {getattr(exc, 'problem', exc)}", line=line) from None
    if raw is None:
        raise ParseError("config file is empty")
    return from_dict(raw, _key_lines(text))


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    return loads(path.read_text(encoding="utf-8"))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.dump(), encoding="utf-8")
