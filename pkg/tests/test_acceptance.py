"""Acceptance criteria 1-8. Each test prints one PASS/FAIL line with its timing."""

import time

import numpy as np
import pytest

from mlab import backend, nn
from mlab.cka import ActivationMatrix, cka
from mlab.config import loads, save_config, load_config
from mlab.formats import load_actmat, load_checkpoint, save_actmat, save_checkpoint
from mlab.pipelines import misalignment_correlation, run_compression, run_forgetting, run_two_stage
from mlab.report import export_metrics

from oracles import brute_cka, ce_loss, central_diff, distill_loss, mlp_forward, random_orthogonal, rel_error

SEEDS = list(range(10))


@pytest.fixture
def verdict(capsys):
    def report(number, name, ok, elapsed, detail=""):
        with capsys.disabled():
            status = "PASS" if ok else "FAIL"
            print(f"\n[criterion {number}] {status} {name} ({elapsed:.1f}s) {detail}".rstrip())
    return report


def _random_pair(rng):
    rows = int(rng.integers(4, 33))
    a = rng.standard_normal((rows, int(rng.integers(1, 17))))
    b = rng.standard_normal((rows, int(rng.integers(1, 17))))
    return a, b


# -- 1 -------------------------------------------------------------------------

def test_criterion_1_cka_properties(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = {"identity": 0.0, "symmetry": 0.0, "orthogonal": 0.0, "scale": 0.0, "translation": 0.0}
    bounded = True
    for _ in range(120):
        a, b = _random_pair(rng)
        base = cka(a, b).cka
        q = random_orthogonal(a.shape[1], rng)
        worst["identity"] = max(worst["identity"], abs(cka(a, a).cka - 1.0))
        worst["symmetry"] = max(worst["symmetry"], abs(cka(b, a).cka - base))
        worst["orthogonal"] = max(worst["orthogonal"], abs(cka(a @ q, b).cka - base))
        worst["scale"] = max(worst["scale"], abs(cka(a * rng.uniform(0.01, 100.0), b).cka - base))
        shift = rng.standard_normal(a.shape[1]) * 10.0
        worst["translation"] = max(worst["translation"], abs(cka(a + shift, b).cka - base))
        bounded &= 0.0 <= base <= 1.0
    elapsed = time.perf_counter() - t0
    ok = (bounded and worst["identity"] <= 1e-12 and worst["symmetry"] <= 1e-12
          and max(worst["orthogonal"], worst["scale"], worst["translation"]) <= 1e-9 and elapsed < 5)
    verdict(1, "CKA properties over 120 pairs", ok, elapsed,
            " ".join(f"{k}={v:.1e}" for k, v in worst.items()))
    assert ok


# -- 2 -------------------------------------------------------------------------

def test_criterion_2_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(100):
        a, b = _random_pair(rng)
        worst = max(worst, abs(cka(a, b).cka - brute_cka(a, b)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 5
    verdict(2, "library CKA vs brute-force oracle, 100 pairs", ok, elapsed, f"max diff={worst:.1e}")
    assert ok


# -- 3 -------------------------------------------------------------------------

def _grad_instance(name, act, objective, seed):
    rng = np.random.default_rng(seed)
    sizes = [int(rng.integers(2, 5))] + [int(rng.integers(2, 6)) for _ in range(int(rng.integers(1, 3)))]
    sizes.append(int(rng.integers(2, 5)))
    cp = nn.init(nn.ArchitectureDescriptor(sizes, act), seed)
    weights = [np.array(w) for w in cp.weights]
    biases = [rng.standard_normal(b.shape) * 0.3 for b in cp.biases]
    x = rng.standard_normal((int(rng.integers(3, 8)), sizes[0]))
    y = rng.integers(0, sizes[-1], x.shape[0])
    teacher = rng.standard_normal((x.shape[0], sizes[-1])) if objective == "distill" else None
    temperature, mix = (float(rng.uniform(1.0, 4.0)), float(rng.uniform(0.1, 0.9))) if teacher is not None else (1.0, 0.0)
    _, gw, gb = backend.get_kernels(name).batch_grads(
        weights, biases, x, y.astype(np.int64), teacher, cp.descriptor.activation_code, temperature, mix)

    def loss(w, b):
        z = mlp_forward(w, b, x, act)
        return ce_loss(z, y) if teacher is None else distill_loss(z, teacher, y, temperature, mix)

    err = 0.0
    for i in range(len(weights)):
        fw = central_diff(lambda v: loss(weights[:i] + [v] + weights[i + 1:], biases), weights[i])
        fb = central_diff(lambda v: loss(weights, biases[:i] + [v] + biases[i + 1:]), biases[i])
        err = max(err, rel_error(gw[i], fw), rel_error(gb[i], fb))
    return err


def test_criterion_3_gradients(verdict):
    t0 = time.perf_counter()
    errors = []
    for name in backend.available():
        for act in ("tanh", "relu"):
            for objective in ("sft", "distill"):
                for k in range(5):
                    errors.append(_grad_instance(name, act, objective, 1000 + 17 * k + len(errors)))
    # the two losses on their own, against the logits
    rng = np.random.default_rng(303)
    for _ in range(10):
        z, t = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
        y = rng.integers(0, 4, 5)
        _, g = nn.cross_entropy_loss(z, y)
        errors.append(rel_error(g, central_diff(lambda v: ce_loss(v, y), z)))
        _, g = nn.distill_loss(z, t, y, nn.DistillConfig(None, 2.5, 0.7))
        errors.append(rel_error(g, central_diff(lambda v: distill_loss(v, t, y, 2.5, 0.7), z)))
    elapsed = time.perf_counter() - t0
    ok = len(errors) >= 20 and max(errors) < 1e-6 and elapsed < 10
    verdict(3, f"backward passes and losses vs central differences, {len(errors)} instances", ok,
            elapsed, f"max rel err={max(errors):.1e}")
    assert ok


# -- 4 and 7 -------------------------------------------------------------------

@pytest.fixture(scope="module")
def forgetting_batch():
    t0 = time.perf_counter()
    cfg = loads("scenario: forgetting\n")
    records = [run_forgetting(cfg, s) for s in SEEDS]
    return records, time.perf_counter() - t0


def test_criterion_4_forgetting(verdict, forgetting_batch):
    records, elapsed = forgetting_batch
    drop = rec = up = 0
    for r in records:
        a = {s.label: s.accuracy["task_a"] for s in r.stages}
        c = {s.label: s.cka_value("expert", "task_a") for s in r.stages}
        lost = a["expert"] - a["sft"]
        drop += lost >= 0.15
        rec += lost > 0 and a["recovered"] - a["sft"] >= 0.5 * lost
        up += c["recovered"] > c["sft"]
    ok = drop >= 9 and rec >= 9 and up == 10 and elapsed < 180
    verdict(4, "forgetting direction over 10 seeds", ok, elapsed,
            f"drop>=15pt {drop}/10, recovered>=50% {rec}/10, dCKA>0 {up}/10")
    assert ok


def test_criterion_7_misalignment_correlation(verdict, forgetting_batch):
    records, _ = forgetting_batch
    t0 = time.perf_counter()
    rho = misalignment_correlation(records)
    ok = rho <= -0.6
    verdict(7, "Spearman(1 - CKA to expert, task-A accuracy), 10 seeds", ok,
            time.perf_counter() - t0, f"rho={rho:.4f}")
    assert ok


# -- 5 -------------------------------------------------------------------------

def test_criterion_5_compression(verdict):
    t0 = time.perf_counter()
    arms = {
        "bits=3": "scenario: compression\ndegradation:\n  kind: quantize\n  bits: 3\n",
        "prune=0.3": "scenario: compression\ndegradation:\n  kind: prune\n  fraction: 0.3\n",
        "bits=16": "scenario: compression\ndegradation:\n  kind: quantize\n  bits: 16\n",
    }
    counts, control = {}, 0.0
    for arm, text in arms.items():
        gain = closer = 0
        for s in SEEDS:
            r = run_compression(loads(text), s)
            a = {st.label: st.accuracy["task_a"] for st in r.stages}
            c = {st.label: st.cka_value("original", "task_a") for st in r.stages}
            gain += a["recovered"] > a["degraded"]
            closer += c["recovered"] > c["degraded"]
            if arm == "bits=16":
                control = max(control, abs(a["degraded"] - a["original"]))
        counts[arm] = (gain, closer)
    elapsed = time.perf_counter() - t0
    ok = (all(g >= 9 and c >= 9 for arm, (g, c) in counts.items() if arm != "bits=16")
          and control < 0.01 and elapsed < 180)
    detail = " ".join(f"{arm}: acc up {g}/10 cka up {c}/10;" for arm, (g, c) in counts.items() if arm != "bits=16")
    verdict(5, "compression direction over 10 seeds", ok, elapsed,
            f"{detail} bits=16 max |d acc|={100 * control:.2f}pt")
    assert ok


# -- 6 -------------------------------------------------------------------------

def test_criterion_6_two_stage(verdict):
    t0 = time.perf_counter()
    cfg = loads("scenario: two_stage\n")
    good = 0
    for s in SEEDS:
        r = run_two_stage(cfg, s)
        a = {st.label: st.accuracy["task_a"] for st in r.stages}
        b = {st.label: st.accuracy["task_b"] for st in r.stages}
        good += (a["off_policy"] < a["student"]
                 and a["recovered"] >= a["student"] - 0.10
                 and b["recovered"] > b["no_teacher_recovered"])
    elapsed = time.perf_counter() - t0
    ok = good >= 8 and elapsed < 180
    verdict(6, "two-stage degrade, recover, beat no-teacher arm", ok, elapsed, f"{good}/10 seeds")
    assert ok


# -- 8 -------------------------------------------------------------------------

def test_criterion_8_determinism_and_round_trips(verdict, tmp_path):
    t0 = time.perf_counter()
    cfg = loads("scenario: forgetting\nseeds: [5]\n")
    a, sa = export_metrics(run_forgetting(cfg), tmp_path / "a.csv")
    b, sb = export_metrics(run_forgetting(cfg), tmp_path / "b.csv")
    csv_same = a.read_bytes() == b.read_bytes() and sa.read_bytes() == sb.read_bytes()

    cp = nn.init(nn.ArchitectureDescriptor((3, 7, 5, 2), "relu"), 99, stage_label="x")
    save_checkpoint(cp, tmp_path / "m.ckpt")
    ckpt_same = load_checkpoint(tmp_path / "m.ckpt") == cp

    h = ActivationMatrix(np.random.default_rng(8).standard_normal((9, 4)), tag="probe")
    save_actmat(h, tmp_path / "h.actmat")
    act_same = load_actmat(tmp_path / "h.actmat") == h

    cfg_same = True
    for scenario in ("forgetting", "compression", "two_stage"):
        c = loads(f"scenario: {scenario}\nseeds: [1, 2]\n")
        save_config(c, tmp_path / f"{scenario}.yaml")
        cfg_same &= load_config(tmp_path / f"{scenario}.yaml") == c
    elapsed = time.perf_counter() - t0
    ok = csv_same and ckpt_same and act_same and cfg_same
    verdict(8, "determinism and round-trips", ok, elapsed,
            f"csv={csv_same} ckpt={ckpt_same} actmat={act_same} config={cfg_same}")
    assert ok
