import numpy as np
import pytest

from mlab import nn
from mlab.cka import ActivationMatrix, AlignmentScore
from mlab.config import loads
from mlab.errors import IoError, ParseError
from mlab.formats import (
    actmat_bytes,
    checkpoint_bytes,
    load_actmat,
    load_checkpoint,
    parse_actmat,
    parse_checkpoint,
    save_actmat,
    save_checkpoint,
)
from mlab.pipelines import RunRecord, StageMetrics, run_forgetting
from mlab.report import (
    METRICS_HEADER,
    SCATTER_HEADER,
    export_metrics,
    load_record,
    read_metrics,
    record_to_dict,
    save_record,
)

SMALL = """\
scenario: forgetting
seeds: [0]
training:
  epochs: 5
  sft_epochs: 2
  recovery_epochs: 2
"""


@pytest.fixture(scope="module")
def record():
    return run_forgetting(loads(SMALL))


def _score(v):
    return AlignmentScore(v, 1.0, 1.0, 1.0)


# -- binary formats ------------------------------------------------------------

def test_actmat_round_trip(tmp_path):
    h = ActivationMatrix(np.random.default_rng(0).standard_normal((7, 3)), tag="layer/é")
    save_actmat(h, tmp_path / "h.actmat")
    assert load_actmat(tmp_path / "h.actmat") == h


def test_checkpoint_round_trip(tmp_path):
    cp = nn.init(nn.ArchitectureDescriptor((2, 5, 4, 3), "relu"), 2**63 + 5, stage_label="sft")
    save_checkpoint(cp, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back == cp
    assert back.seed == cp.seed and back.stage_label == "sft"
    assert checkpoint_bytes(back) == checkpoint_bytes(cp)


@pytest.mark.parametrize("kind", ["actmat", "ckpt"])
def test_binary_rejects_corruption(kind):
    if kind == "actmat":
        blob, parse = actmat_bytes(ActivationMatrix(np.ones((3, 2)) * [[1], [2], [3]])), parse_actmat
    else:
        blob, parse = checkpoint_bytes(nn.init(nn.ArchitectureDescriptor((2, 3, 2)), 0)), parse_checkpoint
    parse(blob)
    with pytest.raises(ParseError, match="magic"):
        parse(b"XXXX" + blob[4:])
    with pytest.raises(ParseError, match="version"):
        parse(blob[:4] + b"\x09\x00\x00\x00" + blob[8:])
    with pytest.raises(ParseError, match="truncated|short"):
        parse(blob[:-3])
    with pytest.raises(ParseError, match="trailing"):
        parse(blob + b"\x00")


def test_actmat_huge_header_rejected():
    blob = bytearray(actmat_bytes(ActivationMatrix(np.eye(2))))
    blob[8:16] = (2**40).to_bytes(8, "little")
    with pytest.raises(ParseError):
        parse_actmat(bytes(blob))


# -- metrics CSV ---------------------------------------------------------------

def test_empty_record_header_only(tmp_path):
    rec = RunRecord("forgetting", 0, {}, "expert", "task_a")
    path, scatter = export_metrics(rec, tmp_path / "m.csv")
    assert path.read_text() == ",".join(METRICS_HEADER) + "\n"
    assert scatter.read_text() == ",".join(SCATTER_HEADER) + "\n"


def test_single_stage_row_count(tmp_path):
    m = StageMetrics("expert", "expert", accuracy={"task_a": 0.9, "task_b": 0.25},
                     cka={("expert", "task_a"): _score(1.0), ("base", "task_a"): _score(0.5)})
    rec = RunRecord("forgetting", 0, {}, "expert", "task_a", stages=[m])
    path, _ = export_metrics(rec, tmp_path / "m.csv")
    rows = path.read_text().splitlines()[1:]
    assert len(rows) == 2 + 2


def test_csv_round_trip(record, tmp_path):
    path, _ = export_metrics(record, tmp_path / "m.csv")
    back = read_metrics(path)
    assert [m.label for m in back] == record.labels
    for got, want in zip(back, record.stages):
        assert got.accuracy == want.accuracy
        assert set(got.cka) == set(want.cka)
        for key, score in want.cka.items():
            assert got.cka[key].cka == pytest.approx(score.cka, rel=1e-11, abs=1e-12)


def test_csv_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n")
    with pytest.raises(ParseError):
        read_metrics(p)


def test_scatter_has_one_row_per_stage(record, tmp_path):
    _, scatter = export_metrics(record, tmp_path / "m.csv")
    lines = scatter.read_text().splitlines()
    assert len(lines) == 1 + len(record.stages)
    # the reference stage sits at the origin
    assert lines[1] == "0,0"


def test_export_unwritable_is_io_error(record, tmp_path):
    with pytest.raises(IoError):
        export_metrics(record, tmp_path / "missing" / "m.csv")


def test_csv_byte_identical_across_runs(tmp_path):
    a = run_forgetting(loads(SMALL))
    b = run_forgetting(loads(SMALL))
    pa, sa = export_metrics(a, tmp_path / "a.csv")
    pb, sb = export_metrics(b, tmp_path / "b.csv")
    assert pa.read_bytes() == pb.read_bytes()
    assert sa.read_bytes() == sb.read_bytes()


# -- records -------------------------------------------------------------------

def test_record_json_round_trip(record, tmp_path):
    save_record(record, tmp_path / "r.json")
    back = load_record(tmp_path / "r.json")
    assert record_to_dict(back) == record_to_dict(record)


def test_record_bad_json(tmp_path):
    p = tmp_path / "r.json"
    p.write_text("{\n  oops")
    with pytest.raises(ParseError) as info:
        load_record(p)
    assert info.value.line == 2
    p.write_text("{}")
    with pytest.raises(ParseError):
        load_record(p)


def test_record_invariants(record):
    assert record.stage("expert").cka_value("expert", "task_a") == pytest.approx(1.0, abs=1e-12)
    assert record.lineage == {"base": None, "expert": "base", "sft": "expert", "recovered": "sft"}
    for s in record.stages:
        assert set(s.accuracy) == {"task_a", "task_b"}
        assert set(s.cka) == {("expert", "task_a"), ("expert", "task_b")}
