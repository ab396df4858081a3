import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from quantvec import EmbeddingMatrix, dtype_parse, knn_quantized
from quantvec.cli import main
from quantvec.io import load_codebook, load_pq_codes, load_store


@pytest.fixture
def raw_file(tmp_path):
    def make(n, d, seed=0, name="x.f32"):
        data = np.random.default_rng(seed).standard_normal((n, d)).astype("<f4")
        path = tmp_path / name
        path.write_bytes(data.tobytes())
        return path, data

    return make


def test_quantize_and_search_match_library(raw_file, tmp_path, capsys):
    db_path, db = raw_file(300, 64)
    q_path, q = raw_file(5, 64, seed=1, name="q.f32")
    store_path = tmp_path / "db.qvst"
    assert main(["quantize", "--input", str(db_path), "--format", "raw", "--dim", "64",
                 "--dtype", "int4", "--group-size", "32", "--out", str(store_path)]) == 0
    assert "compression vs fp32" in capsys.readouterr().out
    store = load_store(store_path)
    assert store.dt == dtype_parse("int4:32") and store.n == 300
    out = tmp_path / "hits.json"
    assert main(["search", "--store", str(store_path), "--queries", str(q_path), "--query-format", "raw",
                 "--dim", "64", "--k", "7", "--output", str(out)]) == 0
    doc = json.loads(out.read_text())
    expected = knn_quantized(EmbeddingMatrix(q), store, 7)
    assert [[h["id"] for h in r["hits"]] for r in doc["results"]] == [list(map(int, r.ids)) for r in expected]
    assert doc["run_config"]["seed"] == 0


def test_quantize_empty_input(tmp_path):
    src = tmp_path / "empty.f32"
    src.write_bytes(b"")
    assert main(["quantize", "--input", str(src), "--format", "raw", "--dim", "4",
                 "--dtype", "int8", "--out", str(tmp_path / "e.qvst")]) == 0
    assert load_store(tmp_path / "e.qvst").n == 0


def test_indivisible_group_exits_2(raw_file, tmp_path, capsys):
    src, _ = raw_file(3, 100)
    code = main(["quantize", "--input", str(src), "--format", "raw", "--dim", "100",
                 "--dtype", "int4:32", "--out", str(tmp_path / "s")])
    assert code == 2
    assert "IndivisibleGroup" in capsys.readouterr().err


def test_io_error_exits_1(tmp_path):
    bad = tmp_path / "bad.qvst"
    bad.write_bytes(b"QVST\x01")
    assert main(["search", "--store", str(bad), "--queries", str(bad)]) == 1


def test_ingest_writes_manifest(raw_file, tmp_path):
    src, data = raw_file(10, 8)
    out = tmp_path / "fp32.qvst"
    assert main(["ingest", "--input", str(src), "--format", "raw", "--dim", "8", "--out", str(out)]) == 0
    assert np.array_equal(load_store(out).codes, data)
    manifest = json.loads((tmp_path / "fp32.qvst.manifest.json").read_text())
    assert manifest["count"] == 10 and manifest["dim"] == 8


def test_eval_rmse_and_retrieval_and_merge(raw_file, tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    src, _ = raw_file(400, 256)
    common = ["--input", str(src), "--format", "raw", "--dim", "256"]
    assert main(["eval", "rmse", *common, "--sample-n", "30", "--out", str(tmp_path / "t1")]) == 0
    with open(tmp_path / "t1.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["Datatype", "Group size", "RMSE", "Baseline", "Ratio"]
    assert [r[0] for r in rows[1:]] == ["Bf16", "Int8", "Int4", "Int4", "Int4", "Int4"]
    assert main(["--seed", "3", "eval", "retrieval", *common, "--split", "200,200", "--dtypes", "fp32,int8",
                 "--pq", "8:16", "--n-queries", "3", "--max-abs-cos", "0.3", "--out", str(tmp_path / "t2")]) == 0
    rep = json.loads((tmp_path / "t2.json").read_text())
    accs = {r["method"]: r["value"] for r in rep["rows"]}
    assert accs["fp32"] == 1.0 and "pq:8:16" in accs
    assert rep["metadata"]["run_config"]["seed"] == 3
    assert main(["report", "merge", str(tmp_path / "t1.json"), str(tmp_path / "t2.json"),
                 "--out", str(tmp_path / "all")]) == 0
    merged = (tmp_path / "all.csv").read_text().splitlines()
    assert len(merged) == 1 + 6 + 3


def test_eval_sts(tmp_path):
    rng = np.random.default_rng(2)
    a = rng.standard_normal((80, 64)).astype("<f4")
    b = (a + rng.standard_normal((80, 64))).astype("<f4")
    (tmp_path / "a.f32").write_bytes(a.tobytes())
    (tmp_path / "b.f32").write_bytes(b.tobytes())
    gold = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    (tmp_path / "gold.txt").write_text("\n".join(repr(float(g)) for g in gold) + "\n")
    assert main(["eval", "sts", "--a", str(tmp_path / "a.f32"), "--b", str(tmp_path / "b.f32"),
                 "--format", "raw", "--dim", "64", "--gold", str(tmp_path / "gold.txt"),
                 "--methods", "fp32,int8,pq:8:16", "--dataset", "toy", "--out", str(tmp_path / "t3")]) == 0
    with open(tmp_path / "t3.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["Dataset", "Datatype", "Correlation coefficient", "Ratio", "Group size", "Baseline"]
    assert [r[1] for r in rows[1:]] == ["Fp32", "Int8", "PQ[8, 16]"]
    assert float(rows[1][2]) == pytest.approx(1.0)


def test_pq_train_and_encode(raw_file, tmp_path):
    src, _ = raw_file(100, 16)
    cb = tmp_path / "cb.pqcb"
    common = ["--input", str(src), "--format", "raw", "--dim", "16"]
    assert main(["pq", "train", *common, "--m", "4", "--k", "8", "--out", str(cb)]) == 0
    assert load_codebook(cb).centroids.shape == (4, 8, 4)
    assert main(["pq", "encode", "--codebook", str(cb), *common, "--out", str(tmp_path / "c")]) == 0
    codes, k = load_pq_codes(tmp_path / "c")
    assert k == 8 and codes.codes.shape == (100, 4)


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "quantvec", "--help"], capture_output=True, text=True, check=True)
    assert "quantize" in out.stdout and "eval" in out.stdout
