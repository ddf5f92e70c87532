"""Command-line surface tests: flows, formats, exit codes, error lines."""

import subprocess
import sys

import numpy as np
import pytest

from patchkernel import index as index_mod
from patchkernel.cli import main
from patchkernel.embed import load_descriptors
from patchkernel.pipeline import PipelineConfig, config_from_file, resolve_threads

FAST = [
    "--n", "8", "--pca-dim", "16", "--components", "4",
    "--scales", "32,64", "--seed", "42",
]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--out", str(out), "--n-base", "4", "--seed", "42"]) == 0
    return out


@pytest.fixture(scope="module")
def artifacts(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("artifacts")
    code = main(["pipeline", "--corpus", str(corpus), "--out", str(out)] + FAST)
    assert code == 0
    return out


def test_synth_counts(corpus):
    assert len(list(corpus.glob("*.pgm"))) == 20
    assert (corpus / "groundtruth.csv").exists()


def test_propose_writes_csv(corpus, tmp_path):
    out = tmp_path / "patches.csv"
    code = main(["propose", str(corpus / "img000.pgm"), "--out", str(out), "--n", "5"])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "patch_id,x,y,w,h,score"
    assert 2 <= len(lines) <= 7


def test_embed_writes_kdesc(corpus, tmp_path):
    out = tmp_path / "img000.kdesc"
    code = main(["embed", str(corpus / "img000.pgm"), "--out", str(out)] + FAST)
    assert code == 0
    dset = load_descriptors(out)
    assert dset.image_id == "img000"
    assert dset.values.shape[1] == 128
    assert dset.values.shape[0] % 8 == 0  # rotations on by default


def test_embed_global_baseline_single_descriptor(corpus, tmp_path):
    out = tmp_path / "g.kdesc"
    code = main(
        ["embed", str(corpus / "img000.pgm"), "--out", str(out), "--global-baseline"]
    )
    assert code == 0
    dset = load_descriptors(out)
    assert dset.values.shape[0] == 1
    assert dset.meta[0].x == 0 and dset.meta[0].y == 0
    assert dset.meta[0].w == 128 and dset.meta[0].h == 128


def test_pipeline_artifacts(artifacts):
    assert (artifacts / "index.kidx").exists()
    assert (artifacts / "model.kmdl").exists()
    assert len(list((artifacts / "descriptors").glob("*.kdesc"))) == 20
    idx = index_mod.load(artifacts / "index.kidx")
    assert len(idx) == 20


def test_eval_map_report(artifacts, corpus, tmp_path):
    report = tmp_path / "report.csv"
    code = main(
        ["eval", "--index", str(artifacts / "index.kidx"), "--gt",
         str(corpus / "groundtruth.csv"), "--mode", "map", "--out", str(report)]
    )
    assert code == 0
    lines = report.read_text().splitlines()
    assert lines[0] == "query_id,ap"
    assert lines[-1].startswith("ALL,")
    assert len(lines) == 6  # 4 queries + header + ALL
    overall = float(lines[-1].split(",")[1])
    assert 0.0 <= overall <= 1.0


def test_eval_top4_report(artifacts, corpus, tmp_path):
    report = tmp_path / "top4.csv"
    code = main(
        ["eval", "--index", str(artifacts / "index.kidx"), "--gt",
         str(corpus / "groundtruth.csv"), "--mode", "top4", "--out", str(report)]
    )
    assert code == 0
    lines = report.read_text().splitlines()
    assert lines[0] == "query_id,top4"
    overall = float(lines[-1].split(",")[1])
    assert 0.0 <= overall <= 4.0


def test_eval_unknown_query_is_config_error(artifacts, tmp_path, capsys):
    gt = tmp_path / "gt.csv"
    gt.write_text("query_id,image_id,label\nghost,img000,rel\n")
    code = main(
        ["eval", "--index", str(artifacts / "index.kidx"), "--gt", str(gt),
         "--mode", "map", "--out", str(tmp_path / "r.csv")]
    )
    assert code == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("eval: ")
    assert "ghost" in err and "\n" not in err


def test_search_csv(artifacts, tmp_path):
    out = tmp_path / "hits.csv"
    code = main(
        ["search", "--index", str(artifacts / "index.kidx"), "--queries",
         str(artifacts / "index.kidx"), "-k", "3", "--out", str(out)]
    )
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "query_id,rank,image_id,score"
    assert len(lines) == 1 + 20 * 3
    first = lines[1].split(",")
    assert first[0] == first[2]  # self-match ranks first
    assert first[1] == "1"


def test_encode_from_kdesc(artifacts, tmp_path):
    descs = sorted((artifacts / "descriptors").glob("*.kdesc"))[:3]
    out = tmp_path / "sub.kidx"
    code = main(
        ["encode", *map(str, descs), "--model", str(artifacts / "model.kmdl"),
         "--out", str(out)]
    )
    assert code == 0
    idx = index_mod.load(out)
    assert len(idx) == 3
    # KDESC stores f32 descriptors, so re-encoded vectors match the
    # pipeline's in-memory float64 path only to f32 precision.
    full = index_mod.load(artifacts / "index.kidx")
    for image_id in idx.ids:
        np.testing.assert_allclose(idx.vector(image_id), full.vector(image_id), atol=1e-4)


def test_index_merge_roundtrip(artifacts, tmp_path):
    merged = tmp_path / "merged.kidx"
    code = main(["index", str(artifacts / "index.kidx"), "--out", str(merged)])
    assert code == 0
    assert merged.read_bytes() == (artifacts / "index.kidx").read_bytes()


def test_index_merge_duplicate_rejected(artifacts, tmp_path, capsys):
    code = main(
        ["index", str(artifacts / "index.kidx"), str(artifacts / "index.kidx"),
         "--out", str(tmp_path / "dup.kidx")]
    )
    assert code == 1
    assert capsys.readouterr().err.startswith("index: ")


def test_sensitivity_curve(corpus, tmp_path):
    out = tmp_path / "curve.csv"
    code = main(
        ["sensitivity", "--corpus", str(corpus), "--kind", "translate",
         "--out", str(out), "--grid", "0,32,64,96,128"]
    )
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "param,mean,std,count"
    ref = lines[1].split(",")
    assert float(ref[1]) == pytest.approx(1.0, abs=1e-9)
    assert float(ref[2]) == pytest.approx(0.0, abs=1e-9)


def test_sensitivity_grid_without_reference_fails(corpus, tmp_path, capsys):
    code = main(
        ["sensitivity", "--corpus", str(corpus), "--kind", "scale",
         "--out", str(tmp_path / "c.csv"), "--grid", "0.5,2.0"]
    )
    assert code == 1
    assert capsys.readouterr().err.startswith("sensitivity: ")


def test_missing_image_error_format(tmp_path, capsys):
    code = main(["propose", str(tmp_path / "nope.pgm"), "--out", str(tmp_path / "p.csv")])
    assert code == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("propose: ")
    assert "\n" not in err


def test_stage_prefix_from_pipeline(tmp_path, capsys):
    code = main(["pipeline", "--corpus", str(tmp_path), "--out", str(tmp_path / "o")])
    assert code == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("corpus: ")


def test_config_file_roundtrip(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(
        "# comment\nn_proposals=9\npca_dim=24\ngmm_components=3\n"
        "rotations=off\nnms_iou=0.4\nscales=32,48\nseed=7\n"
    )
    cfg = config_from_file(cfg_file)
    assert cfg == PipelineConfig(
        n_proposals=9, pca_dim=24, gmm_components=3, rotations=False,
        nms_iou=0.4, scales=(32, 48), seed=7,
    )
    bad = tmp_path / "bad.cfg"
    bad.write_text("x=1\n")
    with pytest.raises(ValueError, match="unknown config key"):
        config_from_file(bad)


def test_threads_env_override(monkeypatch):
    monkeypatch.setenv("KCNN_THREADS", "3")
    assert resolve_threads(8) == 3
    monkeypatch.delenv("KCNN_THREADS")
    assert resolve_threads(8) == 8
    assert resolve_threads(None) >= 1


def test_console_entry_point(tmp_path):
    # one subprocess run to pin the installed entry point and exit codes
    result = subprocess.run(
        [sys.executable, "-m", "patchkernel.cli", "synth", "--out",
         str(tmp_path / "c"), "--n-base", "1"],
        capture_output=True, text=True,
    )
    assert result.returncode == 0
    result = subprocess.run(
        [sys.executable, "-m", "patchkernel.cli", "eval", "--index",
         str(tmp_path / "missing.kidx"), "--gt", str(tmp_path / "missing.csv"),
         "--out", str(tmp_path / "r.csv")],
        capture_output=True, text=True,
    )
    assert result.returncode == 1
    assert result.stderr.startswith("eval: ")
