import json

import numpy as np
import pytest

from neighbormix.cli import main
from neighbormix.data_model import load_base_probs, load_embeddings, load_manifest
from neighbormix.memory import load_memory
from neighbormix.synth import SynthSpec, spec_to_dict


@pytest.fixture
def synth_workspace(tmp_path):
    """Spec file + generated dataset + built train/ds memories."""
    spec = SynthSpec(
        num_classes=3,
        dim=4,
        train_counts=(30, 20, 10),
        dev_counts=(8, 8, 8),
        test_counts=(8, 8, 8),
        ds_counts=(40, 40, 40),
        mean_scale=2.5,
        spread=1.0,
        bias_strength=1.0,
        label_noise=0.1,
        seed=13,
    )
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec_to_dict(spec)))
    gen_dir = tmp_path / "gen"
    assert main(["synth-generate", "--spec", str(spec_path), "--out-dir", str(gen_dir)]) == 0
    manifest = gen_dir / "manifest.json"
    train_kvm = tmp_path / "train.kvm"
    ds_kvm = tmp_path / "ds.kvm"
    assert main(["build-memory", "--manifest", str(manifest), "--split", "train",
                 "--out", str(train_kvm)]) == 0
    assert main(["build-memory", "--manifest", str(manifest), "--split", "ds",
                 "--out", str(ds_kvm)]) == 0
    return manifest, train_kvm, ds_kvm, tmp_path


class TestBuildMemory:
    def test_reports_row_count(self, synth_workspace, capsys):
        manifest, train_kvm, _, tmp_path = synth_workspace
        out = tmp_path / "again.kvm"
        assert main(["build-memory", "--manifest", str(manifest), "--split", "train",
                     "--out", str(out)]) == 0
        assert "60 rows" in capsys.readouterr().out
        assert len(load_memory(out)) == 60

    def test_missing_labels_file_names_path(self, synth_workspace, capsys, tmp_path):
        manifest, *_ = synth_workspace
        doc = json.loads(manifest.read_text())
        doc["splits"]["train"]["labels"] = "missing.tsv"
        broken = manifest.parent / "broken.json"
        broken.write_text(json.dumps(doc))
        code = main(["build-memory", "--manifest", str(broken), "--split", "train",
                     "--out", str(tmp_path / "x.kvm")])
        assert code == 1
        assert "missing.tsv" in capsys.readouterr().err


class TestEvaluate:
    def test_writes_three_reports_for_one_memory(self, synth_workspace, tmp_path):
        manifest, train_kvm, _, _ = synth_workspace
        out = tmp_path / "eval1"
        code = main(["evaluate", "--manifest", str(manifest), "--memory", str(train_kvm),
                     "--k", "4", "--temperature", "0.5", "--lam", "0.5",
                     "--out-dir", str(out)])
        assert code == 0
        for stem in ("report_base", "report_knn_only", "report_interpolated"):
            assert (out / f"{stem}.json").exists()
            assert (out / f"{stem}.txt").exists()
        assert not (out / "report_combined.json").exists()

    def test_zero_mix_weight_equals_base_scoring(self, synth_workspace, tmp_path):
        manifest, train_kvm, _, _ = synth_workspace
        out = tmp_path / "eval0"
        assert main(["evaluate", "--manifest", str(manifest), "--memory", str(train_kvm),
                     "--k", "4", "--temperature", "0.5", "--lam", "0.0",
                     "--out-dir", str(out)]) == 0
        base = json.loads((out / "report_base.json").read_text())
        mixed = json.loads((out / "report_interpolated.json").read_text())
        assert mixed["micro_f1"] == base["micro_f1"]
        assert mixed["confusion"] == base["confusion"]
        # and against scoring the probabilities directly
        m = load_manifest(manifest)
        probs = load_base_probs(m, "test")
        from neighbormix.data_model import load_labeled_set
        from neighbormix.metrics import evaluate as ev

        labeled = load_labeled_set(m, "test")
        gold = {r: int(l) for r, l in zip(labeled.embeddings.ids, labeled.labels)}
        preds = {r: int(np.argmax(probs.row(r))) for r in probs.ids}
        assert ev(gold, preds, m.vocab).micro_f1 == base["micro_f1"]

    def test_combined_run_writes_four_reports(self, synth_workspace, tmp_path):
        manifest, train_kvm, ds_kvm, _ = synth_workspace
        out = tmp_path / "eval2"
        code = main(["evaluate", "--manifest", str(manifest), "--memory", str(train_kvm),
                     "--second-memory", str(ds_kvm), "--alpha", "0.6",
                     "--k", "4", "--temperature", "0.5", "--lam", "0.5",
                     "--second-k", "8", "--second-lam", "0.3",
                     "--out-dir", str(out)])
        assert code == 0
        stems = ["report_base", "report_knn_only", "report_interpolated",
                 "report_combined"]
        for stem in stems:
            assert (out / f"{stem}.json").exists()

    def test_neighbor_dump(self, synth_workspace, tmp_path):
        manifest, train_kvm, _, _ = synth_workspace
        out = tmp_path / "evald"
        assert main(["evaluate", "--manifest", str(manifest), "--memory", str(train_kvm),
                     "--k", "4", "--lam", "0.5", "--dump-neighbors", "3",
                     "--out-dir", str(out)]) == 0
        lines = (out / "neighbors.tsv").read_text().splitlines()
        assert lines[0] == "query_id\trank\tneighbor_id\tneighbor_label\tdistance"
        assert len(lines) == 1 + 24 * 3
        first = lines[1].split("\t")
        assert first[1] == "0" and first[3].startswith("class_")

    def test_missing_settings_is_validation_error(self, synth_workspace, tmp_path):
        manifest, train_kvm, _, _ = synth_workspace
        code = main(["evaluate", "--manifest", str(manifest), "--memory", str(train_kvm),
                     "--out-dir", str(tmp_path / "x")])
        assert code == 1


class TestTune:
    def test_degenerate_grid_echoes_point(self, synth_workspace, tmp_path, capsys):
        manifest, train_kvm, _, _ = synth_workspace
        out = tmp_path / "tune1.json"
        assert main(["tune", "--manifest", str(manifest), "--memory", str(train_kvm),
                     "--out", str(out), "--k-grid", "4", "--t-grid", "0.5",
                     "--lambda-grid", "0.5"]) == 0
        doc = json.loads(out.read_text())
        assert doc["first"]["best"]["k"] == 4
        assert doc["first"]["best"]["lam"] == 0.5
        assert len(doc["first"]["trace"]) == 2
        assert "(4, 0.5)" in capsys.readouterr().out

    def test_default_grid_sizes_and_alpha_trace(self, synth_workspace, tmp_path):
        manifest, train_kvm, ds_kvm, _ = synth_workspace
        out = tmp_path / "tune2.json"
        assert main(["tune", "--manifest", str(manifest), "--memory", str(train_kvm),
                     "--second-memory", str(ds_kvm), "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert len(doc["first"]["trace"]) == 8 * 10 + 11
        assert len(doc["second"]["trace"]) == 8 * 10 + 11
        assert len(doc["alpha"]["trace"]) == 11

    def test_params_file_feeds_evaluate(self, synth_workspace, tmp_path):
        manifest, train_kvm, ds_kvm, _ = synth_workspace
        tune_out = tmp_path / "tune3.json"
        assert main(["tune", "--manifest", str(manifest), "--memory", str(train_kvm),
                     "--second-memory", str(ds_kvm), "--out", str(tune_out),
                     "--k-grid", "2,4", "--t-grid", "0.5"]) == 0
        eval_out = tmp_path / "eval3"
        assert main(["evaluate", "--manifest", str(manifest), "--memory", str(train_kvm),
                     "--second-memory", str(ds_kvm), "--params", str(tune_out),
                     "--out-dir", str(eval_out)]) == 0
        assert (eval_out / "report_combined.json").exists()


class TestNeighbors:
    def test_dump_shape(self, synth_workspace, tmp_path):
        manifest, train_kvm, _, _ = synth_workspace
        out = tmp_path / "nb.tsv"
        assert main(["neighbors", "--manifest", str(manifest), "--split", "test",
                     "--memory", str(train_kvm), "--k", "5", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 1 + 24 * 5


class TestSubsample:
    def test_writes_usable_manifest(self, synth_workspace, tmp_path):
        manifest, *_ = synth_workspace
        out = tmp_path / "sub"
        assert main(["subsample", "--manifest", str(manifest), "--fraction", "0.5",
                     "--seed", "3", "--out-dir", str(out)]) == 0
        sub_manifest = load_manifest(out / "manifest.json")
        assert sub_manifest.split("train").count == 30
        emb = load_embeddings(sub_manifest.split("train").embeddings)
        assert len(emb) == 30
        # untouched splits still resolve
        assert load_embeddings(sub_manifest.split("dev").embeddings) is not None


class TestLowResource:
    def test_single_fraction_row_matches_direct_scoring(self, synth_workspace, tmp_path):
        manifest, _, ds_kvm, _ = synth_workspace
        out = tmp_path / "lr"
        code = main(["low-resource", "--manifest", str(manifest),
                     "--fractions", "1.0", "--seed", "5",
                     "--ds-memory", str(ds_kvm),
                     "--bias-strength", "1.0",
                     "--k-grid", "2,4", "--t-grid", "0.5",
                     "--out-dir", str(out)])
        assert code == 0
        doc = json.loads((out / "low_resource.json").read_text())
        assert len(doc["rows"]) == 1
        row = doc["rows"][0]
        assert row["fraction"] == 1.0
        assert row["train_rows"] == 60
        assert row["ds_f1"] is not None
        # base series reproducible by direct proxy scoring
        from neighbormix import synth as sy
        from neighbormix.data_model import load_labeled_set
        from neighbormix.metrics import evaluate as ev

        m = load_manifest(manifest)
        train = load_labeled_set(m, "train")
        test = load_labeled_set(m, "test")
        proxy = sy.centroid_base_probs(
            train, test.embeddings, m.vocab, base_temperature=1.0,
            bias_strength=1.0, label_noise=0.0, seed=0,
        )
        gold = {r: int(l) for r, l in zip(test.embeddings.ids, test.labels)}
        preds = {r: int(np.argmax(proxy.row(r))) for r in proxy.ids}
        assert ev(gold, preds, m.vocab).micro_f1 == pytest.approx(row["base_f1"])

    def test_missing_ds_memory_noted_and_row_per_fraction(
        self, synth_workspace, tmp_path, capsys
    ):
        manifest, *_ = synth_workspace
        out = tmp_path / "lr2"
        assert main(["low-resource", "--manifest", str(manifest),
                     "--fractions", "0.5,1.0", "--k-grid", "2", "--t-grid", "0.5",
                     "--out-dir", str(out)]) == 0
        doc = json.loads((out / "low_resource.json").read_text())
        assert [r["fraction"] for r in doc["rows"]] == [0.5, 1.0]
        assert all(r["ds_f1"] is None for r in doc["rows"])
        assert all(r["base_f1"] is not None and r["train_f1"] is not None
                   for r in doc["rows"])
        assert "ds series omitted" in doc["note"]
        table = (out / "low_resource.txt").read_text().splitlines()
        assert len(table) == 3


@pytest.mark.slow
def test_build_memory_at_full_extra_supervision_scale(tmp_path, capsys):
    """303K-row split through the CLI: file write, load, build, save."""
    import numpy as np

    from neighbormix.data_model import EmbeddingSet, write_embeddings, write_labels, write_manifest

    n, dim = 303_000, 4
    vectors = np.zeros((n, dim), dtype=np.float64)
    vectors[:, 0] = np.arange(n, dtype=np.float32).astype(np.float64)
    embeddings = EmbeddingSet(
        dim=dim, ids=tuple(f"d{i}" for i in range(n)), vectors=vectors
    )
    write_embeddings(embeddings, tmp_path / "ds.emb")
    write_labels(tmp_path / "ds.tsv", embeddings.ids, ["a" if i % 2 else "b" for i in range(n)])
    write_manifest(tmp_path / "manifest.json", {
        "dim": dim,
        "labels": ["a", "b"],
        "splits": {"ds": {"embeddings": "ds.emb", "labels": "ds.tsv", "count": n}},
    })
    out = tmp_path / "ds.kvm"
    assert main(["build-memory", "--manifest", str(tmp_path / "manifest.json"),
                 "--split", "ds", "--out", str(out)]) == 0
    assert "303000 rows" in capsys.readouterr().out
    assert len(load_memory(out)) == n


class TestEnvOverrides:
    def test_workers_env_default(self, monkeypatch):
        monkeypatch.setenv("NEIGHBORMIX_WORKERS", "5")
        from neighbormix.cli import build_parser

        args = build_parser().parse_args(
            ["neighbors", "--manifest", "m", "--memory", "x", "--k", "1", "--out", "o"]
        )
        assert args.workers == 5

    def test_out_dir_env_default(self, monkeypatch, synth_workspace, tmp_path):
        manifest, train_kvm, _, _ = synth_workspace
        target = tmp_path / "envout"
        monkeypatch.setenv("NEIGHBORMIX_OUT", str(target))
        assert main(["evaluate", "--manifest", str(manifest), "--memory", str(train_kvm),
                     "--k", "2", "--lam", "0.5"]) == 0
        assert (target / "report_base.json").exists()
