"""Command-line contract tests: exit codes, configuration layering, run
artifacts, and a miniature end-to-end pipeline over the synthetic
corpus."""

import json
import shutil

import pytest

from nightcall.cli import main

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")


def run(*argv) -> int:
    return main(list(argv))


class TestExitCodes:
    def test_unknown_subcommand(self, capsys):
        assert run("no-such-command") == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self):
        assert run("synth", "--frobnicate") == 1

    def test_missing_required_argument(self):
        assert run("synth") == 1

    def test_missing_input_file_is_io_error(self):
        assert run("stats", "--manifest", "/no/such/manifest.json") == 2

    def test_unreachable_fetch_is_io_error(self, tmp_path):
        code = run("fetch", "--url", "http://127.0.0.1:1/void",
                   "--out", str(tmp_path), "--timeout", "2")
        assert code == 2

    def test_help_exits_zero(self):
        assert run("-h") == 0
        assert run("detect", "-h") == 0

    @pytest.mark.parametrize(
        "override",
        ["calls_per_file=3", "bogus.key=1", "synth.nope=1", "synth.seed"],
    )
    def test_bad_overrides(self, tmp_path, override):
        assert run("synth", "--out", str(tmp_path / "x"), override) == 1

    def test_wrong_override_type(self, tmp_path):
        assert run("synth", "--out", str(tmp_path / "x"),
                   "synth.calls_per_file=three") == 1


SMALL_SYNTH = [
    "synth.train_files=2", "synth.test_files=1", "synth.calls_per_file=4",
    "synth.file_duration=6.0",
]


class TestSynthCommand:
    def test_writes_run_artifacts(self, tmp_path):
        out = tmp_path / "corpus"
        assert run("synth", "--out", str(out), "--seed", "5", *SMALL_SYNTH) == 0
        assert (out / "manifest.json").exists()
        config = json.loads((out / "config.json").read_text())
        assert config["command"] == "synth"
        assert config["effective_config"]["train_files"] == 2
        assert config["effective_config"]["seed"] == 5
        summary = json.loads((out / "summary.json").read_text())
        assert summary["recordings"] == 3
        assert summary["annotations"] == 12
        assert "wall_time_s" in summary

    def test_refuses_overwrite_without_force(self, tmp_path):
        out = tmp_path / "corpus"
        assert run("synth", "--out", str(out), *SMALL_SYNTH) == 0
        assert run("synth", "--out", str(out), *SMALL_SYNTH) == 1
        assert run("synth", "--out", str(out), "--force", *SMALL_SYNTH) == 0

    def test_config_file_layering(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "synth": {"train_files": 2, "test_files": 1, "calls_per_file": 6,
                      "file_duration": 9.0},
        }))
        out = tmp_path / "corpus"
        # CLI override beats the file; the file beats the defaults
        assert run("synth", "--out", str(out), "--config", str(cfg),
                   "synth.calls_per_file=4") == 0
        eff = json.loads((out / "config.json").read_text())["effective_config"]
        assert eff["calls_per_file"] == 4
        assert eff["file_duration"] == 9.0

    def test_same_seed_reproduces_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("synth", "--out", str(out), "--seed", "9", *SMALL_SYNTH) == 0
        rels = sorted(p.relative_to(a) for p in a.rglob("*.txt"))
        assert rels
        for rel in rels:
            assert (a / rel).read_bytes() == (b / rel).read_bytes()

    def test_unknown_config_section_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"detector": {}}))
        assert run("synth", "--out", str(tmp_path / "x"),
                   "--config", str(cfg)) == 1


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> short train, shared by the downstream command tests."""
    base = tmp_path_factory.mktemp("cli_pipeline")
    corpus = base / "corpus"
    assert main(["synth", "--out", str(corpus), "--seed", "5", *SMALL_SYNTH]) == 0

    cfg = base / "train.json"
    cfg.write_text(json.dumps({
        "model": {
            "backbone_widths": [8, 16], "levels": [2, 3],
            "anchor_scales": [8.0, 16.0], "anchor_ratios": [0.5, 1.0],
            "fpn_channels": 16, "attn_levels": [3], "attn_heads": 2,
            "attn_key_budget": 64, "rcnn_hidden": 32, "pe_freq_dims": 8,
            "pe_time_dims": 4, "roi_size": [4, 4], "total_steps": 6,
            "warmup_steps": 2, "lr_decay_milestones": [5], "batch_size": 2,
            "rpn_pre_nms_topk": 128, "rpn_post_nms_topk_train": 64,
            "rpn_post_nms_topk_test": 32, "rpn_batch": 32, "rcnn_batch": 32,
        },
        "dsp": {"window_frames": 256, "window_stride": 128},
    }))
    run_dir = base / "run"
    code = main([
        "train", "--manifest", str(corpus / "manifest.json"),
        "--root", str(corpus), "--out", str(run_dir),
        "--config", str(cfg), "--seed", "2", "--jobs", "1",
    ])
    assert code == 0
    return base, corpus, run_dir, cfg


class TestTrainCommand:
    def test_artifacts(self, pipeline):
        _, _, run_dir, _ = pipeline
        assert (run_dir / "checkpoint.pt").exists()
        assert (run_dir / "train_log.jsonl").exists()
        eff = json.loads((run_dir / "config.json").read_text())["effective_config"]
        assert eff["model"]["total_steps"] == 6
        assert eff["model"]["seed"] == 2
        assert eff["dsp"]["window_frames"] == 256
        assert json.loads((run_dir / "summary.json").read_text())["step"] == 6

    def test_num_classes_mismatch_rejected(self, pipeline, tmp_path):
        base, corpus, _, cfg = pipeline
        code = main([
            "train", "--manifest", str(corpus / "manifest.json"),
            "--root", str(corpus), "--out", str(tmp_path / "bad"),
            "--config", str(cfg), "model.num_classes=9",
        ])
        assert code == 1


class TestDetectAndEval:
    def test_detect_eval_chain(self, pipeline, tmp_path):
        base, corpus, run_dir, _ = pipeline
        manifest = corpus / "manifest.json"
        weights = run_dir / "checkpoint.pt"

        det_dir = tmp_path / "det"
        assert main([
            "detect", "--weights", str(weights), "--manifest", str(manifest),
            "--root", str(corpus), "--out", str(det_dir),
            "--score-threshold", "0.05",
        ]) == 0
        det_csv = det_dir / "detections.csv"
        assert det_csv.exists()
        assert (det_dir / "summary.json").exists()

        for sub, key in (("eval-det", "detection_map"),
                         ("eval-ml", "multilabel_map")):
            out = tmp_path / sub
            assert main([
                sub, "--detections", str(det_csv), "--manifest", str(manifest),
                "--out", str(out),
            ]) == 0
            report = json.loads((out / "report.json").read_text())
            assert key in report
            assert not list(out.glob("*.svg"))  # plots only from `report`

    def test_detect_single_file_to_explicit_path(self, pipeline, tmp_path):
        base, corpus, run_dir, _ = pipeline
        wav = next((corpus / "test").rglob("*.wav"))
        out = tmp_path / "one.jsonl"
        assert main([
            "detect", "--weights", str(run_dir / "checkpoint.pt"),
            "--in", str(wav), "--out", str(out), "--score-threshold", "0.05",
        ]) == 0
        assert out.exists()

    def test_eval_unknown_species_scope(self, pipeline, tmp_path):
        base, corpus, run_dir, _ = pipeline
        det_dir = tmp_path / "det"
        det_dir.mkdir()
        (det_dir / "detections.csv").write_text(
            "file,t_start,t_end,f_low,f_high,species_code,confidence\n"
        )
        assert main([
            "eval-det", "--detections", str(det_dir / "detections.csv"),
            "--manifest", str(corpus / "manifest.json"),
            "--out", str(tmp_path / "x"), "--species", "ZzZz",
        ]) == 1


class TestProbeAndReport:
    def test_probe_then_report(self, pipeline, tmp_path):
        base, corpus, run_dir, _ = pipeline
        manifest = corpus / "manifest.json"

        probe_dir = tmp_path / "probe"
        assert main([
            "probe", "--weights", str(run_dir / "checkpoint.pt"),
            "--manifest", str(manifest), "--root", str(corpus),
            "--out", str(probe_dir), "--grid", "16",
        ]) == 0
        assert (probe_dir / "probe.json").exists()
        assert not list(probe_dir.glob("*.svg"))

        report_dir = tmp_path / "report"
        assert main([
            "report", "--run", str(probe_dir), "--out", str(report_dir),
        ]) == 0
        assert list(report_dir.glob("probe_*.svg"))

    def test_report_needs_something_to_render(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["report", "--run", str(empty),
                     "--out", str(tmp_path / "out")]) == 1


class TestStatsAndIngest:
    def test_stats_totals(self, pipeline, capsys):
        _, corpus, _, _ = pipeline
        assert main(["stats", "--manifest", str(corpus / "manifest.json")]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["recordings"] == 3
        assert doc["annotations"] == 12

    def test_stats_scope_filter(self, pipeline, capsys):
        _, corpus, _, _ = pipeline
        assert main([
            "stats", "--manifest", str(corpus / "manifest.json"),
            "--scope-min-samples", "1", "--scope-min-files", "1",
        ]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["scope_species"] >= 1
        assert len(doc["scope_codes"]) == doc["scope_species"]

    def test_bad_split_name(self, pipeline):
        _, corpus, _, _ = pipeline
        assert main(["stats", "--manifest", str(corpus / "manifest.json"),
                     "--split", "holdout"]) == 1

    def test_ingest_walks_layout(self, pipeline, tmp_path):
        _, corpus, _, _ = pipeline
        names = tmp_path / "names.txt"
        names.write_text(
            "Vox gravis\nVox media\nVox alta\nVox clara\nVox summa\n"
        )
        out = tmp_path / "ingested"
        assert main(["ingest", "--root", str(corpus), "--vocab", str(names),
                     "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["recordings"] == 3
        assert summary["annotations"] == 12
        assert summary["species"] == 5
