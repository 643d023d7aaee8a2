"""Command-line entry point.

Every subcommand writes its outputs under a run directory together with
the effective configuration (defaults, then config file, then key=value
overrides) and a machine-readable summary.json, so a run can be audited
and reproduced from its own artifacts. Exit codes: 0 success, 1 for
validation or configuration problems, 2 for IO problems.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

from nightcall.errors import ConfigError, IoError, NightcallError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2

SUBCOMMANDS = (
    "fetch", "ingest", "stats", "synth", "train",
    "detect", "eval-det", "eval-ml", "probe", "report",
)


class _UsageError(Exception):
    """Raised instead of argparse's SystemExit(2) so bad flags exit 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{message}\n{self.format_usage()}")


def _parse_override(item: str) -> tuple[str, str, object]:
    """'section.key=value' -> (section, key, parsed value)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    if "." not in key:
        raise ConfigError(
            f"override key {key!r} needs a section prefix "
            f"(model., dsp., or synth.)"
        )
    section, field = key.split(".", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings stay strings
    return section, field, value


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    unknown = set(doc) - {"model", "dsp", "synth"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return doc


def _effective_sections(args) -> dict[str, dict]:
    """Merge config file and overrides into per-section dicts."""
    sections = {"model": {}, "dsp": {}, "synth": {}}
    for name, body in _load_config_file(getattr(args, "config", None)).items():
        if not isinstance(body, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        sections[name].update(body)
    for item in getattr(args, "overrides", []) or []:
        section, field, value = _parse_override(item)
        if section not in sections:
            raise ConfigError(f"unknown override section {section!r}")
        sections[section][field] = value
    return sections


def _build_config(factory, doc: dict, what: str):
    """Config construction with wrong-typed values mapped to ConfigError."""
    try:
        return factory(doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what} config: {exc}")


def _model_config(sections: dict, num_classes: int, seed: int | None):
    from nightcall.model import ModelConfig

    doc = dict(sections.get("model", {}))
    doc.setdefault("num_classes", num_classes)
    if doc["num_classes"] != num_classes:
        raise ConfigError(
            f"config says {doc['num_classes']} classes but the manifest "
            f"vocabulary has {num_classes}"
        )
    if seed is not None:
        doc["seed"] = seed
    return _build_config(ModelConfig.from_json, doc, "model")


def _dsp_config(sections: dict):
    from nightcall.dsp import DspConfig

    return _build_config(DspConfig.from_json, dict(sections.get("dsp", {})), "dsp")


def _synth_config(sections: dict, seed: int | None):
    from nightcall.synth import SynthConfig

    doc = dict(sections.get("synth", {}))
    if seed is not None:
        doc["seed"] = seed
    return _build_config(SynthConfig.from_json, doc, "synth")


def _write_run_artifacts(out_dir: Path, command: str, effective: dict, summary: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(
            {"command": command, "effective_config": effective},
            indent=2, sort_keys=True,
        ) + "\n",
        encoding="utf-8",
    )
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_manifest_arg(path: str):
    from nightcall.dataset.manifest import load_manifest

    return load_manifest(path)


def _split_arg(name: str):
    from nightcall.dataset.types import Split

    try:
        return Split[name.upper()]
    except KeyError:
        raise ConfigError(f"unknown split {name!r}")


def _read_detections(path: str, vocab):
    from nightcall.infer import read_detections_csv, read_detections_jsonl

    if str(path).endswith(".jsonl"):
        return read_detections_jsonl(path, vocab)
    return read_detections_csv(path, vocab)


def _cmd_fetch(args) -> dict:
    from nightcall.dataset.fetch import FetchConfig, fetch_archive

    cfg = FetchConfig.load(args.fetch_config) if args.fetch_config else FetchConfig()
    if args.url or args.sha256:
        cfg = dataclasses.replace(
            cfg, url=args.url or cfg.url, sha256=args.sha256 or cfg.sha256
        )
    path = fetch_archive(cfg, dest_dir=args.out, timeout=args.timeout)
    print(path)
    return {"archive": str(path)}


def _cmd_ingest(args) -> dict:
    from nightcall.dataset.manifest import build_manifest, save_manifest
    from nightcall.dataset.vocab import SpeciesVocab

    vocab_path = Path(args.vocab)
    try:
        text = vocab_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read vocabulary {vocab_path}: {exc}")
    if vocab_path.suffix == ".json":
        vocab = SpeciesVocab.from_json(json.loads(text))
    else:
        names = [line.strip() for line in text.splitlines() if line.strip()]
        vocab = SpeciesVocab.from_names(names)
    manifest = build_manifest(args.root, vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_manifest(manifest, out / "manifest.json")
    summary = {
        "manifest": str(out / "manifest.json"),
        "recordings": len(manifest.recordings),
        "annotations": len(manifest.annotations),
        "species": len(manifest.vocab),
    }
    print(json.dumps(summary, indent=2))
    return summary


def _cmd_stats(args) -> dict:
    from nightcall.dataset.stats import ScopeFilter, compute_stats, filter_evaluation_scope

    manifest = _load_manifest_arg(args.manifest)
    split = _split_arg(args.split) if args.split else None
    stats = compute_stats(manifest, split)
    summary = {
        "recordings": stats.n_recordings,
        "annotations": stats.n_annotations,
        "species_annotated": stats.n_species_annotated,
        "duration_hours": round(stats.total_duration_s / 3600, 3),
    }
    if args.scope_min_samples or args.scope_min_files:
        forced = []
        for code in (args.scope_force or "").split(","):
            if code.strip():
                forced.append(manifest.vocab.id_of(code.strip()))
        scope = ScopeFilter(
            min_samples=args.scope_min_samples or 100,
            min_files=args.scope_min_files or 20,
            forced_includes=tuple(forced),
        )
        scoped = filter_evaluation_scope(manifest, scope, _split_arg(args.scope_split))
        summary["scope_species"] = len(scoped.vocab)
        summary["scope_codes"] = [code for _, _, code in scoped.vocab]
    print(json.dumps(summary, indent=2))
    return summary


def _cmd_synth(args, sections) -> dict:
    from nightcall.synth import synth_corpus

    cfg = _synth_config(sections, args.seed)
    manifest = synth_corpus(cfg, args.out, force=args.force)
    summary = {
        "corpus": str(args.out),
        "recordings": len(manifest.recordings),
        "annotations": len(manifest.annotations),
        "species": len(manifest.vocab),
    }
    print(json.dumps(summary, indent=2))
    return summary, cfg.to_json()


def _cmd_train(args, sections) -> dict:
    from nightcall.model.train import train

    manifest = _load_manifest_arg(args.manifest)
    dsp_cfg = _dsp_config(sections)
    model_cfg = _model_config(sections, len(manifest.vocab), args.seed)
    checkpoint = train(
        manifest,
        args.root,
        model_cfg,
        dsp_cfg,
        args.out,
        resume=args.resume,
        max_steps=args.max_steps,
    )
    summary = {
        "checkpoint": str(Path(args.out) / "checkpoint.pt"),
        "step": checkpoint.step,
        "total_steps": model_cfg.total_steps,
    }
    print(json.dumps(summary, indent=2))
    return summary, {"model": model_cfg.to_json(), "dsp": dsp_cfg.to_json()}


def _cmd_detect(args) -> dict:
    from nightcall.dataset.types import Split
    from nightcall.infer import detect_file, write_detections_csv, write_detections_jsonl
    from nightcall.model.train import load_checkpoint

    checkpoint = load_checkpoint(args.weights)
    detector = checkpoint.build_detector()
    species = args.species.split(",") if args.species else None

    out = Path(args.out)
    if out.suffix in (".csv", ".jsonl"):
        run_dir, det_path = out.parent, out
    else:
        run_dir = out
        det_path = out / ("detections.jsonl" if args.format == "jsonl" else "detections.csv")
    run_dir.mkdir(parents=True, exist_ok=True)

    if args.input:
        targets = {Path(args.input).name: Path(args.input)}
    else:
        manifest = _load_manifest_arg(args.manifest)
        split = _split_arg(args.split)
        root = Path(args.root)
        targets = {r.path: root / r.path for r in manifest.recordings_in(split)}

    by_file = {}
    for rel, path in sorted(targets.items()):
        by_file[rel] = detect_file(
            path,
            checkpoint,
            detector=detector,
            score_threshold=args.score_threshold,
            species=species,
            merge_iou=args.merge_iou,
        )
        logger.info("%s: %d detections", rel, len(by_file[rel]))

    if det_path.suffix == ".jsonl":
        write_detections_jsonl(det_path, by_file, checkpoint.vocab)
    else:
        write_detections_csv(det_path, by_file, checkpoint.vocab)
    summary = {
        "detections": str(det_path),
        "files": len(by_file),
        "total": sum(len(v) for v in by_file.values()),
    }
    print(json.dumps(summary, indent=2))
    return summary


def _eval_common(args):
    from nightcall.infer import resolve_scope

    manifest = _load_manifest_arg(args.manifest)
    detections = _read_detections(args.detections, manifest.vocab)
    split = _split_arg(args.split)
    scope = None
    if args.species:
        scope = resolve_scope(manifest.vocab, args.species.split(","))
    files = [r.path for r in manifest.recordings_in(split)]
    if not files:
        raise ConfigError(f"manifest has no recordings in split {split.name}")
    unknown = set(detections) - set(files)
    if unknown:
        raise ConfigError(
            f"detections reference files outside split {split.name}: "
            f"{sorted(unknown)[:5]}"
        )
    return manifest, {f: detections.get(f, []) for f in files}, scope


def _cmd_eval_det(args) -> dict:
    from nightcall.evaluate import eval_detection, render_report

    manifest, by_file, scope = _eval_common(args)
    report = eval_detection(by_file, manifest, scope, iou_threshold=args.iou)
    render_report(report, args.out, plots=False)
    summary = {
        "detection_map": report.detection_map,
        "per_species": {report.codes[k]: v for k, v in report.detection_ap.items()},
        "report": str(Path(args.out) / "report.json"),
    }
    print(json.dumps(summary, indent=2))
    return summary


def _cmd_eval_ml(args) -> dict:
    from nightcall.evaluate import eval_multilabel, render_report
    from nightcall.infer import to_multilabel

    manifest, by_file, scope = _eval_common(args)
    predicted = {
        f: to_multilabel(dets, manifest.recording(f).duration, args.window_s)
        for f, dets in by_file.items()
    }
    report = eval_multilabel(predicted, manifest, scope, window_s=args.window_s)
    render_report(report, args.out, plots=False)
    summary = {
        "multilabel_map": report.multilabel_map,
        "per_species": {report.codes[k]: v for k, v in report.multilabel_ap.items()},
        "report": str(Path(args.out) / "report.json"),
    }
    print(json.dumps(summary, indent=2))
    return summary


def _cmd_probe(args) -> dict:
    from nightcall.infer import resolve_scope
    from nightcall.model.train import load_checkpoint
    from nightcall.probe import aggregate_probe, write_probe

    checkpoint = load_checkpoint(args.weights)
    manifest = _load_manifest_arg(args.manifest)
    scope = None
    if args.species:
        scope = resolve_scope(checkpoint.vocab, args.species.split(","))
    curves = aggregate_probe(
        checkpoint, manifest, args.root, scope, grid_size=args.grid
    )
    codes = {c.species_id: checkpoint.vocab.code_of(c.species_id) for c in curves}
    write_probe(curves, codes, args.out, plots=False)
    summary = {
        "probe": str(Path(args.out) / "probe.json"),
        "species": {codes[c.species_id]: c.peak_offset() for c in curves},
    }
    print(json.dumps(summary, indent=2))
    return summary


def _cmd_report(args) -> dict:
    from nightcall.evaluate import EvalReport, render_report
    from nightcall.probe import read_probe, write_probe

    run = Path(args.run)
    produced = {}
    report_path = run / "report.json"
    if report_path.exists():
        report = EvalReport.from_json(
            json.loads(report_path.read_text(encoding="utf-8"))
        )
        produced.update(
            {f"eval_{k}": str(v) for k, v in render_report(report, args.out).items()}
        )
    probe_path = run / "probe.json"
    if probe_path.exists():
        curves = read_probe(probe_path)
        doc = json.loads(probe_path.read_text(encoding="utf-8"))
        codes = {c["species_id"]: c["code"] for c in doc["curves"]}
        produced.update(
            {f"probe_{k}": str(v) for k, v in write_probe(curves, codes, args.out).items()}
        )
    if not produced:
        raise ConfigError(f"nothing to render: no report.json or probe.json in {run}")
    summary = {"rendered": produced}
    print(json.dumps(summary, indent=2))
    return summary


def build_parser() -> _Parser:
    parser = _Parser(prog="nightcall", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False, config=False):
        if seed:
            p.add_argument("--seed", type=int, default=None)
        if config:
            p.add_argument("--config", default=None, help="JSON config file")
            p.add_argument(
                "overrides", nargs="*",
                help="section.key=value overrides (model., dsp., synth.)",
            )
        p.add_argument("--jobs", type=int, default=None)

    p = sub.add_parser("fetch", help="download the published corpus archive")
    p.add_argument("--out", default=None)
    p.add_argument("--url", default=None)
    p.add_argument("--sha256", default=None)
    p.add_argument("--fetch-config", default=None)
    p.add_argument("--timeout", type=float, default=30.0)
    common(p)

    p = sub.add_parser("ingest", help="index a label directory into a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--vocab", required=True, help="species list (text) or vocab JSON")
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("stats", help="corpus totals and evaluation scope")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--scope-min-samples", type=int, default=None)
    p.add_argument("--scope-min-files", type=int, default=None)
    p.add_argument("--scope-force", default=None, help="comma-separated codes")
    p.add_argument("--scope-split", default="train")
    common(p)

    p = sub.add_parser("synth", help="generate the synthetic benchmark corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    common(p, seed=True, config=True)

    p = sub.add_parser("train", help="train a detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--max-steps", type=int, default=None)
    common(p, seed=True, config=True)

    p = sub.add_parser("detect", help="run sliding-window detection")
    p.add_argument("--weights", required=True)
    p.add_argument("--in", dest="input", default=None, help="single audio file")
    p.add_argument("--manifest", default=None)
    p.add_argument("--root", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True, help="run dir, or a .csv/.jsonl path")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--score-threshold", type=float, default=None)
    p.add_argument("--species", default=None, help="comma-separated codes")
    p.add_argument("--merge-iou", type=float, default=0.5)
    common(p)

    p = sub.add_parser("eval-det", help="detection mAP against a manifest")
    p.add_argument("--detections", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--species", default=None)
    common(p)

    p = sub.add_parser("eval-ml", help="multi-label mAP on fixed windows")
    p.add_argument("--detections", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--window-s", type=float, default=3.0)
    p.add_argument("--species", default=None)
    common(p)

    p = sub.add_parser("probe", help="posterior-frequency probe of a checkpoint")
    p.add_argument("--weights", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--species", default=None)
    common(p)

    p = sub.add_parser("report", help="render plots and tables for a run")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    common(p)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # -h prints help then exits 0
        return int(exc.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "jobs", None):
        import torch

        torch.set_num_threads(args.jobs)

    started = time.time()
    try:
        sections = _effective_sections(args)
        effective: dict = {}
        if args.command == "fetch":
            summary = _cmd_fetch(args)
        elif args.command == "ingest":
            summary = _cmd_ingest(args)
        elif args.command == "stats":
            summary = _cmd_stats(args)
        elif args.command == "synth":
            summary, effective = _cmd_synth(args, sections)
        elif args.command == "train":
            summary, effective = _cmd_train(args, sections)
        elif args.command == "detect":
            summary = _cmd_detect(args)
        elif args.command == "eval-det":
            summary = _cmd_eval_det(args)
        elif args.command == "eval-ml":
            summary = _cmd_eval_ml(args)
        elif args.command == "probe":
            summary = _cmd_probe(args)
        else:
            summary = _cmd_report(args)
    except IoError as exc:
        logger.error("%s", exc)
        return EXIT_IO
    except NightcallError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE

    out = getattr(args, "out", None)
    if out is not None and not str(out).endswith((".csv", ".jsonl")):
        summary = dict(summary)
        summary["wall_time_s"] = round(time.time() - started, 3)
        _write_run_artifacts(Path(out), args.command, effective, summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
