"""Command-line entry point: ``learnpredict {synth,run,gradcheck,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import InputError, LearnPredictError, ValidationError
from .evaluate import (
    EvalReport,
    read_segment_stats,
    read_trace,
    run_experiment,
    segment_stats_report,
    write_segment_stats,
)
from .features import assemble_feature_matrix
from .ingest import load_dataset, validate_dataset
from .models import MODEL_KINDS, gradcheck_kind
from .synth import FILES, generate, planted_check
from .textpipe import embed_course, load_embeddings, load_stopwords

log = logging.getLogger("learnpredict")

GRADCHECK_TOL = 1e-4


def cmd_synth(cfg: cfgmod.RunConfig) -> int:
    out = cfg.path("out")
    course = generate(cfg.synth)
    paths = course.write(out)
    check = planted_check(course.dataset, course.embeddings, cfg.synth.relevant_segments, seed=cfg.synth.seed)
    (out / "planted_check.json").write_text(json.dumps(check, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(paths)} files to {out}")
    print(
        "planted check: similarity gap {:+.4f}, correlation gap {:+.4f}, pass rate {:.3f}, ok={}".format(
            check["similarity_gap"] or 0.0, check["correlation_gap"] or 0.0, check["pass_rate"], check["ok"]
        )
    )
    return 0


def _load_inputs(cfg: cfgmod.RunConfig):
    dataset, issues = load_dataset(
        cfg.path("clickstream"), cfg.path("course"), cfg.path("outcomes"), cfg.clickstream_format
    )
    for issue in issues[:20]:
        log.warning("line %d: %s", issue.line, issue.message)
    if len(issues) > 20:
        log.warning("... %d more malformed lines", len(issues) - 20)
    entries = validate_dataset(dataset, strict=cfg.strict)
    for e in entries[:20]:
        log.warning("%s: %s (%s)", e.code, e.subject, e.message)
    if cfg.strict and entries:
        raise ValidationError(f"{len(entries)} validation problems in strict mode")
    course = None
    if any(m in ("esn", "tbn") for m in cfg.models):
        emb_path = cfg.paths.get("embeddings")
        if emb_path is None or not Path(emb_path).is_file():
            raise ValidationError(f"models esn/tbn need an embedding file; not found: {emb_path}")
        table = load_embeddings(emb_path)
        stop = load_stopwords(cfg.paths["stopwords"]) if cfg.paths.get("stopwords") else None
        course = embed_course(
            [s.raw_text for s in dataset.segments], [q.raw_text for q in dataset.quiz], table, stopwords=stop
        )
    return dataset, course


def with_data_dir(cfg: cfgmod.RunConfig, data: Path) -> cfgmod.RunConfig:
    paths = dict(cfg.paths)
    for key in ("clickstream", "course", "outcomes", "embeddings"):
        if paths.get(key) is None:
            paths[key] = data / FILES[key]
    return replace(cfg, paths=paths)


def render_figures(out: Path, relevant=()) -> list[Path]:
    """Draw figures from the CSV/JSON files of a finished run directory."""
    from . import plotting

    made = []
    stats_path = out / "segment_stats.csv"
    if stats_path.is_file():
        made.append(plotting.plot_segment_stats(read_segment_stats(stats_path), out / "segment_stats.png", relevant))
    traces = {}
    for p in sorted((out / "traces").glob("*_trace.csv")):
        traces[p.name[: -len("_trace.csv")]] = read_trace(p)
    if traces:
        made.append(plotting.plot_training_curves(traces, out / "training_curves.png"))
    summary_path = out / "summary.json"
    if summary_path.is_file():
        table = json.loads(summary_path.read_text(encoding="utf-8"))["table"]
        made.append(plotting.plot_auc_summary(table, out / "auc_summary.png"))
    return made


def _relevant_hint(cfg: cfgmod.RunConfig) -> tuple[int, ...]:
    meta = cfg.path("clickstream").parent / "synth_meta.json"
    if meta.is_file():
        return tuple(json.loads(meta.read_text(encoding="utf-8"))["config"]["relevant_segments"])
    return ()


def cmd_run(cfg: cfgmod.RunConfig, figures: bool = True) -> EvalReport:
    out = cfg.path("out")
    started = time.perf_counter()
    dataset, course = _load_inputs(cfg)
    fm = assemble_feature_matrix(dataset, cfg.engagement, cfg.layout, normalize=False)
    if np.unique(fm.labels).size < 2:
        raise ValidationError("outcomes contain a single class; AUC is undefined")
    report = run_experiment(fm, course, cfg.experiment())
    hint = _relevant_hint(cfg)
    if hint:
        report.settings["relevant_segments"] = list(hint)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out)
    write_segment_stats(segment_stats_report(dataset, cfg.engagement), out / "segment_stats.csv")
    if figures:
        render_figures(out, hint)
    summary = report.summary()
    print(f"{'model':<6} {'accuracy':>9} {'auc':>7} {'ce_mean':>8}")
    for m in report.models:
        s = summary[m]
        print(f"{m:<6} {s['accuracy']:9.4f} {s['auc']:7.4f} {s['ce_mean']:8.4f}")
    log.info("run finished in %.1f s", time.perf_counter() - started)
    return report


def cmd_gradcheck(seed: int, n_seeds: int = 10) -> int:
    seeds = [seed + i for i in range(n_seeds)]
    failed = False
    for kind in MODEL_KINDS:
        err = gradcheck_kind(kind, seeds)
        ok = err < GRADCHECK_TOL
        failed |= not ok
        print(f"{kind}: max relative error {err:.3e} {'ok' if ok else 'FAIL'}")
    return 1 if failed else 0


def cmd_report(out: Path) -> int:
    if not out.is_dir():
        raise InputError(f"no run directory at {out}")
    hint = ()
    summary = out / "summary.json"
    if summary.is_file():
        hint = tuple(json.loads(summary.read_text(encoding="utf-8"))["settings"].get("relevant_segments", ()))
    made = render_figures(out, hint)
    if not made:
        raise InputError(f"{out} holds no report files to draw")
    for p in made:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="learnpredict", description=__doc__)
    parser.add_argument("--config", type=Path, help="INI configuration file")
    parser.add_argument("--seed", type=int, help="override the run and generator seed")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", help="generate a synthetic course")
    run = sub.add_parser("run", help="cross-validate the configured models")
    run.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    run.add_argument("--epochs", type=int, help="override train.epochs")
    run.add_argument("--data", type=Path, help="directory written by 'synth'; fills unset input paths")
    grad = sub.add_parser("gradcheck", help="finite-difference gradient check of the networks")
    grad.add_argument("--n-seeds", type=int, default=10)
    sub.add_parser("report", help="redraw figures for an existing run directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = cfgmod.with_overrides(cfgmod.load_config(args.config), seed=args.seed, out=args.out)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "run":
            if args.epochs is not None:
                cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
            if args.data is not None:
                cfg = with_data_dir(cfg, args.data)
            cmd_run(cfg, figures=not args.no_figures)
            return 0
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg.seed, args.n_seeds)
        return cmd_report(cfg.path("out"))
    except LearnPredictError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
