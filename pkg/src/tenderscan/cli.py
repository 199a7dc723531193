"""Command-line interface.

Exit codes: 0 success, 1 configuration or usage error, 2 stage failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .fetcher import FetchError, fetch_source, rasterize_pdf
from .neuralnet import ARCHS, NeuralNetError, predict_batch
from .ocrfilter import OcrError, is_tender, load_keywords, run_ocr
from .pipeline.config import ConfigError, PipelineConfig, load_config
from .pipeline.manifest import ManifestError, load_manifest
from .pipeline.report import (
    MissingRun,
    compare_models_report,
    load_training_runs,
    read_table_csv,
    write_report,
)
from .pipeline.run import crop_name, load_classifier, load_gray, run_full, save_png
from .pipeline.server import PortInUse, make_server
from .pipeline.synthetic import CorpusSpec, SpecInfeasible, build_synthetic_site
from .pipeline.trainer import train_classifier
from .segmenter import segment_page

log = logging.getLogger("tenderscan")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _out() -> csv.writer:
    return csv.writer(sys.stdout, lineterminator="\n")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    for opt, key in (("dpi", "dpi"), ("arch", "arch"), ("min_common", "min_common"), ("port", "port")):
        val = getattr(args, opt, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "weights", None):
        overrides["weights"] = str(Path(args.weights).resolve())
    train_over = {k: getattr(args, k) for k in ("epochs", "seed") if getattr(args, k, None) is not None}
    try:
        if train_over:
            overrides["train"] = dataclasses.replace(cfg.train, **train_over)
        return dataclasses.replace(cfg, **overrides) if overrides else cfg
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_fetch(args) -> int:
    cfg = _config(args)
    if not cfg.sources:
        raise ConfigError("no sources configured")
    w = _out()
    w.writerow(["source", "url", "path", "size", "sha256", "status"])
    for src in cfg.sources:
        for rec in fetch_source(src, args.date):
            w.writerow([src.name, rec.url, rec.path, rec.size, rec.sha256, rec.status])
    return EXIT_OK


def cmd_rasterize(args) -> int:
    cfg = _config(args)
    out = args.out or Path(args.pdf).with_suffix("")
    for p in rasterize_pdf(args.pdf, cfg.dpi, out, cfg.rasterizer_command):
        print(p)
    return EXIT_OK


def cmd_segment(args) -> int:
    cfg = _config(args)
    page = load_gray(args.image)
    w = _out()
    w.writerow(["x", "y", "w", "h", "crop_path"])
    for box, img in segment_page(page, cfg.segmentation):
        path = save_png(img, Path(args.out) / crop_name(args.page, box)) if args.out else ""
        w.writerow([box.x, box.y, box.w, box.h, path])
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    archs = ARCHS if args.all_archs else (cfg.arch,)
    w = _out()
    w.writerow(["arch", "epochs", "train_acc", "test_acc", "accuracy", "precision", "recall", "f1", "weights"])
    for arch in archs:
        res = train_classifier(cfg, args.out, arch=arch)
        last = res.history[-1]
        m = res.final
        w.writerow([arch, last["epoch"], f"{last['train_acc']:.4f}", f"{last['test_acc']:.4f}",
                    *(f"{getattr(m, k):.4f}" if m else "" for k in ("accuracy", "precision", "recall", "f1")),
                    res.files["weights"]])
    return EXIT_OK


def cmd_classify(args) -> int:
    cfg = _config(args)
    model = load_classifier(cfg) if cfg.weights else None
    if model is None:
        raise ConfigError("no weights given (use --weights or the weights key)")
    images = [load_gray(p) for p in args.images]
    w = _out()
    w.writerow(["path", "label", "score"])
    for path, (label, score) in zip(args.images, predict_batch(model, images)):
        w.writerow([path, label, f"{score:.6f}"])
    return EXIT_OK


def cmd_filter(args) -> int:
    cfg = _config(args)
    if not cfg.keywords:
        raise ConfigError("no keyword file configured")
    keywords = load_keywords(cfg.keywords)
    w = _out()
    w.writerow(["path", "is_tender", "common_count", "matched_keywords"])
    for path in args.images:
        d = is_tender(run_ocr(path, cfg.ocr_command), keywords, cfg.min_common, cfg.min_conf)
        w.writerow([path, int(d.is_tender), d.common_count, " ".join(sorted(d.matched))])
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.debug_rejects:
        cfg = dataclasses.replace(cfg, debug_rejects=True)
    if cfg.sources:
        cfg.check_paths(need_weights=True)
    manifest = run_full(cfg, date=args.date)
    w = _out()
    w.writerow(["source", "date", "page", "x", "y", "w", "h", "score", "common_count", "matched_keywords", "crop_path"])
    for r in manifest.records:
        b = r.bbox
        w.writerow([r.source, r.date, r.page, b.x, b.y, b.w, b.h, f"{r.score:.6f}", r.common_count,
                    " ".join(r.matched_keywords), r.crop_path])
    for s in manifest.skipped:
        log.warning("skipped %s page %s: %s", s["source"], s["page"], s["error"])
    print(f"# run {manifest.run_id}: {len(manifest.records)} notice(s) -> {cfg.manifest}", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    runs = []
    for d in args.runs or ():
        runs.extend(load_training_runs(d))
    for t in args.table or ():
        runs.extend(read_table_csv(t))
    required = None
    if args.require:
        required = [(a, e) for a in ARCHS for e in args.require]
    report = compare_models_report(runs, required)
    sys.stdout.write(report.table_csv())
    if args.out:
        files = write_report(report, args.out)
        for name, path in files.items():
            print(f"# {name}: {path}", file=sys.stderr)
    print(f"# selected: {report.selected.name}", file=sys.stderr)
    return EXIT_OK


def cmd_serve(args) -> int:
    cfg = _config(args)
    paths = args.manifest or [cfg.manifest]
    manifests = [load_manifest(p) for p in paths]
    server = make_server(manifests, cfg.port, args.host)
    host, port = server.server_address[:2]
    print(f"serving {len(manifests)} manifest(s) on http://{host}:{port}/notices", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = CorpusSpec(frames_per_page=args.frames)
    site = build_synthetic_site(args.out, args.pages, spec, seed=args.seed, n_issues=args.issues)
    print(site["index"].resolve().as_uri())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tenderscan", description="Extract tender notices from e-newspaper pages.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_, *opts):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="TOML config file")
        for opt in opts:
            if opt == "dpi":
                sp.add_argument("--dpi", type=int)
            elif opt == "arch":
                sp.add_argument("--arch", choices=ARCHS)
            elif opt == "epochs":
                sp.add_argument("--epochs", type=int)
            elif opt == "seed":
                sp.add_argument("--seed", type=int)
            elif opt == "min-common":
                sp.add_argument("--min-common", dest="min_common", type=int)
            elif opt == "port":
                sp.add_argument("--port", type=int)
            elif opt == "weights":
                sp.add_argument("--weights", help="weight file (overrides config)")
        sp.set_defaults(func=func)
        return sp

    sp = add("fetch", cmd_fetch, "download e-paper PDFs of all sources")
    sp.add_argument("--date", help="date folder (default today)")
    sp = add("rasterize", cmd_rasterize, "render a PDF into page images", "dpi")
    sp.add_argument("pdf")
    sp.add_argument("--out", help="output directory")
    sp = add("segment", cmd_segment, "list rectangular regions of a page image")
    sp.add_argument("image")
    sp.add_argument("--out", help="write crops here")
    sp.add_argument("--page", type=int, default=0, help="page index used in crop names")
    sp = add("train", cmd_train, "train the classifier", "arch", "epochs", "seed")
    sp.add_argument("--out", default="models", help="output directory")
    sp.add_argument("--all-archs", action="store_true", help="train all three architectures")
    sp = add("classify", cmd_classify, "classify crop images", "arch", "weights")
    sp.add_argument("images", nargs="+")
    sp = add("filter", cmd_filter, "OCR crops and apply the keyword rule", "min-common")
    sp.add_argument("images", nargs="+")
    sp = add("run", cmd_run, "full pipeline over all sources", "dpi", "arch", "min-common", "weights", "seed")
    sp.add_argument("--date", help="date folder (default today)")
    sp.add_argument("--debug-rejects", action="store_true", help="keep rejected crops")
    sp = add("report", cmd_report, "compare trained models")
    sp.add_argument("--runs", action="append", help="training output directory (repeatable)")
    sp.add_argument("--table", action="append", help="metrics table CSV (repeatable)")
    sp.add_argument("--require", type=int, action="append", metavar="EPOCHS",
                    help="require every architecture at this checkpoint (repeatable)")
    sp.add_argument("--out", help="write CSVs and figures here")
    sp = add("serve", cmd_serve, "serve manifests read-only over HTTP", "port")
    sp.add_argument("--manifest", action="append", help="manifest file (repeatable)")
    sp.add_argument("--host", default="127.0.0.1")
    sp = add("synth", cmd_synth, "write a synthetic e-paper site")
    sp.add_argument("--out", required=True)
    sp.add_argument("--pages", type=int, default=5)
    sp.add_argument("--frames", type=int, default=3)
    sp.add_argument("--issues", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FetchError, OcrError, NeuralNetError, ManifestError, MissingRun, PortInUse,
            SpecInfeasible, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
