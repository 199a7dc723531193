"""End-to-end run: fetch, rasterize, segment, classify, OCR-filter, manifest."""
from __future__ import annotations

import datetime as dt
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from ..fetcher import fetch_source, rasterize_pdf
from ..imagecore import BBox, to_grayscale
from ..neuralnet import POSITIVE, Model, load_weights, predict_batch
from ..ocrfilter import is_tender, load_keywords, run_ocr
from ..segmenter import segment_page
from .config import ConfigError, PipelineConfig
from .manifest import Manifest, NoticeRecord, export_manifest, utc_now

log = logging.getLogger(__name__)


def load_gray(path) -> np.ndarray:
    """Read an image file as uint8 grayscale."""
    with Image.open(path) as im:
        if im.mode in ("1", "L", "P", "I", "I;16"):
            return np.asarray(im.convert("L"))
        return to_grayscale(np.asarray(im.convert("RGB")))


def save_png(img: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        Image.fromarray(np.asarray(img, dtype=np.uint8)).save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def crop_name(page: int, box: BBox) -> str:
    return f"page-{page:03d}_{box.x}_{box.y}_{box.w}_{box.h}.png"


def load_classifier(config: PipelineConfig) -> Model:
    if config.weights is None:
        raise ConfigError("no weights file configured")
    model = load_weights(config.weights)
    if model.arch != config.arch:
        raise ConfigError(f"weights hold a {model.arch} model but arch = {config.arch!r}")
    return model


@dataclass
class PageJob:
    source: str
    date: str
    page: int
    image_path: Path


class PageProcessor:
    """Classify and OCR-filter the regions of one page image."""

    def __init__(self, config: PipelineConfig, model: Model, keywords: FrozenSet[str]):
        self.config = config
        self.model = model
        self.keywords = keywords
        self.work = Path(config.work_dir)

    def __call__(self, job: PageJob) -> List[NoticeRecord]:
        cfg = self.config
        page = load_gray(job.image_path)
        regions = segment_page(page, cfg.segmentation)
        if not regions:
            return []
        preds = predict_batch(self.model, [c for _, c in regions])
        crops_dir = self.work / "crops" / job.source / job.date
        rejects_dir = self.work / "rejects" / job.source / job.date
        records = []
        for (box, img), (label, score) in zip(regions, preds):
            name = crop_name(job.page, box)
            if label != POSITIVE:
                if cfg.debug_rejects:
                    save_png(img, rejects_dir / name)
                continue
            path = save_png(img, crops_dir / name)
            tokens = run_ocr(path, cfg.ocr_command)
            decision = is_tender(tokens, self.keywords, cfg.min_common, cfg.min_conf)
            if not decision.is_tender:
                if cfg.debug_rejects:
                    rejects_dir.mkdir(parents=True, exist_ok=True)
                    os.replace(path, rejects_dir / name)
                else:
                    path.unlink(missing_ok=True)
                continue
            records.append(NoticeRecord(
                source=job.source, date=job.date, page=job.page, bbox=box,
                crop_path=str(path), score=score,
                matched_keywords=sorted(decision.matched),
                common_count=decision.common_count,
                decided=True, extracted_at=utc_now(),
            ))
        return records


def process_pages(jobs: Sequence[PageJob], processor, workers: int = 1) -> Tuple[List[NoticeRecord], List[dict]]:
    """Run ``processor`` over page jobs; a failing page is logged and skipped."""
    def guarded(job):
        try:
            return processor(job), None
        except Exception as exc:  # per-page fault isolation
            log.warning("skipping %s page %d (%s): %s", job.source, job.page, job.image_path, exc)
            return [], {"source": job.source, "date": job.date, "page": job.page,
                        "error": f"{type(exc).__name__}: {exc}"}

    records, skipped = [], []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for recs, err in pool.map(guarded, jobs):
            records.extend(recs)
            if err is not None:
                skipped.append(err)
    return records, skipped


def rasterize_source(config: PipelineConfig, source, date: str) -> Tuple[List[PageJob], List[dict]]:
    """Download one source's PDFs and rasterize them into page jobs."""
    jobs, skipped = [], []
    try:
        downloads = fetch_source(source, date)
    except Exception as exc:
        log.warning("fetch failed for %s: %s", source.name, exc)
        return [], [{"source": source.name, "date": date, "page": None,
                     "error": f"{type(exc).__name__}: {exc}"}]
    page_no = 0
    for rec in downloads:
        pdf = Path(rec.path)
        out = Path(config.work_dir) / "pages" / source.name / date / pdf.stem
        try:
            pages = rasterize_pdf(pdf, config.dpi, out, config.rasterizer_command)
        except Exception as exc:
            log.warning("rasterizing %s failed: %s", pdf, exc)
            skipped.append({"source": source.name, "date": date, "page": None,
                            "error": f"{type(exc).__name__}: {exc}"})
            continue
        for p in pages:
            jobs.append(PageJob(source.name, date, page_no, p))
            page_no += 1
    return jobs, skipped


def run_full(config: PipelineConfig, date: Optional[str] = None, model: Optional[Model] = None,
             keywords: Optional[FrozenSet[str]] = None, write: bool = True) -> Manifest:
    """Run every configured source through the pipeline and write the manifest.

    Records are ordered by (source, date, page, bbox) regardless of worker
    scheduling.
    """
    date = date or dt.date.today().isoformat()
    manifest = Manifest(config_hash=config.config_hash())
    if config.sources:
        if keywords is None:
            config.check_paths(need_weights=model is None)
            keywords = load_keywords(config.keywords)
        if model is None:
            model = load_classifier(config)
        processor = PageProcessor(config, model, keywords)
        for source in config.sources:
            jobs, skipped = rasterize_source(config, source, date)
            records, page_skips = process_pages(jobs, processor, config.workers)
            manifest.records.extend(records)
            manifest.skipped.extend(skipped + page_skips)
    manifest.records.sort(key=NoticeRecord.sort_key)
    if write:
        export_manifest(manifest, config.manifest)
    log.info("run %s: %d record(s), %d skipped", manifest.run_id, len(manifest.records), len(manifest.skipped))
    return manifest
