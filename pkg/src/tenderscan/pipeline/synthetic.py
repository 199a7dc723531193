"""Synthetic newspaper pages and classifier patches.

Pages are white with black-bordered frames at random non-overlapping
positions, surrounded by filler body text and column rules. Frame kinds:

* ``tender``     -- notice frame whose text includes tender keywords
* ``distractor`` -- notice frame with keyword-free text
* ``photo``      -- bordered box filled with smooth noise (not a notice)

Text is printed in the bundled bitmap font so the stub OCR engine can
read it back.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ..glyphs import GLYPH_H, render_text, text_width
from ..imagecore import BBox, prepare_crop

TENDER_WORDS = (
    "TENDER", "NOTICE", "BID", "BIDS", "SEALED", "QUOTATION",
    "PROCUREMENT", "CONTRACT", "INVITATION", "BIDDER",
)
DISTRACTOR_WORDS = (
    "SALE", "RENT", "VACANCY", "WANTED", "ADMISSION", "GREETINGS",
    "MARRIAGE", "LOST", "FOUND", "CLASSIFIED", "AUCTION", "CONDOLENCE",
)
FILLER_WORDS = (
    "THE", "OF", "AND", "FOR", "WORK", "ROAD", "DATE", "OFFICE", "NEPAL",
    "DISTRICT", "CITY", "YEAR", "PUBLIC", "WATER", "SCHOOL", "BRIDGE",
    "MINISTRY", "PROJECT", "LOCAL", "AREA",
)

KINDS = ("tender", "distractor", "photo")
NOTICE_KINDS = ("tender", "distractor")


class SpecInfeasible(ValueError):
    pass


@dataclass
class CorpusSpec:
    page_w: int = 600
    page_h: int = 800
    frames_per_page: int = 3
    kinds: Sequence[str] = KINDS
    # explicit per-page frame kinds; overrides frames_per_page/kinds
    plan: Optional[Sequence[Sequence[str]]] = None
    frame_w: Tuple[int, int] = (170, 280)
    frame_h: Tuple[int, int] = (110, 220)
    text_scale: int = 2
    margin: int = 12
    body_text: bool = True
    min_keywords: int = 3


@dataclass
class PlantedFrame:
    bbox: BBox
    kind: str
    words: List[str] = field(default_factory=list)


def _line_up(words: Sequence[str], max_w: int, scale: int) -> List[str]:
    lines, cur = [], ""
    for w in words:
        if text_width(w, scale) > max_w:
            continue
        cand = f"{cur} {w}" if cur else w
        if text_width(cand, scale) <= max_w:
            cur = cand
        else:
            if cur:
                lines.append(cur)
            cur = w
    if cur:
        lines.append(cur)
    return lines


def _frame_words(kind: str, rng: np.random.Generator, min_keywords: int) -> List[str]:
    if kind == "tender":
        k = int(rng.integers(min_keywords, min_keywords + 3))
        keys = list(rng.choice(TENDER_WORDS, size=min(k, len(TENDER_WORDS)), replace=False))
        fill = list(rng.choice(FILLER_WORDS, size=int(rng.integers(4, 10))))
        words = keys + fill
    else:
        keys = list(rng.choice(DISTRACTOR_WORDS, size=int(rng.integers(2, 4)), replace=False))
        fill = list(rng.choice(FILLER_WORDS, size=int(rng.integers(4, 10))))
        words = keys + fill
    return [str(w) for w in words]


def render_frame(kind: str, w: int, h: int, rng: np.random.Generator, scale: int = 2,
                 min_keywords: int = 3) -> Tuple[np.ndarray, List[str]]:
    """A ``h x w`` frame image and the words printed inside it."""
    if kind not in KINDS:
        raise ValueError(f"unknown frame kind {kind!r}")
    img = np.full((h, w), 255, dtype=np.uint8)
    t = int(rng.integers(2, 4))
    img[:t] = img[-t:] = 0
    img[:, :t] = img[:, -t:] = 0
    inner = img[t:h - t, t:w - t]
    if kind == "photo":
        noise = ndimage.gaussian_filter(rng.standard_normal(inner.shape), sigma=float(rng.uniform(1.0, 3.0)))
        noise = (noise - noise.min()) / max(np.ptp(noise), 1e-9)
        inner[...] = np.clip(noise * 230, 0, 255).astype(np.uint8)
        return img, []

    pad = t + 6
    words = _frame_words(kind, rng, min_keywords)
    line_h = GLYPH_H * scale + 2 * scale
    max_lines = (h - 2 * pad) // line_h
    lines = _line_up(words, w - 2 * pad, scale)[:max_lines]
    kept = " ".join(lines).split()
    if kind == "tender" and len(set(kept) & set(TENDER_WORDS)) < min_keywords:
        raise SpecInfeasible(f"{w}x{h} frame too small for {min_keywords} keywords")
    for i, line in enumerate(lines):
        render_text(img, line, pad, pad + i * line_h, scale)
    return img, kept


def _overlaps(box: BBox, others: Sequence[BBox], margin: int) -> bool:
    for o in others:
        if (box.x < o.x2 + margin and o.x < box.x2 + margin
                and box.y < o.y2 + margin and o.y < box.y2 + margin):
            return True
    return False


def _body_text(page: np.ndarray, frames: Sequence[BBox], rng: np.random.Generator, margin: int) -> None:
    h, w = page.shape
    scale = 1
    line_h = GLYPH_H * scale + 5
    col_w = w // 3
    for col in range(3):
        x0 = col * col_w + 10
        avail = col_w - 20
        if col:
            rule_x = col * col_w
            for y in range(10, h - 10):
                pt = BBox(rule_x, y, 1, 1)
                if not _overlaps(pt, frames, margin):
                    page[y, rule_x] = 0
        for y in range(14, h - 14 - line_h, line_h):
            if rng.random() < 0.3:
                continue
            words = list(rng.choice(FILLER_WORDS, size=8))
            line = _line_up(words, avail, scale)[0]
            box = BBox(x0, y, text_width(line, scale), GLYPH_H * scale)
            if _overlaps(box, frames, margin):
                continue
            render_text(page, line, x0, y, scale)


def render_page(kinds: Sequence[str], spec: CorpusSpec, rng: np.random.Generator) -> Tuple[np.ndarray, List[PlantedFrame]]:
    page = np.full((spec.page_h, spec.page_w), 255, dtype=np.uint8)
    boxes: List[BBox] = []
    for _ in kinds:
        for _attempt in range(500):
            fw = int(rng.integers(spec.frame_w[0], spec.frame_w[1] + 1))
            fh = int(rng.integers(spec.frame_h[0], spec.frame_h[1] + 1))
            if fw + 2 * spec.margin > spec.page_w or fh + 2 * spec.margin > spec.page_h:
                raise SpecInfeasible("frame larger than the page")
            x = int(rng.integers(spec.margin, spec.page_w - fw - spec.margin + 1))
            y = int(rng.integers(spec.margin, spec.page_h - fh - spec.margin + 1))
            box = BBox(x, y, fw, fh)
            if not _overlaps(box, boxes, spec.margin):
                boxes.append(box)
                break
        else:
            raise SpecInfeasible(f"cannot place {len(kinds)} frames on a {spec.page_w}x{spec.page_h} page")

    truth = []
    for box, kind in zip(boxes, kinds):
        img, words = render_frame(kind, box.w, box.h, rng, spec.text_scale, spec.min_keywords)
        page[box.y:box.y2, box.x:box.x2] = img
        truth.append(PlantedFrame(box, kind, words))
    if spec.body_text:
        _body_text(page, boxes, rng, spec.margin // 2)
    return page, truth


def generate_synthetic_corpus(n_pages: int, spec: Optional[CorpusSpec] = None, seed: int = 0):
    """Render ``n_pages`` pages; returns ``(pages, truth)`` with one frame list per page."""
    spec = spec or CorpusSpec()
    if n_pages < 1:
        raise ValueError("n_pages must be >= 1")
    rng = np.random.default_rng(seed)
    pages, truth = [], []
    for i in range(n_pages):
        if spec.plan is not None:
            kinds = list(spec.plan[i]) if i < len(spec.plan) else []
        else:
            kinds = [str(k) for k in rng.choice(spec.kinds, size=spec.frames_per_page)]
        page, frames = render_page(kinds, spec, rng)
        pages.append(page)
        truth.append(frames)
    return pages, truth


def make_patch_dataset(n: int, size: int = 64, seed: int = 0, fill: int = 0,
                       scale: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    """Two-class patch set: framed notices (label 1) versus noise boxes (label 0).

    Each patch is rendered at a random aspect ratio and sent through the same
    grayscale/pad/resize path the pipeline applies to page crops. Returns
    ``(x, y)`` with ``x`` of shape ``(n, 1, size, size)`` scaled to [0, 1].
    """
    rng = np.random.default_rng(seed)
    labels = np.array([i % 2 for i in range(n)], dtype=np.int64)
    labels = labels[rng.permutation(n)]
    xs = np.empty((n, 1, size, size))
    for i, lab in enumerate(labels):
        w = int(rng.integers(170, 300))
        h = int(rng.integers(110, 240))
        if lab:
            kind = "tender" if rng.random() < 0.5 else "distractor"
            img, _ = render_frame(kind, w, h, rng, scale)
        elif rng.random() < 0.75:
            img, _ = render_frame("photo", w, h, rng, scale)
        else:
            img = np.clip(rng.normal(128, 70, size=(h, w)), 0, 255).astype(np.uint8)
        xs[i, 0] = prepare_crop(img, size, fill) / 255.0
    return xs, labels


def build_synthetic_site(out_dir, n_pages: int, spec: Optional[CorpusSpec] = None, seed: int = 0,
                         n_issues: int = 1) -> dict:
    """Write a hermetic e-paper site: an index page, e-paper files and keywords.

    Each issue is a zip container of page rasters (see
    :func:`tenderscan.stubs.write_epaper_container`) saved under a ``.pdf``
    name and linked from ``index.html`` with ``class="pdf"``. Ground truth
    goes to ``truth.json``. Returns paths and the planted frames per issue.
    """
    import json
    from pathlib import Path

    from ..stubs import write_epaper_container

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    links, truth_doc, issues = [], [], []
    for i in range(n_issues):
        pages, truth = generate_synthetic_corpus(n_pages, spec, seed + i)
        name = f"issue-{i + 1:02d}.pdf"
        write_epaper_container(pages, out / name)
        links.append(f'<li><span class="btn pdf"><a href="{name}">Issue {i + 1}</a></span></li>')
        issues.append((pages, truth))
        truth_doc.append({
            "file": name,
            "pages": [[{"bbox": f.bbox.as_dict(), "kind": f.kind, "words": f.words} for f in frames]
                      for frames in truth],
        })
    (out / "index.html").write_text(
        "<!doctype html><html><head><title>E-paper</title></head><body>\n<ul>\n"
        + "\n".join(links) + "\n</ul>\n</body></html>\n", encoding="utf-8")
    (out / "keywords.txt").write_text(
        "# tender keywords\n" + "\n".join(w.lower() for w in TENDER_WORDS) + "\n", encoding="utf-8")
    (out / "truth.json").write_text(json.dumps(truth_doc, indent=2))
    return {"index": out / "index.html", "keywords": out / "keywords.txt",
            "truth": out / "truth.json", "issues": issues}
