"""Stand-in external engines for hermetic runs.

``python -m tenderscan.stubs ocr IMAGE`` reads words printed in the bundled
bitmap font and writes an OCR TSV table to stdout.

``python -m tenderscan.stubs rasterize INPUT OUTDIR DPI`` unpacks a
synthetic e-paper (a zip archive of page PNGs, see
:func:`write_epaper_container`) into ``OUTDIR/page-N.png`` files, numbered
from 1 the way common PDF rasterizers do.

Both follow the command contracts of the real tools they replace
(``tesseract IMAGE stdout tsv`` and ``pdftoppm -r DPI -png INPUT OUTDIR/page``).
"""
from __future__ import annotations

import argparse
import io
import sys
import zipfile
from pathlib import Path
from typing import List, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .glyphs import GLYPH_H, trimmed_templates
from .ocrfilter import OcrToken, serialize_ocr_tsv

STUB_OCR_TEMPLATE = f"{sys.executable} -m tenderscan.stubs ocr {{input}}"
STUB_RASTERIZER_TEMPLATE = f"{sys.executable} -m tenderscan.stubs rasterize {{input}} {{outdir}} {{dpi}}"

WORD_GAP = 4  # blank font columns that separate words


def _runs(mask: np.ndarray):
    """(start, stop) of consecutive True runs in a 1-D mask."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return list(zip(edges[::2], edges[1::2]))


def _read_glyph(cell: np.ndarray, scale: int):
    """Best template for an ink cell, with a match confidence in [0, 100]."""
    h, w = cell.shape
    small = cell[scale // 2::scale, scale // 2::scale]
    best, best_err = "?", None
    for ch, tpl in trimmed_templates().items():
        if tpl.shape != small.shape:
            continue
        err = int(np.sum(tpl != small))
        if best_err is None or err < best_err:
            best, best_err = ch, err
    if best_err is None:
        return "?", 0.0
    return best, 100.0 * (1.0 - best_err / small.size)


def read_text(gray: np.ndarray) -> List[OcrToken]:
    """Recognise bitmap-font words in a crop.

    Ink touching the crop edge (the notice frame) is ignored. Lines are
    found from the row profile, words and letters from column gaps.
    """
    ink = np.asarray(gray) < 128
    labels, n = ndimage.label(ink, structure=np.ones((3, 3), dtype=bool))
    if n:
        edge = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
        ink &= ~np.isin(labels, edge[edge > 0])

    h, w = ink.shape
    tokens = [OcrToken(1, 1, 0, 0, 0, 0, 0, 0, w, h, -1, "")]
    line_no = 0
    for top, bottom in _runs(ink.any(axis=1)):
        band = ink[top:bottom]
        scale = max(1, int(round((bottom - top) / GLYPH_H)))
        if (bottom - top) != GLYPH_H * scale:
            continue
        cols = _runs(band.any(axis=0))
        if not cols:
            continue
        line_no += 1
        words: List[List] = [[cols[0]]]
        for prev, cur in zip(cols, cols[1:]):
            if cur[0] - prev[1] >= WORD_GAP * scale:
                words.append([cur])
            else:
                words[-1].append(cur)
        left = cols[0][0]
        right = cols[-1][1]
        tokens.append(OcrToken(4, 1, 1, 1, line_no, 0, int(left), int(top), int(right - left), int(bottom - top), -1, ""))
        for word_no, letters in enumerate(words, start=1):
            chars, confs = [], []
            for a, b in letters:
                ch, conf = _read_glyph(band[:, a:b], scale)
                chars.append(ch)
                confs.append(conf)
            x0, x1 = letters[0][0], letters[-1][1]
            tokens.append(OcrToken(
                5, 1, 1, 1, line_no, word_no, int(x0), int(top), int(x1 - x0), int(bottom - top),
                round(min(confs), 6), "".join(chars),
            ))
    return tokens


def write_epaper_container(pages: Sequence[np.ndarray], path) -> Path:
    """Pack page rasters into the zip container the stub rasterizer reads."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for i, page in enumerate(pages):
            buf = io.BytesIO()
            Image.fromarray(np.asarray(page, dtype=np.uint8)).save(buf, format="PNG")
            info = zipfile.ZipInfo(f"page-{i:03d}.png", date_time=(2020, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())
    return path


def _cmd_ocr(args) -> int:
    gray = np.asarray(Image.open(args.image).convert("L"))
    sys.stdout.write(serialize_ocr_tsv(read_text(gray)))
    return 0


def _cmd_rasterize(args) -> int:
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        zf = zipfile.ZipFile(args.input)
    except (OSError, zipfile.BadZipFile) as exc:
        print(f"cannot open {args.input}: {exc}", file=sys.stderr)
        return 1
    with zf:
        names = sorted(n for n in zf.namelist() if n.lower().endswith(".png"))
        for i, name in enumerate(names, start=1):
            (out / f"page-{i}.png").write_bytes(zf.read(name))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python -m tenderscan.stubs")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ocr", help="read bitmap-font words, print OCR TSV")
    p.add_argument("image")
    p.set_defaults(func=_cmd_ocr)
    p = sub.add_parser("rasterize", help="unpack a synthetic e-paper into page PNGs")
    p.add_argument("input")
    p.add_argument("outdir")
    p.add_argument("dpi", type=int)
    p.set_defaults(func=_cmd_rasterize)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
