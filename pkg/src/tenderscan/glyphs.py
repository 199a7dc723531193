"""A 5x7 uppercase bitmap font.

Used to print words onto synthetic pages and by the bundled stub OCR engine
to read them back. No glyph has an empty interior column, so glyphs can be
split on blank columns.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Dict

import numpy as np

GLYPH_W = 5
GLYPH_H = 7
PITCH = GLYPH_W + 1  # one blank column between letters

_FONT = {
    "A": ".###.|#...#|#...#|#####|#...#|#...#|#...#",
    "B": "####.|#...#|#...#|####.|#...#|#...#|####.",
    "C": ".###.|#...#|#....|#....|#....|#...#|.###.",
    "D": "####.|#...#|#...#|#...#|#...#|#...#|####.",
    "E": "#####|#....|#....|####.|#....|#....|#####",
    "F": "#####|#....|#....|####.|#....|#....|#....",
    "G": ".###.|#...#|#....|#.###|#...#|#...#|.###.",
    "H": "#...#|#...#|#...#|#####|#...#|#...#|#...#",
    "I": ".###.|..#..|..#..|..#..|..#..|..#..|.###.",
    "J": "..###|...#.|...#.|...#.|...#.|#..#.|.##..",
    "K": "#...#|#..#.|#.#..|##...|#.#..|#..#.|#...#",
    "L": "#....|#....|#....|#....|#....|#....|#####",
    "M": "#...#|##.##|#.#.#|#.#.#|#...#|#...#|#...#",
    "N": "#...#|#...#|##..#|#.#.#|#..##|#...#|#...#",
    "O": ".###.|#...#|#...#|#...#|#...#|#...#|.###.",
    "P": "####.|#...#|#...#|####.|#....|#....|#....",
    "Q": ".###.|#...#|#...#|#...#|#.#.#|#..#.|.##.#",
    "R": "####.|#...#|#...#|####.|#.#..|#..#.|#...#",
    "S": ".####|#....|#....|.###.|....#|....#|####.",
    "T": "#####|..#..|..#..|..#..|..#..|..#..|..#..",
    "U": "#...#|#...#|#...#|#...#|#...#|#...#|.###.",
    "V": "#...#|#...#|#...#|#...#|#...#|.#.#.|..#..",
    "W": "#...#|#...#|#...#|#.#.#|#.#.#|#.#.#|.#.#.",
    "X": "#...#|#...#|.#.#.|..#..|.#.#.|#...#|#...#",
    "Y": "#...#|#...#|.#.#.|..#..|..#..|..#..|..#..",
    "Z": "#####|....#|...#.|..#..|.#...|#....|#####",
}


@lru_cache(maxsize=None)
def glyph(ch: str) -> np.ndarray:
    rows = _FONT[ch].split("|")
    return np.array([[c == "#" for c in row] for row in rows], dtype=bool)


@lru_cache(maxsize=None)
def trimmed_templates() -> Dict[str, np.ndarray]:
    """Each glyph cropped to its inked columns (what a column splitter sees)."""
    out = {}
    for ch in _FONT:
        g = glyph(ch)
        cols = np.flatnonzero(g.any(axis=0))
        out[ch] = g[:, cols[0]:cols[-1] + 1]
    return out


def text_width(text: str, scale: int) -> int:
    return (len(text) * PITCH - 1) * scale


def render_text(canvas: np.ndarray, text: str, x: int, y: int, scale: int = 2, ink: int = 0) -> None:
    """Draw ``text`` (A-Z and spaces) with its top-left corner at ``(x, y)``."""
    for i, ch in enumerate(text.upper()):
        if ch == " ":
            continue
        g = np.kron(glyph(ch), np.ones((scale, scale), dtype=bool))
        x0 = x + i * PITCH * scale
        region = canvas[y:y + g.shape[0], x0:x0 + g.shape[1]]
        region[g[: region.shape[0], : region.shape[1]]] = ink
