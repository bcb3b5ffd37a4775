"""Embedded 7x9 digit bitmaps and glyph compositing.

Keeping the font in-source makes rendering bit-exact everywhere: no
platform font lookup, no antialiasing. Glyphs scale by integer
nearest-neighbour only, so edges stay crisp at any frame size.
"""

from __future__ import annotations

import math

import numpy as np

_RAW = {
    "0": (
        ".#####.",
        "#.....#",
        "#....##",
        "#...#.#",
        "#..#..#",
        "#.#...#",
        "##....#",
        "#.....#",
        ".#####.",
    ),
    "1": (
        "...#...",
        "..##...",
        ".#.#...",
        "...#...",
        "...#...",
        "...#...",
        "...#...",
        "...#...",
        ".#####.",
    ),
    "2": (
        ".#####.",
        "#.....#",
        "......#",
        ".....#.",
        "....#..",
        "...#...",
        "..#....",
        ".#.....",
        "#######",
    ),
    "3": (
        ".#####.",
        "#.....#",
        "......#",
        "......#",
        "..####.",
        "......#",
        "......#",
        "#.....#",
        ".#####.",
    ),
    "4": (
        "....##.",
        "...#.#.",
        "..#..#.",
        ".#...#.",
        "#....#.",
        "#######",
        ".....#.",
        ".....#.",
        ".....#.",
    ),
    "5": (
        "#######",
        "#......",
        "#......",
        "######.",
        "......#",
        "......#",
        "......#",
        "#.....#",
        ".#####.",
    ),
    "6": (
        ".#####.",
        "#.....#",
        "#......",
        "#.####.",
        "##....#",
        "#.....#",
        "#.....#",
        "#.....#",
        ".#####.",
    ),
    "7": (
        "#######",
        "......#",
        ".....#.",
        ".....#.",
        "....#..",
        "....#..",
        "...#...",
        "...#...",
        "...#...",
    ),
    "8": (
        ".#####.",
        "#.....#",
        "#.....#",
        "#.....#",
        ".#####.",
        "#.....#",
        "#.....#",
        "#.....#",
        ".#####.",
    ),
    "9": (
        ".#####.",
        "#.....#",
        "#.....#",
        "#....##",
        ".####.#",
        "......#",
        "......#",
        "#.....#",
        ".#####.",
    ),
}

GLYPH_W = 7
GLYPH_H = 9

GLYPHS: dict[str, np.ndarray] = {
    ch: np.array([[c == "#" for c in row] for row in rows], dtype=bool)
    for ch, rows in _RAW.items()
}


def scale_for_frame(frame_h: int) -> int:
    """Integer upscaling factor so glyph height covers max(12, h // 40)."""
    target = max(12, frame_h // 40)
    return max(1, math.ceil(target / GLYPH_H))


def glyph_height(frame_h: int) -> int:
    return GLYPH_H * scale_for_frame(frame_h)


def text_mask(text: str, scale: int = 1, spacing: int = 1) -> np.ndarray:
    """Boolean raster for a digit string, chars separated by `spacing`
    blank base columns, scaled by nearest-neighbour."""
    if not text or any(ch not in GLYPHS for ch in text):
        raise ValueError(f"unrenderable text {text!r}")
    cols = []
    for i, ch in enumerate(text):
        if i:
            cols.append(np.zeros((GLYPH_H, spacing), dtype=bool))
        cols.append(GLYPHS[ch])
    mask = np.concatenate(cols, axis=1)
    if scale > 1:
        mask = np.repeat(np.repeat(mask, scale, axis=0), scale, axis=1)
    return mask


def dilate(mask: np.ndarray) -> np.ndarray:
    """8-neighbourhood binary dilation (one pixel)."""
    h, w = mask.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask
    out = np.zeros_like(mask)
    for dv in (0, 1, 2):
        for du in (0, 1, 2):
            out |= padded[dv:dv + h, du:du + w]
    return out


def text_box(text: str, scale: int, spacing: int = 1) -> tuple[int, int]:
    """(width, height) of the outlined glyph box for `text`."""
    w = (GLYPH_W * len(text) + spacing * (len(text) - 1)) * scale
    return w + 2, GLYPH_H * scale + 2


def stamp_text(img: np.ndarray, center: tuple[int, int], text: str,
               scale: int, fill=(255, 255, 255), outline=(0, 0, 0)) -> None:
    """Composite outlined text centred at `center` onto `img` in place.

    Parts falling outside the raster are clipped. Compositing writes
    constant colours (never reads pixels), so repeating it is a no-op.
    """
    inner = text_mask(text, scale)
    # pad 1 px so the outline survives dilation at the glyph edges
    mask = np.zeros((inner.shape[0] + 2, inner.shape[1] + 2), dtype=bool)
    mask[1:-1, 1:-1] = inner
    edge = dilate(mask) & ~mask
    mh, mw = mask.shape
    u0 = center[0] - mw // 2
    v0 = center[1] - mh // 2
    h, w = img.shape[:2]
    for grid, colour in ((edge, outline), (mask, fill)):
        vs, us = np.nonzero(grid)
        vs = vs + v0
        us = us + u0
        keep = (vs >= 0) & (vs < h) & (us >= 0) & (us < w)
        img[vs[keep], us[keep]] = colour
