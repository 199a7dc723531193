"""Rectangular region detection on binarised pages.

Ink is split into connected components; components whose bounding box is
large enough and whose ink covers the box outline (a drawn frame, or a solid
block) become region nodes. Nodes are then arranged in a containment tree.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from .imagecore import AUTO, BBox, crop, threshold_binary

DEFAULT_MIN_FRAC = 0.05


@dataclass(frozen=True)
class Component:
    label: int
    bbox: BBox
    area: int


@dataclass
class RegionNode:
    bbox: BBox
    rectangularity: float
    area: int
    children: List[int] = field(default_factory=list)
    parent: Optional[int] = None

    @property
    def is_root(self) -> bool:
        return self.parent is None


@dataclass
class SegmentationParams:
    """Region acceptance thresholds.

    ``min_w``/``min_h`` of ``None`` mean 5% of the page width.
    """

    min_w: Optional[int] = None
    min_h: Optional[int] = None
    max_frac: float = 0.9
    threshold: Union[int, str] = AUTO
    invert: bool = True
    rect_tol: float = 0.25
    connectivity: int = 8

    def __post_init__(self):
        if not 0 < self.max_frac <= 1:
            raise ValueError("max_frac must lie in (0, 1]")
        for name in ("min_w", "min_h"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")
        if not 0 <= self.rect_tol <= 1:
            raise ValueError("rect_tol must lie in [0, 1]")

    def resolved(self, page_w: int) -> Tuple[int, int]:
        default = max(1, int(round(DEFAULT_MIN_FRAC * page_w)))
        return (
            self.min_w if self.min_w is not None else default,
            self.min_h if self.min_h is not None else default,
        )


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 8:
        return np.ones((3, 3), dtype=bool)
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    raise ValueError("connectivity must be 4 or 8")


def connected_components(img: np.ndarray, connectivity: int = 8) -> Tuple[np.ndarray, List[Component]]:
    """Label foreground pixels.

    Returns an ``int32`` label map (0 = background) and the components, with
    labels renumbered densely from 1 in (top, left) order of their boxes.
    """
    img = np.asarray(img, dtype=bool)
    raw, n = ndimage.label(img, structure=_structure(connectivity))
    if n == 0:
        return np.zeros(img.shape, dtype=np.int32), []

    slices = ndimage.find_objects(raw)
    areas = np.bincount(raw.ravel(), minlength=n + 1)
    # scipy numbers components in raster order of their first pixel; the
    # stable sort keeps that as the tie-break for equal top-left corners
    order = sorted(range(n), key=lambda i: (slices[i][0].start, slices[i][1].start))
    remap = np.zeros(n + 1, dtype=np.int32)
    comps = []
    for new, old in enumerate(order, start=1):
        remap[old + 1] = new
        ys, xs = slices[old]
        box = BBox(xs.start, ys.start, xs.stop - xs.start, ys.stop - ys.start)
        comps.append(Component(new, box, int(areas[old + 1])))
    return remap[raw], comps


def outline_coverage(mask: np.ndarray) -> float:
    """Fraction of a box's one-pixel outline covered by ``mask``.

    ``mask`` is the component cropped to its own bounding box, so a drawn
    frame or a solid block scores 1.0 while glyphs and blobs score low.
    """
    h, w = mask.shape
    if h <= 2 or w <= 2:
        return float(mask.mean())
    hits = mask[0].sum() + mask[-1].sum() + mask[1:-1, 0].sum() + mask[1:-1, -1].sum()
    return float(hits) / (2 * w + 2 * (h - 2))


def build_region_tree(img: np.ndarray, params: SegmentationParams) -> List[RegionNode]:
    """Accepted regions of a binary page as a flat, containment-linked list.

    Nodes come in (top, left) order; ``children``/``parent`` hold indices
    into the returned list and roots have ``parent is None``. A node's parent
    is the smallest accepted box strictly containing it.
    """
    img = np.asarray(img, dtype=bool)
    page_h, page_w = img.shape
    min_w, min_h = params.resolved(page_w)
    max_area = params.max_frac * page_w * page_h
    labels, comps = connected_components(img, params.connectivity)

    nodes: List[RegionNode] = []
    seen = set()
    for comp in comps:
        b = comp.bbox
        if b.w < min_w or b.h < min_h or b.area > max_area:
            continue
        mask = labels[b.y:b.y2, b.x:b.x2] == comp.label
        rect = outline_coverage(mask)
        if rect < 1.0 - params.rect_tol:
            continue
        if b in seen:
            continue
        seen.add(b)
        nodes.append(RegionNode(bbox=b, rectangularity=rect, area=comp.area))

    for i, node in enumerate(nodes):
        best = None
        for j, other in enumerate(nodes):
            if i == j or not other.bbox.contains(node.bbox):
                continue
            if best is None or other.bbox.area < nodes[best].bbox.area:
                best = j
        if best is not None:
            node.parent = best
            nodes[best].children.append(i)
    return nodes


def segment_page(page: np.ndarray, params: Optional[SegmentationParams] = None) -> List[Tuple[BBox, np.ndarray]]:
    """Crop every accepted region (parents and nested children) from ``page``."""
    params = params or SegmentationParams()
    binary = threshold_binary(page, params.threshold, params.invert)
    nodes = build_region_tree(binary, params)
    boxes = sorted((n.bbox for n in nodes), key=lambda b: (b.y, b.x, b.w, b.h))
    return [(b, crop(page, b)) for b in boxes]
