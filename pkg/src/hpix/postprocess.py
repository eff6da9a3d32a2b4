"""Map annotation: road intersections, building clusters, overlay drawing.

The road pipeline runs, in order: grayscale, binarize at 128, 31x31
Gaussian blur, 5 dilations (3x3), threshold at 25, 5 erosions (3x3),
skeletonization, branch-point detection with centroid merging. Building
classification measures each connected footprint's physical area from
its filled external contour and labels it small/medium/large.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import ConfigError, DataError, ShapeError

SMALL_LABEL, MEDIUM_LABEL, LARGE_LABEL = 1, 2, 3
DEFAULT_AREA_THRESHOLDS = (250.0, 500.0)  # square meters


def to_grayscale(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.size == 0:
        raise DataError("empty image")
    if arr.ndim == 2:
        return arr.astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 3:
        return cv2.cvtColor(arr.astype(np.uint8), cv2.COLOR_RGB2GRAY)
    if arr.ndim == 3 and arr.shape[2] == 1:
        return arr[:, :, 0].astype(np.uint8)
    raise ShapeError(f"cannot grayscale an image of shape {arr.shape}")


def binarize(gray: np.ndarray, threshold: int = 128) -> np.ndarray:
    return np.where(gray > threshold, 255, 0).astype(np.uint8)


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning of a binary mask down to 1-px-wide strokes.

    Returns a {0,255} uint8 image. Works on a zero-padded copy so border
    foreground is handled like any other pixel.
    """
    img = np.pad((np.asarray(mask) > 0).astype(np.uint8), 1)

    def neighbours(a):
        # P2..P9 clockwise from north
        return (
            a[:-2, 1:-1], a[:-2, 2:], a[1:-1, 2:], a[2:, 2:],
            a[2:, 1:-1], a[2:, :-2], a[1:-1, :-2], a[:-2, :-2],
        )

    while True:
        changed = False
        for phase in (0, 1):
            p = neighbours(img)
            p2, p3, p4, p5, p6, p7, p8, p9 = p
            count = sum(n.astype(np.int32) for n in p)
            ring = list(p) + [p2]
            transitions = sum(
                ((ring[k] == 0) & (ring[k + 1] == 1)).astype(np.int32) for k in range(8)
            )
            if phase == 0:
                cond = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                cond = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            remove = (
                (img[1:-1, 1:-1] == 1)
                & (count >= 2) & (count <= 6)
                & (transitions == 1)
                & cond
            )
            if remove.any():
                img[1:-1, 1:-1][remove] = 0
                changed = True
        if not changed:
            break
    return (img[1:-1, 1:-1] * 255).astype(np.uint8)


def find_branch_points(skeleton: np.ndarray) -> list:
    """Skeleton pixels with >= 3 foreground 8-neighbours."""
    sk = np.pad((np.asarray(skeleton) > 0).astype(np.uint8), 1)
    counts = (
        sk[:-2, :-2] + sk[:-2, 1:-1] + sk[:-2, 2:]
        + sk[1:-1, :-2] + sk[1:-1, 2:]
        + sk[2:, :-2] + sk[2:, 1:-1] + sk[2:, 2:]
    )
    rows, cols = np.nonzero((sk[1:-1, 1:-1] == 1) & (counts >= 3))
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def merge_close_points(points, radius: float = 10.0) -> list:
    """Collapse chains of points closer than `radius` into their centroids."""
    if not points:
        return []
    pts = np.array(sorted(points), dtype=np.float64)
    n = len(pts)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if np.hypot(*(pts[i] - pts[j])) < radius:
                parent[find(i)] = find(j)

    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    merged = []
    for members in groups.values():
        centroid = pts[members].mean(axis=0)
        merged.append((int(round(centroid[0])), int(round(centroid[1]))))
    return sorted(set(merged))


def road_intersections(image, *, binarize_threshold: int = 128, blur_kernel: int = 31,
                       dilate_iterations: int = 5, stage_threshold: int = 25,
                       erode_iterations: int = 5, merge_radius: float = 10.0) -> list:
    """Detect road intersections on a road mask (RGB or grayscale).

    Returns (row, col) coordinates, deduplicated and sorted.
    """
    gray = to_grayscale(image)
    binary = binarize(gray, binarize_threshold)
    blurred = cv2.GaussianBlur(binary, (blur_kernel, blur_kernel), 0)
    kernel = np.ones((3, 3), np.uint8)
    dilated = cv2.dilate(blurred, kernel, iterations=dilate_iterations)
    thresholded = np.where(dilated > stage_threshold, 255, 0).astype(np.uint8)
    eroded = cv2.erode(thresholded, kernel, iterations=erode_iterations)
    skeleton = skeletonize(eroded)
    return merge_close_points(find_branch_points(skeleton), merge_radius)


@dataclass
class BuildingRegion:
    label: int
    area_m2: float
    bbox: tuple  # (min_row, min_col, max_row, max_col), inclusive


@dataclass
class BuildingLabelMap:
    labels: np.ndarray  # HxW uint8 in {0,1,2,3}
    resolution: float
    thresholds: tuple
    regions: list = field(default_factory=list)


def classify_buildings(mask, resolution: float = 1.0,
                       thresholds=DEFAULT_AREA_THRESHOLDS) -> BuildingLabelMap:
    """Label each building footprint small/medium/large by physical area.

    Area comes from the filled external contour (holes count toward it);
    the label map itself paints only the original foreground pixels.
    """
    arr = np.asarray(mask)
    if arr.ndim == 3:
        arr = to_grayscale(arr)
    values = np.unique(arr)
    if not set(values.tolist()) <= {0, 255}:
        raise DataError(f"mask is not binary: values {values[:8].tolist()}")
    if resolution <= 0:
        raise ConfigError(f"resolution must be positive, got {resolution}")
    small, medium = thresholds
    if not small < medium:
        raise ConfigError(f"thresholds must ascend, got {thresholds}")

    arr = arr.astype(np.uint8)
    labels = np.zeros(arr.shape, np.uint8)
    regions = []
    contours, _ = cv2.findContours(arr, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_SIMPLE)
    for contour in contours:
        filled = np.zeros(arr.shape, np.uint8)
        cv2.drawContours(filled, [contour], -1, 1, thickness=cv2.FILLED)
        area_m2 = float(filled.sum()) * resolution**2
        if area_m2 < small:
            label = SMALL_LABEL
        elif area_m2 < medium:
            label = MEDIUM_LABEL
        else:
            label = LARGE_LABEL
        region_pixels = (filled > 0) & (arr > 0)
        labels[region_pixels] = label
        rows, cols = np.nonzero(region_pixels)
        bbox = (int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max()))
        regions.append(BuildingRegion(label=label, area_m2=area_m2, bbox=bbox))
    regions.sort(key=lambda r: r.bbox)
    return BuildingLabelMap(
        labels=labels, resolution=float(resolution), thresholds=tuple(thresholds),
        regions=regions,
    )


@dataclass
class OverlayStyle:
    building_colors: dict = field(default_factory=lambda: {
        SMALL_LABEL: (255, 0, 0),
        MEDIUM_LABEL: (0, 255, 0),
        LARGE_LABEL: (0, 0, 255),
    })
    marker_color: tuple = (255, 255, 0)
    marker_radius: int = 4


def disc_pixels(center, radius: int, shape) -> np.ndarray:
    """Boolean mask of the filled circle |p - center| <= radius, clipped to shape."""
    rr, cc = np.ogrid[: shape[0], : shape[1]]
    return (rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius**2


def compose_overlay(map_tile, intersections, buildings: BuildingLabelMap | None,
                    style: OverlayStyle | None = None) -> np.ndarray:
    """Paint building classes and intersection markers over a generated tile.

    Buildings are drawn first, then markers, so the result is deterministic.
    """
    style = style or OverlayStyle()
    tile = np.asarray(map_tile)
    if tile.ndim != 3 or tile.shape[2] != 3:
        raise ShapeError(f"map tile must be HxWx3, got {tile.shape}")
    out = tile.astype(np.uint8).copy()

    if buildings is not None:
        if buildings.labels.shape != tile.shape[:2]:
            raise ShapeError(
                f"building labels {buildings.labels.shape} do not match tile {tile.shape[:2]}"
            )
        for label, color in style.building_colors.items():
            out[buildings.labels == label] = color

    for point in intersections or []:
        r, c = point
        if not (0 <= r < tile.shape[0] and 0 <= c < tile.shape[1]):
            raise ShapeError(f"intersection {point} outside tile {tile.shape[:2]}")
        out[disc_pixels((r, c), style.marker_radius, tile.shape[:2])] = style.marker_color
    return out


def annotations_dict(intersections, buildings: BuildingLabelMap | None) -> dict:
    """JSON-ready summary of detected intersections and building clusters."""
    payload = {"intersections": [[int(r), int(c)] for r, c in intersections or []]}
    payload["buildings"] = [
        {"label": reg.label, "area_m2": reg.area_m2, "bbox": list(reg.bbox)}
        for reg in (buildings.regions if buildings else [])
    ]
    return payload
