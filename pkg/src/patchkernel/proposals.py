"""Object-like patch proposals and 8-way rotation augmentation.

The objectness score is a training-free center-minus-ring contrast on the
normed-gradient map: windows whose interior carries more gradient energy
than their border ring look like closed objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embed import PATCH_SIDE
from .raster import Image, _rotate_crop_array, resize_bilinear

MIN_PATCH_SIDE = 16
DEFAULT_SCALES = (32, 64, 128)
ROTATION_COUNT = 8
ROTATION_STEP_DEG = 45.0


@dataclass(frozen=True)
class Patch:
    """Rectangular proposal with contrast score and rotation index."""

    x: int
    y: int
    w: int
    h: int
    objectness: float
    rotation_index: int = 0

    def __post_init__(self) -> None:
        if self.w < MIN_PATCH_SIDE or self.h < MIN_PATCH_SIDE:
            raise ValueError(f"patch size {self.w}x{self.h} below minimum {MIN_PATCH_SIDE}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"patch origin ({self.x}, {self.y}) negative")
        if not math.isfinite(self.objectness):
            raise ValueError("patch objectness must be finite")
        if not 0 <= self.rotation_index < ROTATION_COUNT:
            raise ValueError(f"rotation index {self.rotation_index} outside 0..7")

    def rect(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class ProposalConfig:
    """Window-sweep settings; scales=None means defaults plus the full min side."""

    n: int = 127
    scales: tuple[int, ...] | None = None
    nms_iou: float = 0.5
    include_rotations: bool = True

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"proposal count must be >= 1, got {self.n}")
        if not 0.0 < self.nms_iou < 1.0:
            raise ValueError(f"nms_iou must lie in (0, 1), got {self.nms_iou}")
        if self.scales is not None:
            if len(self.scales) == 0:
                raise ValueError("scales must be non-empty")
            if any(s < MIN_PATCH_SIDE for s in self.scales):
                raise ValueError(f"every scale must be >= {MIN_PATCH_SIDE}")

    def resolved_scales(self, img: Image) -> list[int]:
        base = self.scales if self.scales is not None else DEFAULT_SCALES + (min(img.height, img.width),)
        return sorted({int(s) for s in base if s <= min(img.height, img.width)})


def objectness_map(img: Image) -> np.ndarray:
    """Per-pixel normed gradient |g_x| + |g_y| via central differences, clipped to [0, 1]."""
    gy, gx = np.gradient(img.pixels)
    return np.clip(np.abs(gx) + np.abs(gy), 0.0, 1.0)


def iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    """Intersection-over-union of two (x, y, w, h) rectangles."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def _center_ring_score(ii: np.ndarray, x: int, y: int, w: int, h: int) -> float:
    """Mean objectness of the inner 50% box minus the mean of the border ring."""
    inner_sum = _box_sum(ii, y + h // 4, x + w // 4, h // 2, w // 2)
    total_sum = _box_sum(ii, y, x, h, w)
    inner_area = (h // 2) * (w // 2)
    ring_area = h * w - inner_area
    return inner_sum / inner_area - (total_sum - inner_sum) / ring_area


def _box_sum(ii: np.ndarray, y: int, x: int, h: int, w: int) -> float:
    return ii[y + h, x + w] - ii[y, x + w] - ii[y + h, x] + ii[y, x]


def propose(img: Image, cfg: ProposalConfig) -> list[Patch]:
    """Top-N object-like windows after greedy NMS, scores non-increasing.

    Square windows slide at each configured scale with stride scale/4; only
    windows with positive center-minus-ring contrast compete. Ties break by
    (y, x, w) ascending. When fewer than N windows survive, the full frame is
    appended so every image yields at least one patch.
    """
    scales = cfg.resolved_scales(img)
    if not scales:
        raise ValueError(
            f"image {img.width}x{img.height} smaller than every configured scale"
        )
    omap = objectness_map(img)
    ii = np.zeros((img.height + 1, img.width + 1))
    np.cumsum(np.cumsum(omap, axis=0), axis=1, out=ii[1:, 1:])

    candidates: list[tuple[float, int, int, int]] = []
    for scale in scales:
        stride = max(1, scale // 4)
        ys = np.arange(0, img.height - scale + 1, stride)
        xs = np.arange(0, img.width - scale + 1, stride)
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        inner = scale // 2
        off = scale // 4
        total = _box_sum(ii, yy, xx, scale, scale)
        core = _box_sum(ii, yy + off, xx + off, inner, inner)
        inner_area = inner * inner
        ring_area = scale * scale - inner_area
        scores = core / inner_area - (total - core) / ring_area
        for r, c in zip(*np.nonzero(scores > 0.0)):
            candidates.append((float(scores[r, c]), int(yy[r, c]), int(xx[r, c]), scale))

    candidates.sort(key=lambda cand: (-cand[0], cand[1], cand[2], cand[3]))

    kept: list[tuple[float, int, int, int]] = []
    kept_rects: list[tuple[int, int, int, int]] = []
    for score, y, x, scale in candidates:
        rect = (x, y, scale, scale)
        if all(iou(rect, other) < cfg.nms_iou for other in kept_rects):
            kept.append((score, y, x, scale))
            kept_rects.append(rect)
            if len(kept) == cfg.n:
                break

    patches = [Patch(x=x, y=y, w=s, h=s, objectness=score) for score, y, x, s in kept]
    if len(patches) < cfg.n:
        frame = (0, 0, img.width, img.height)
        if frame not in (p.rect() for p in patches):
            score = _center_ring_score(ii, 0, 0, img.width, img.height)
            patches.append(
                Patch(x=0, y=0, w=img.width, h=img.height, objectness=float(score))
            )
    return patches


def augment_rotations(img: Image, p: Patch) -> np.ndarray:
    """Return the 8 rotated copies of a patch as an (8, P, P) array.

    The patch is cropped, resized to the canonical side, then rotated in 45
    degree steps: multiples of 90 are exact pixel permutations, the 45 family
    is an exact quarter-turn followed by a bilinear rotate, inscribed-square
    crop, and resize back. Pre-rotating the patch raster by 90 degrees
    therefore permutes the 8 copies bit-exactly instead of changing them.
    """
    if p.x + p.w > img.width or p.y + p.h > img.height:
        raise ValueError(f"patch {p.rect()} exceeds {img.width}x{img.height} image")
    base = resize_bilinear(img.pixels[p.y : p.y + p.h, p.x : p.x + p.w], PATCH_SIDE, PATCH_SIDE)
    return rotation_stack(base)


def rotation_stack(base: np.ndarray) -> np.ndarray:
    """The 8 rotated copies of one P x P raster (see augment_rotations)."""
    out = np.empty((ROTATION_COUNT, PATCH_SIDE, PATCH_SIDE))
    for j in range(ROTATION_COUNT):
        quarter = np.rot90(base, j // 2)
        if j % 2 == 0:
            out[j] = quarter
        else:
            tilted = _rotate_crop_array(quarter, ROTATION_STEP_DEG)
            out[j] = resize_bilinear(tilted, PATCH_SIDE, PATCH_SIDE)
    return np.clip(out, 0.0, 1.0)


def write_patches_csv(path: str | Path, patches: list[Patch]) -> None:
    """Serialize patches as CSV: patch_id,x,y,w,h,score with 6-digit scores."""
    lines = ["patch_id,x,y,w,h,score"]
    for i, p in enumerate(patches):
        lines.append(f"{i},{p.x},{p.y},{p.w},{p.h},{p.objectness:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_patches_csv(path: str | Path) -> list[Patch]:
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0] != "patch_id,x,y,w,h,score":
        raise ValueError(f"{path}: missing patch CSV header")
    patches = []
    for line in text[1:]:
        _, x, y, w, h, score = line.split(",")
        patches.append(Patch(x=int(x), y=int(y), w=int(w), h=int(h), objectness=float(score)))
    return patches
