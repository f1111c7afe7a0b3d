"""Synthetic co-salient groups, augmentation, and the on-disk dataset layout.

Layout::

    root/<group>/<image-id>.ppm      binary P6, 8-bit RGB
    root/<group>/<image-id>_gt.pgm   binary P5, 8-bit gray, 0 or 255
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

SHAPES = ("disk", "square", "triangle")
PALETTE: Dict[str, Tuple[float, float, float]] = {
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.75, 0.15),
    "blue": (0.10, 0.20, 0.90),
    "yellow": (0.95, 0.90, 0.10),
    "magenta": (0.85, 0.10, 0.85),
    "cyan": (0.10, 0.85, 0.90),
    "orange": (1.00, 0.55, 0.00),
    "purple": (0.45, 0.10, 0.70),
    "white": (0.97, 0.97, 0.97),
    "black": (0.03, 0.03, 0.03),
}
# a distractor colour appears in at most this many images of a group
MAX_DISTRACTOR_REPEATS = 2
Category = Tuple[str, str]  # (shape, colour)


@dataclass
class ImageGroup:
    name: str
    images: np.ndarray                 # [N, 3, S, S] float32 in [0, 1]
    masks: Optional[np.ndarray]        # [N, 1, S, S] float32 in {0, 1}
    category: Optional[Category] = None
    distractors: List[List[Category]] = field(default_factory=list)
    image_ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise ValueError(f"images must be [N,3,S,S], got {self.images.shape}")
        if len(self.images) < 2:
            raise ValueError("a group needs at least 2 images")
        if self.masks is not None and self.masks.shape != (len(self.images), 1) + self.images.shape[2:]:
            raise ValueError(f"mask shape {self.masks.shape} does not match images {self.images.shape}")
        if not self.image_ids:
            self.image_ids = [f"{i:03d}" for i in range(len(self.images))]

    def __len__(self):
        return len(self.images)


# -- rendering ----------------------------------------------------------------
def shape_mask(shape: str, side: int, cy: float, cx: float, size: float) -> np.ndarray:
    """Boolean [side, side] region of a shape with extent ``size`` centred at (cy, cx)."""
    y, x = np.mgrid[0:side, 0:side].astype(np.float32) + 0.5
    r = size / 2.0
    if shape == "disk":
        return (y - cy) ** 2 + (x - cx) ** 2 <= r * r
    if shape == "square":
        return (np.abs(y - cy) <= r) & (np.abs(x - cx) <= r)
    if shape == "triangle":
        # apex up, base at the bottom of the bounding box
        top, bottom = cy - r, cy + r
        half_width = r * (y - top) / (2 * r)
        return (y >= top) & (y <= bottom) & (np.abs(x - cx) <= half_width)
    raise ValueError(f"unknown shape {shape!r}")


def _background(rng: np.random.Generator, side: int) -> np.ndarray:
    y, x = np.mgrid[0:side, 0:side].astype(np.float32) / side
    base = rng.uniform(0.30, 0.60, size=3)
    tint = rng.uniform(-0.08, 0.08, size=3)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * x + np.sin(angle) * y
    freq = rng.uniform(1.0, 3.0, size=2)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    wave = np.sin(2 * np.pi * freq[0] * x + phase[0]) * np.sin(2 * np.pi * freq[1] * y + phase[1])
    amp = rng.uniform(0.05, 0.15)
    img = base[:, None, None] + tint[:, None, None] * (ramp[None] - 0.5) * 2 + amp * wave[None]
    return img.astype(np.float32)


def _place(rng: np.random.Generator, side: int, taken: Sequence[Tuple[float, float, float]],
           tries: int = 20) -> Tuple[float, float, float]:
    lo, hi = 0.15 * side, 0.40 * side
    for attempt in range(tries):
        size = rng.uniform(lo, hi)
        cy, cx = rng.uniform(size / 2, side - size / 2, size=2)
        clear = all(np.hypot(cy - ty, cx - tx) > (size + ts) / 2 + 2 for ty, tx, ts in taken)
        if clear or attempt == tries - 1:
            return float(cy), float(cx), float(size)
    raise AssertionError("unreachable")


def render_image(rng: np.random.Generator, side: int, category: Category,
                 distractors: Sequence[Category]) -> Tuple[np.ndarray, np.ndarray]:
    """One image: background clutter, the distractors, then the common object on top."""
    img = _background(rng, side)
    common = _place(rng, side, [])
    taken = [common]
    for cat in distractors:
        spot = _place(rng, side, taken)
        taken.append(spot)
        region = shape_mask(cat[0], side, *spot)
        img[:, region] = _jitter(rng, PALETTE[cat[1]])[:, None]
    # the common object goes last so its mask is exactly its visible region
    region = shape_mask(category[0], side, *common)
    img[:, region] = _jitter(rng, PALETTE[category[1]])[:, None]
    img += rng.normal(0.0, 0.02, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0), region


def draw_distractors(rng: np.random.Generator, category: Category, group_size: int) -> List[List[Category]]:
    """1-3 distractors per image, coloured from a bag holding every other colour twice.

    Drawing without replacement keeps each distractor colour in at most
    ``MAX_DISTRACTOR_REPEATS`` images, so only the common colour recurs
    throughout the group.
    """
    others = [c for c in PALETTE if c != category[1]]
    bag = list(rng.permutation(others * MAX_DISTRACTOR_REPEATS))
    out = []
    for _ in range(group_size):
        count = int(rng.integers(1, 4))
        used = set()
        drawn = []
        for _ in range(count):
            # a colour twice in one image would waste its second appearance
            pick = next((i for i, c in enumerate(bag) if c not in used), None)
            if pick is None:
                break
            colour = bag.pop(pick)
            used.add(colour)
            drawn.append((SHAPES[rng.integers(len(SHAPES))], str(colour)))
        if not drawn:
            # bag exhausted (very large groups): fall back to any other colour
            drawn.append((SHAPES[rng.integers(len(SHAPES))], str(others[rng.integers(len(others))])))
        out.append(drawn)
    return out


def _jitter(rng: np.random.Generator, colour) -> np.ndarray:
    return np.clip(np.asarray(colour, np.float32) + rng.uniform(-0.05, 0.05, size=3), 0, 1).astype(np.float32)


def synth_dataset(seed: int, n_groups: int, group_size: int = 5, side: int = 160) -> List[ImageGroup]:
    """Groups whose only shared (shape, colour) category is the co-salient object.

    Distractors never use the group's colour, so their category always differs
    from the group category.
    """
    if n_groups < 1:
        raise ValueError("n_groups must be >= 1")
    rng = np.random.default_rng(seed)
    colours = list(PALETTE)
    groups = []
    for g in range(n_groups):
        category = (SHAPES[rng.integers(len(SHAPES))], colours[rng.integers(len(colours))])
        distractors = draw_distractors(rng, category, group_size)
        images, masks = [], []
        for drawn in distractors:
            img, region = render_image(rng, side, category, drawn)
            images.append(img)
            masks.append(region[None].astype(np.float32))
        groups.append(ImageGroup(f"group_{g:03d}", np.stack(images), np.stack(masks), category, distractors))
    return groups


# -- augmentation -----------------------------------------------------------------
def augment(image: np.ndarray, mask: np.ndarray, flip: bool, quarter_turns: int) -> Tuple[np.ndarray, np.ndarray]:
    """Apply the same horizontal flip and rotation to a [C,S,S] image and its mask."""
    if flip:
        image, mask = image[..., ::-1], mask[..., ::-1]
    image = np.rot90(image, quarter_turns, axes=(-2, -1))
    mask = np.rot90(mask, quarter_turns, axes=(-2, -1))
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def random_augment(rng: np.random.Generator, images: np.ndarray, masks: np.ndarray):
    out_i, out_m = [], []
    for img, msk in zip(images, masks):
        a, b = augment(img, msk, bool(rng.integers(2)), int(rng.integers(4)))
        out_i.append(a)
        out_m.append(b)
    return np.stack(out_i), np.stack(out_m)


# -- PPM / PGM -----------------------------------------------------------------------
def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(x, np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """[3,H,W] floats in [0,1] -> binary P6."""
    Image.fromarray(to_uint8(image.transpose(1, 2, 0)), mode="RGB").save(path, format="PPM")


def write_pgm(path, gray: np.ndarray) -> None:
    """[H,W] floats in [0,1] -> binary P5."""
    Image.fromarray(to_uint8(gray), mode="L").save(path, format="PPM")


def read_ppm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise ValueError(f"{path}: expected an 8-bit RGB PPM, got mode {im.mode}")
        return np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0


def read_pgm_u8(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError(f"{path}: expected an 8-bit gray PGM, got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8)


def resize_bilinear(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a [H,W] float map."""
    if arr.shape == (height, width):
        return arr.astype(np.float32)
    im = Image.fromarray(np.asarray(arr, np.float32), mode="F")
    return np.asarray(im.resize((width, height), Image.BILINEAR), dtype=np.float32)


def resize_image(image: np.ndarray, side: int) -> np.ndarray:
    if image.shape[1:] == (side, side):
        return image
    return np.stack([resize_bilinear(c, side, side) for c in image])


# -- dataset directories -----------------------------------------------------------------
def write_dataset(root, groups: Sequence[ImageGroup]) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for group in groups:
        gdir = root / group.name
        gdir.mkdir(exist_ok=True)
        for i, image_id in enumerate(group.image_ids):
            write_ppm(gdir / f"{image_id}.ppm", group.images[i])
            if group.masks is not None:
                write_pgm(gdir / f"{image_id}_gt.pgm", group.masks[i, 0])


@dataclass
class DiskImage:
    group: str
    image_id: str
    image_path: Path
    gt_path: Optional[Path]


def scan_dataset(root, require_gt: bool = True) -> Dict[str, List[DiskImage]]:
    """Map group name -> images (sorted by id). Raises on layout violations."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    groups: Dict[str, List[DiskImage]] = {}
    for gdir in sorted(p for p in root.iterdir() if p.is_dir()):
        items = []
        for img in sorted(gdir.glob("*.ppm")):
            gt = gdir / f"{img.stem}_gt.pgm"
            if not gt.exists():
                if require_gt:
                    raise FileNotFoundError(f"missing ground truth {gt}")
                gt = None
            items.append(DiskImage(gdir.name, img.stem, img, gt))
        if not items:
            continue
        if len(items) < 2:
            raise ValueError(f"group {gdir.name} has fewer than 2 images")
        groups[gdir.name] = items
    if not groups:
        raise ValueError(f"no image groups found under {root}")
    return groups


def load_dataset(root, side: Optional[int] = None, require_gt: bool = True) -> List[ImageGroup]:
    """Read a dataset directory into memory, optionally resizing to ``side``."""
    out = []
    for name, items in scan_dataset(root, require_gt).items():
        images, masks = [], []
        for item in items:
            img = read_ppm(item.image_path)
            if side is not None:
                img = resize_image(img, side)
            images.append(img)
            if item.gt_path is not None:
                gt = (read_pgm_u8(item.gt_path) >= 128).astype(np.float32)
                if side is not None and gt.shape != (side, side):
                    gt = (resize_bilinear(gt, side, side) >= 0.5).astype(np.float32)
                masks.append(gt[None])
        out.append(ImageGroup(name, np.stack(images), np.stack(masks) if len(masks) == len(images) else None,
                              image_ids=[i.image_id for i in items]))
    return out


def dataset_fingerprint(root) -> Dict[str, bytes]:
    """Relative path -> file bytes, for byte-identity comparisons."""
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def ensure_writable_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"{path} is not writable")
    return path
