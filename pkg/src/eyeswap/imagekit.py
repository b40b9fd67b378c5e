"""Face image container, eye-box geometry and preprocessing.

Pixel tensors are channels-first, ``(3, H, W)`` for a single image or
``(N, 3, H, W)`` for a batch, in model range [-1, 1]. The region helpers
operate on the trailing two axes so they work on either layout.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import torch
from PIL import Image

CROP_SIZE = 160
MIN_SIDE = 16
MASK_FILL = 0.0


class Domain(str, enum.Enum):
    A = "A_with_glasses"
    B = "B_without_glasses"
    UNKNOWN = "unknown"

    @classmethod
    def parse(cls, value: Union[str, "Domain"]) -> "Domain":
        if isinstance(value, Domain):
            return value
        aliases = {"a": cls.A, "b": cls.B, "with_glasses": cls.A, "without_glasses": cls.B}
        key = str(value).strip()
        if key.lower() in aliases:
            return aliases[key.lower()]
        return cls(key)

    @property
    def other(self) -> "Domain":
        if self is Domain.A:
            return Domain.B
        if self is Domain.B:
            return Domain.A
        raise ValueError("unknown domain has no counterpart")


@dataclass(frozen=True)
class EyeBox:
    """Fractional eye rectangle of an aligned face.

    Rows span ``[row_lo_frac*h, row_hi_frac*h)`` and columns
    ``[col_lo_frac*w, col_hi_frac*w)``.
    """

    row_lo_frac: float = 0.40
    col_lo_frac: float = 0.20
    row_hi_frac: float = 0.65
    col_hi_frac: float = 0.75

    def __post_init__(self):
        if not (0.0 <= self.row_lo_frac < self.row_hi_frac <= 1.0):
            raise ValueError(f"bad row fractions {self.row_lo_frac}, {self.row_hi_frac}")
        if not (0.0 <= self.col_lo_frac < self.col_hi_frac <= 1.0):
            raise ValueError(f"bad column fractions {self.col_lo_frac}, {self.col_hi_frac}")


DEFAULT_BOX = EyeBox()


@dataclass
class FaceImage:
    pixels: torch.Tensor
    domain: Domain = Domain.UNKNOWN
    source_id: str = ""

    def __post_init__(self):
        self.domain = Domain.parse(self.domain)
        if self.pixels.dim() != 3 or self.pixels.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) pixels, got {tuple(self.pixels.shape)}")
        h, w = self.pixels.shape[-2:]
        if h < MIN_SIDE or w < MIN_SIDE or h % 2 or w % 2:
            raise ValueError(f"image side must be even and >= {MIN_SIDE}, got {h}x{w}")
        if self.pixels.numel() and (self.pixels.min() < -1 or self.pixels.max() > 1):
            raise ValueError("pixels outside [-1, 1]")

    @property
    def size(self) -> tuple[int, int]:
        return int(self.pixels.shape[-2]), int(self.pixels.shape[-1])

    def with_pixels(self, pixels: torch.Tensor) -> "FaceImage":
        return FaceImage(pixels, self.domain, self.source_id)


Pixels = Union[FaceImage, torch.Tensor]


def _unwrap(img: Pixels) -> torch.Tensor:
    return img.pixels if isinstance(img, FaceImage) else img


def _rewrap(like: Pixels, pixels: torch.Tensor) -> Pixels:
    return like.with_pixels(pixels) if isinstance(like, FaceImage) else pixels


def eye_region_pixels(box: EyeBox, h: int, w: int) -> tuple[int, int, int, int]:
    """Integer ``(r0, c0, r1, c1)`` of the eye area; bounds are floored."""
    r0 = math.floor(box.row_lo_frac * h)
    r1 = math.floor(box.row_hi_frac * h)
    c0 = math.floor(box.col_lo_frac * w)
    c1 = math.floor(box.col_hi_frac * w)
    if r0 >= r1 or c0 >= c1:
        raise ValueError(f"eye region degenerates at {h}x{w}")
    return r0, c0, r1, c1


def box_mask(box: EyeBox, h: int, w: int, dtype=torch.float32) -> torch.Tensor:
    """``(1, h, w)`` tensor, 1 inside the eye region and 0 elsewhere."""
    r0, c0, r1, c1 = eye_region_pixels(box, h, w)
    m = torch.zeros(1, h, w, dtype=dtype)
    m[:, r0:r1, c0:c1] = 1
    return m


def mask_eye_region(img: Pixels, box: EyeBox = DEFAULT_BOX) -> Pixels:
    x = _unwrap(img)
    r0, c0, r1, c1 = eye_region_pixels(box, x.shape[-2], x.shape[-1])
    out = x.clone()
    out[..., r0:r1, c0:c1] = MASK_FILL
    return _rewrap(img, out)


def crop_eye_region(img: Pixels, box: EyeBox = DEFAULT_BOX) -> torch.Tensor:
    x = _unwrap(img)
    r0, c0, r1, c1 = eye_region_pixels(box, x.shape[-2], x.shape[-1])
    return x[..., r0:r1, c0:c1].clone()


def composite_eye_region(img: Pixels, patch: torch.Tensor, box: EyeBox = DEFAULT_BOX) -> Pixels:
    """Paste ``patch`` into the eye region; everything else is copied untouched."""
    x = _unwrap(img)
    r0, c0, r1, c1 = eye_region_pixels(box, x.shape[-2], x.shape[-1])
    expected = x.shape[:-2] + (r1 - r0, c1 - c0)
    if tuple(patch.shape) != tuple(expected):
        raise ValueError(f"patch shape {tuple(patch.shape)} does not match eye region {tuple(expected)}")
    out = x.clone()
    out[..., r0:r1, c0:c1] = patch.to(out.dtype)
    return _rewrap(img, out)


def to_uint8_array(raw) -> np.ndarray:
    """Accept a PIL image, path, or HxWx3 uint8 array; return HxWx3 uint8."""
    if isinstance(raw, (str, Path)):
        with Image.open(raw) as im:
            return np.asarray(im.convert("RGB"))
    if isinstance(raw, Image.Image):
        return np.asarray(raw.convert("RGB"))
    arr = np.asarray(raw)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {arr.shape}")
    return arr.astype(np.uint8, copy=False)


def preprocess(raw, training: bool = False, rng: np.random.Generator | None = None,
               resolution: int = 224, crop: int = CROP_SIZE, domain=Domain.UNKNOWN,
               source_id: str = "") -> FaceImage:
    """Center-crop, bilinear resize and map [0, 255] to [-1, 1].

    With ``training`` set, the crop is mirrored horizontally with
    probability 0.5, drawn from ``rng``.
    """
    arr = to_uint8_array(raw)
    h, w = arr.shape[:2]
    if h < crop or w < crop:
        raise ValueError(f"raw image {h}x{w} smaller than crop {crop}")
    top, left = (h - crop) // 2, (w - crop) // 2
    arr = arr[top:top + crop, left:left + crop]
    if training:
        if rng is None:
            raise ValueError("training preprocessing needs an rng")
        if rng.random() < 0.5:
            arr = arr[:, ::-1]
    im = Image.fromarray(np.ascontiguousarray(arr))
    if resolution != crop:
        im = im.resize((resolution, resolution), Image.BILINEAR)
    x = torch.from_numpy(np.asarray(im, dtype=np.float32).copy()).permute(2, 0, 1)
    x = (x / 127.5 - 1.0).clamp_(-1.0, 1.0)
    return FaceImage(x.contiguous(), domain, source_id)


def to_pil(img: Pixels) -> Image.Image:
    x = _unwrap(img).detach().float().cpu()
    arr = ((x.clamp(-1, 1) + 1.0) * 127.5).round().byte().permute(1, 2, 0).numpy()
    return Image.fromarray(arr)


def save_png(img: Pixels, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    to_pil(img).save(path, format="PNG")
    return path


def load_face(path, resolution: int, domain=Domain.UNKNOWN) -> FaceImage:
    """Load an image for inference; raw inputs are preprocessed, model-size inputs only rescaled."""
    arr = to_uint8_array(path)
    if arr.shape[0] >= CROP_SIZE and arr.shape[1] >= CROP_SIZE:
        return preprocess(arr, training=False, resolution=resolution, domain=domain, source_id=str(path))
    im = Image.fromarray(arr)
    if im.size != (resolution, resolution):
        im = im.resize((resolution, resolution), Image.BILINEAR)
    x = torch.from_numpy(np.asarray(im, dtype=np.float32).copy()).permute(2, 0, 1) / 127.5 - 1.0
    return FaceImage(x.clamp(-1, 1).contiguous(), domain, str(path))


def image_grid(images: Sequence[Pixels], ncols: int | None = None, gutter: int = 2) -> Image.Image:
    """Tile images row-major with a white gutter between cells."""
    if not images:
        raise ValueError("no images to tile")
    tiles = [to_pil(im) for im in images]
    w, h = tiles[0].size
    ncols = ncols or len(tiles)
    nrows = math.ceil(len(tiles) / ncols)
    grid = Image.new("RGB", (ncols * w + (ncols - 1) * gutter, nrows * h + (nrows - 1) * gutter),
                     (255, 255, 255))
    for i, tile in enumerate(tiles):
        r, c = divmod(i, ncols)
        grid.paste(tile, (c * (w + gutter), r * (h + gutter)))
    return grid
