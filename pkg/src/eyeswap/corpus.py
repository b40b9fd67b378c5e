"""Attribute-file ingestion, domain split, synthetic faces and batching."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, TextIO, Union

import numpy as np
import torch
from PIL import Image, ImageDraw

from .imagekit import CROP_SIZE, Domain, preprocess, to_uint8_array

log = logging.getLogger(__name__)

GLASSES_ATTR = "Eyeglasses"
ATTR_FILENAME = "list_attr.txt"
MANIFEST_FILENAME = "manifest.json"
STYLES = ("full_rim", "rimless", "sunglasses")

# raw synthetic canvas, CelebA-aligned size (width, height)
RAW_W, RAW_H = 178, 218


class AttributeFormatError(ValueError):
    pass


@dataclass
class AttributeTable:
    names: list[str]
    entries: list[tuple[str, dict[str, int]]]

    def __len__(self):
        return len(self.entries)

    def has_glasses(self, filename: str) -> bool:
        for fname, attrs in self.entries:
            if fname == filename:
                return attrs[GLASSES_ATTR] == 1
        raise KeyError(filename)


def parse_attribute_table(stream: Union[TextIO, str]) -> AttributeTable:
    """Read a CelebA-style attribute list.

    Line 1 holds the entry count, line 2 the attribute names, and each
    following line ``filename v1 v2 ...`` with values in {-1, 1}.
    """
    text = stream if isinstance(stream, str) else stream.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise AttributeFormatError("missing count or header line")
    try:
        count = int(lines[0].strip())
    except ValueError:
        raise AttributeFormatError(f"bad count line {lines[0]!r}") from None
    names = lines[1].split()
    if GLASSES_ATTR not in names:
        raise AttributeFormatError(f"no {GLASSES_ATTR} column in header")
    rows = lines[2:]
    if len(rows) != count:
        raise AttributeFormatError(f"header declares {count} rows, found {len(rows)}")
    entries, seen = [], set()
    for lineno, row in enumerate(rows, start=3):
        parts = row.split()
        if len(parts) != len(names) + 1:
            raise AttributeFormatError(f"line {lineno}: expected {len(names) + 1} fields, got {len(parts)}")
        fname, values = parts[0], parts[1:]
        if fname in seen:
            raise AttributeFormatError(f"line {lineno}: duplicate filename {fname}")
        seen.add(fname)
        attrs = {}
        for name, v in zip(names, values):
            if v not in ("1", "-1"):
                raise AttributeFormatError(f"line {lineno}: value {v!r} for {name} is not +/-1")
            attrs[name] = int(v)
        entries.append((fname, attrs))
    return AttributeTable(names, entries)


def format_attribute_table(table: AttributeTable) -> str:
    out = [str(len(table.entries)), " ".join(table.names)]
    for fname, attrs in table.entries:
        out.append(" ".join([fname] + [str(attrs[n]) for n in table.names]))
    return "\n".join(out) + "\n"


@dataclass
class CorpusManifest:
    root_dir: str
    domain_a_files: list[str]
    domain_b_files: list[str]
    resolution: int = 224

    def __post_init__(self):
        overlap = set(self.domain_a_files) & set(self.domain_b_files)
        if overlap:
            raise ValueError(f"files in both domains: {sorted(overlap)[:5]}")

    def require_trainable(self):
        if not self.domain_a_files or not self.domain_b_files:
            raise ValueError(f"both domains must be non-empty (|A|={len(self.domain_a_files)}, "
                             f"|B|={len(self.domain_b_files)})")

    def files(self, domain) -> list[str]:
        return self.domain_a_files if Domain.parse(domain) is Domain.A else self.domain_b_files

    def path(self, fname: str) -> Path:
        return Path(self.root_dir) / fname

    def to_json(self) -> str:
        return json.dumps({"root_dir": str(self.root_dir), "resolution": self.resolution,
                           "domain_a_files": self.domain_a_files,
                           "domain_b_files": self.domain_b_files}, indent=1)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        d = json.loads(Path(path).read_text())
        return cls(d["root_dir"], list(d["domain_a_files"]), list(d["domain_b_files"]), int(d["resolution"]))

    def split(self, train_fraction: float = 0.9) -> tuple["CorpusManifest", "CorpusManifest"]:
        """Order-preserving train / held-out split per domain."""
        if not 0 < train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")
        na = int(math.floor(len(self.domain_a_files) * train_fraction))
        nb = int(math.floor(len(self.domain_b_files) * train_fraction))
        train = CorpusManifest(self.root_dir, self.domain_a_files[:na], self.domain_b_files[:nb], self.resolution)
        held = CorpusManifest(self.root_dir, self.domain_a_files[na:], self.domain_b_files[nb:], self.resolution)
        return train, held


def split_by_glasses(table: AttributeTable, root, resolution: int = 224) -> CorpusManifest:
    a = [f for f, attrs in table.entries if attrs[GLASSES_ATTR] == 1]
    b = [f for f, attrs in table.entries if attrs[GLASSES_ATTR] == -1]
    if not a or not b:
        warnings.warn(f"empty domain after split (|A|={len(a)}, |B|={len(b)})", RuntimeWarning)
    return CorpusManifest(str(root), a, b, resolution)


# --- synthetic corpus -------------------------------------------------------

@dataclass
class SyntheticSpec:
    n_per_domain: int = 300
    resolution: int = 64
    seed: int = 7
    styles: tuple[str, ...] = STYLES

    def __post_init__(self):
        self.styles = tuple(sorted(set(self.styles), key=STYLES.index))
        if self.n_per_domain < 1:
            raise ValueError("n_per_domain must be >= 1")
        if self.resolution % 4 or self.resolution < 16:
            raise ValueError("resolution must be a multiple of 4 and >= 16")
        if not self.styles or any(s not in STYLES for s in self.styles):
            raise ValueError(f"styles must be a non-empty subset of {STYLES}")


@dataclass
class FaceParams:
    background: tuple
    skin: tuple
    hair: tuple
    iris: tuple
    lips: tuple
    cx: float
    rx: float
    ry: float
    eye_y: float
    eye_dx: float
    eye_rx: float
    eye_ry: float
    mouth_w: float
    hair_h: float


@dataclass
class Eyewear:
    style: str
    frame: tuple
    lens_w: float
    lens_h: float
    round: bool
    thickness: int
    tint: tuple


def _color(rng, lo, hi):
    return tuple(int(v) for v in rng.integers(lo, hi, size=3))


def sample_face_params(rng: np.random.Generator) -> FaceParams:
    tone = rng.uniform(0.25, 1.0)
    skin = (int(110 + 130 * tone), int(70 + 110 * tone), int(50 + 90 * tone))
    return FaceParams(
        background=_color(rng, 40, 220),
        skin=skin,
        hair=_color(rng, 10, 120),
        iris=_color(rng, 20, 140),
        lips=(int(rng.integers(150, 210)), int(rng.integers(50, 100)), int(rng.integers(60, 110))),
        cx=80 + rng.uniform(-3, 3),
        rx=rng.uniform(48, 56),
        ry=rng.uniform(62, 70),
        eye_y=rng.uniform(81, 86),
        eye_dx=rng.uniform(21, 26),
        eye_rx=rng.uniform(7, 10),
        eye_ry=rng.uniform(3.5, 5.5),
        mouth_w=rng.uniform(14, 24),
        hair_h=rng.uniform(14, 30),
    )


def sample_eyewear(rng: np.random.Generator, styles) -> Eyewear:
    style = styles[int(rng.integers(len(styles)))]
    tint = (0, 0, 0, 0)
    if style == "sunglasses":
        tint = (*_color(rng, 0, 50), int(rng.integers(200, 240)))
    elif style == "rimless":
        tint = (*_color(rng, 150, 230), int(rng.integers(30, 70)))
    return Eyewear(
        style=style,
        frame=_color(rng, 0, 90),
        lens_w=rng.uniform(14, 18),
        lens_h=rng.uniform(9, 12),
        round=bool(rng.integers(2)),
        thickness=2 if style == "rimless" else int(rng.integers(3, 6)),
        tint=tint,
    )


def render_face(p: FaceParams, eyewear: Optional[Eyewear] = None) -> np.ndarray:
    """Draw one raw RGB face; geometry is laid out in 160x160 crop coordinates."""
    ox, oy = (RAW_W - CROP_SIZE) // 2, (RAW_H - CROP_SIZE) // 2
    im = Image.new("RGB", (RAW_W, RAW_H), p.background)
    d = ImageDraw.Draw(im)

    def box(cx, cy, rx, ry):
        return [ox + cx - rx, oy + cy - ry, ox + cx + rx, oy + cy + ry]

    cy = 84.0
    d.ellipse(box(p.cx, cy - 8, p.rx + 4, p.ry + 2), fill=p.hair)
    d.ellipse(box(p.cx, cy, p.rx, p.ry), fill=p.skin)
    top = cy - p.ry
    d.rectangle([ox + p.cx - p.rx * 0.8, oy + top - 4, ox + p.cx + p.rx * 0.8, oy + top + p.hair_h],
                fill=p.hair)
    brow = tuple(max(0, c - 60) for c in p.hair)
    for side in (-1, 1):
        ex = p.cx + side * p.eye_dx
        d.ellipse(box(ex, p.eye_y, p.eye_rx, p.eye_ry), fill=(245, 245, 240))
        d.ellipse(box(ex, p.eye_y, p.eye_ry * 0.8, p.eye_ry * 0.8), fill=p.iris)
        d.ellipse(box(ex, p.eye_y, 1.2, 1.2), fill=(10, 10, 10))
        d.line([ox + ex - p.eye_rx, oy + p.eye_y - 11, ox + ex + p.eye_rx, oy + p.eye_y - 12], fill=brow, width=2)
    shade = tuple(max(0, c - 40) for c in p.skin)
    d.polygon([(ox + p.cx, oy + 92), (ox + p.cx - 5, oy + 110), (ox + p.cx + 5, oy + 110)], fill=shade)
    d.ellipse(box(p.cx, 126, p.mouth_w / 2, 4), fill=p.lips)

    if eyewear is not None:
        over = Image.new("RGBA", im.size, (0, 0, 0, 0))
        g = ImageDraw.Draw(over)
        rim = (*eyewear.frame, 255)
        lenses = []
        for side in (-1, 1):
            ex = p.cx + side * p.eye_dx
            lenses.append(box(ex, p.eye_y, eyewear.lens_w, eyewear.lens_h))
        for lb in lenses:
            shape = g.ellipse if eyewear.round else g.rectangle
            shape(lb, fill=eyewear.tint if eyewear.tint[3] else None, outline=rim, width=eyewear.thickness)
        y = oy + p.eye_y - 2
        g.line([lenses[0][2], y, lenses[1][0], y], fill=rim, width=2)
        g.line([lenses[0][0], y, ox + p.cx - p.rx, y - 2], fill=rim, width=2)
        g.line([lenses[1][2], y, ox + p.cx + p.rx, y - 2], fill=rim, width=2)
        im = Image.alpha_composite(im.convert("RGBA"), over).convert("RGB")
    return np.asarray(im)


def synth_corpus(spec: SyntheticSpec, out_dir) -> CorpusManifest:
    """Render ``2 * n_per_domain`` faces plus an attribute file and manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directory {out}: {exc}") from exc
    rng = np.random.default_rng(spec.seed)
    a_files, b_files = [], []
    for i in range(spec.n_per_domain):
        params = sample_face_params(rng)
        wear = sample_eyewear(rng, spec.styles)
        name = f"a_{i:05d}.png"
        Image.fromarray(render_face(params, wear)).save(out / name, format="PNG")
        a_files.append(name)
    for i in range(spec.n_per_domain):
        params = sample_face_params(rng)
        name = f"b_{i:05d}.png"
        Image.fromarray(render_face(params)).save(out / name, format="PNG")
        b_files.append(name)
    table = AttributeTable([GLASSES_ATTR], [(f, {GLASSES_ATTR: 1}) for f in a_files]
                           + [(f, {GLASSES_ATTR: -1}) for f in b_files])
    (out / ATTR_FILENAME).write_text(format_attribute_table(table))
    manifest = CorpusManifest(str(out), a_files, b_files, spec.resolution)
    manifest.save(out / MANIFEST_FILENAME)
    log.info("wrote %d synthetic faces to %s", 2 * spec.n_per_domain, out)
    return manifest


def load_manifest(path, resolution: Optional[int] = None) -> CorpusManifest:
    """Load a manifest JSON, or build one from a directory's attribute file."""
    path = Path(path)
    if path.is_dir():
        if (path / MANIFEST_FILENAME).exists():
            m = CorpusManifest.load(path / MANIFEST_FILENAME)
        elif (path / ATTR_FILENAME).exists():
            table = parse_attribute_table((path / ATTR_FILENAME).read_text())
            m = split_by_glasses(table, path, resolution or 224)
        else:
            raise FileNotFoundError(f"no {MANIFEST_FILENAME} or {ATTR_FILENAME} in {path}")
    elif path.suffix == ".json":
        m = CorpusManifest.load(path)
    else:
        table = parse_attribute_table(path.read_text())
        m = split_by_glasses(table, path.parent, resolution or 224)
    if resolution is not None:
        m.resolution = resolution
    return m


# --- batching -----------------------------------------------------------------

class BatchIterator:
    """Unpaired (A-batch, B-batch) stream, a pure function of ``(seed, step)``.

    Each domain is reshuffled every ``len(files) // batch`` batches; the
    trailing remainder of a permutation is dropped. Being indexable by step
    makes resuming a run exact without replaying earlier batches.
    """

    def __init__(self, manifest: CorpusManifest, batch: int, seed: int, training: bool = True,
                 start_step: int = 0, dtype=torch.float32):
        manifest.require_trainable()
        if batch < 1:
            raise ValueError("batch must be >= 1")
        if batch > len(manifest.domain_a_files) or batch > len(manifest.domain_b_files):
            raise ValueError(f"batch {batch} larger than a domain "
                             f"(|A|={len(manifest.domain_a_files)}, |B|={len(manifest.domain_b_files)})")
        self.manifest = manifest
        self.batch = batch
        self.seed = seed
        self.training = training
        self.step = start_step
        self.dtype = dtype
        self._raw: dict[str, np.ndarray] = {}

    @property
    def steps_per_epoch(self) -> int:
        return max(len(self.manifest.domain_a_files), len(self.manifest.domain_b_files)) // self.batch

    def indices(self, domain_id: int, step: int) -> np.ndarray:
        n = len(self.manifest.domain_a_files if domain_id == 0 else self.manifest.domain_b_files)
        per_epoch = n // self.batch
        epoch, within = divmod(step, per_epoch)
        perm = np.random.default_rng([self.seed, domain_id, epoch]).permutation(n)
        return perm[within * self.batch:(within + 1) * self.batch]

    def _load(self, fname: str) -> np.ndarray:
        arr = self._raw.get(fname)
        if arr is None:
            arr = to_uint8_array(self.manifest.path(fname))
            self._raw[fname] = arr
        return arr

    def _domain_batch(self, domain_id: int, step: int) -> torch.Tensor:
        files = self.manifest.domain_a_files if domain_id == 0 else self.manifest.domain_b_files
        out = []
        for slot, idx in enumerate(self.indices(domain_id, step)):
            rng = np.random.default_rng([self.seed, domain_id, step, slot, 1])
            img = preprocess(self._load(files[idx]), training=self.training, rng=rng,
                             resolution=self.manifest.resolution)
            out.append(img.pixels)
        return torch.stack(out).to(self.dtype)

    def batch_at(self, step: int) -> tuple[torch.Tensor, torch.Tensor]:
        return self._domain_batch(0, step), self._domain_batch(1, step)

    def __iter__(self) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
        return self

    def __next__(self):
        out = self.batch_at(self.step)
        self.step += 1
        return out


def batch_iterator(manifest: CorpusManifest, batch: int, seed: int, training: bool = True,
                   start_step: int = 0, dtype=torch.float32) -> BatchIterator:
    return BatchIterator(manifest, batch, seed, training, start_step, dtype)


def load_domain(manifest: CorpusManifest, domain, dtype=torch.float32) -> torch.Tensor:
    """Every image of one domain, preprocessed without augmentation, as an (N, 3, H, W) tensor."""
    files = manifest.files(domain)
    return torch.stack([preprocess(manifest.path(f), resolution=manifest.resolution).pixels
                        for f in files]).to(dtype)
