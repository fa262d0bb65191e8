"""Semi-synthetic tattooed-skin sample generation.

Templates (clean ink-density glyphs) are alpha-composited onto skin bases
under randomized colour shift, Gaussian blur and reduced opacity. Each
composite is then cropped around its ink mask and resized to the model input
side. A paired clean-template target (dark ink on a white field, same crop)
is produced alongside every sample.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .errors import InvalidStateError

MASK_EPS = 0.02
INK_COLOR = (0.08, 0.07, 0.12)
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class TattooTemplate:
    id: str
    category_label: int
    ink: np.ndarray

    def __post_init__(self):
        ink = np.asarray(self.ink, dtype=np.float64)
        if ink.ndim != 2 or ink.shape[0] != ink.shape[1]:
            raise ValueError(f"template ink must be a square 2-D grid, got {ink.shape}")
        if ink.min() < 0.0 or ink.max() > 1.0:
            raise ValueError("template ink values must lie in [0, 1]")
        if not (ink > 0.05).any():
            raise ValueError(f"template {self.id!r} is empty")
        self.ink = ink

    @property
    def side(self) -> int:
        return self.ink.shape[0]


@dataclass
class SkinBase:
    id: str
    image: np.ndarray

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"skin base must be an HxWx3 RGB grid, got {img.shape}")
        self.image = np.clip(img, 0.0, 1.0)


@dataclass
class AugmentationRanges:
    scale: tuple[float, float] = (0.5, 1.0)
    color_shift: tuple[float, float] = (0.6, 1.0)
    blur_sigma: tuple[float, float] = (0.0, 2.0)
    opacity: tuple[float, float] = (0.35, 0.95)

    def __post_init__(self):
        for name in ("scale", "color_shift", "blur_sigma", "opacity"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is inverted: {lo} > {hi}")
        if not 0.0 < self.scale[0] <= self.scale[1] <= 1.0:
            raise ValueError("scale range must lie in (0, 1]")
        if self.blur_sigma[0] < 0.0:
            raise ValueError("blur_sigma must be non-negative")
        if not 0.0 <= self.opacity[0] <= self.opacity[1] <= 1.0:
            raise ValueError("opacity range must lie in [0, 1]")


@dataclass
class AugmentationParams:
    """Everything needed to reproduce one composite from (template, base).

    ``scale`` is relative to the base image's shorter side; ``offset`` is the
    (row, col) of the scaled template's top-left corner in base coordinates.
    """

    scale: float
    offset: tuple[int, int]
    color_shift: tuple[float, float, float]
    blur_sigma: float
    opacity: float
    seed: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["offset"] = list(self.offset)
        d["color_shift"] = list(self.color_shift)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationParams":
        return cls(
            scale=float(d["scale"]),
            offset=(int(d["offset"][0]), int(d["offset"][1])),
            color_shift=tuple(float(c) for c in d["color_shift"]),
            blur_sigma=float(d["blur_sigma"]),
            opacity=float(d["opacity"]),
            seed=int(d["seed"]),
        )


@dataclass
class SyntheticSample:
    image: np.ndarray
    template_id: str
    category_label: int
    mask: np.ndarray
    params: AugmentationParams
    # clean-template training target aligned with ``image``: 1 - ink on white
    target: np.ndarray | None = None
    # half-open (row0, row1, col0, col1) crop window in pre-crop coordinates
    bbox: tuple[int, int, int, int] | None = None


@dataclass
class ManifestEntry:
    path: str
    template_id: str
    label: int
    params: AugmentationParams
    target_path: str
    base_id: str = ""

    def to_record(self) -> dict:
        return {
            "path": self.path,
            "template_id": self.template_id,
            "label": self.label,
            "params": self.params.to_dict(),
            "target_path": self.target_path,
            "base_id": self.base_id,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ManifestEntry":
        return cls(
            path=rec["path"],
            template_id=rec["template_id"],
            label=int(rec["label"]),
            params=AugmentationParams.from_dict(rec["params"]),
            target_path=rec["target_path"],
            base_id=rec.get("base_id", ""),
        )

    @property
    def sample_id(self) -> str:
        return Path(self.path).stem


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    num_categories: int
    per_template_count: int
    global_seed: int
    root: Path = field(default=Path("."), compare=False)
    image_side: int = 224

    MANIFEST_NAME = "manifest.jsonl"
    META_NAME = "dataset.json"

    def __len__(self):
        return len(self.entries)

    def category_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for e in self.entries:
            counts[e.label] = counts.get(e.label, 0) + 1
        return counts

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def write(self, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps(e.to_record(), sort_keys=True) for e in self.entries]
        path = out_dir / self.MANIFEST_NAME
        path.write_text("\n".join(lines) + "\n")
        meta = {
            "num_categories": self.num_categories,
            "per_template_count": self.per_template_count,
            "global_seed": self.global_seed,
            "image_side": self.image_side,
        }
        (out_dir / self.META_NAME).write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
        return path

    @classmethod
    def read(cls, path: str | Path) -> "DatasetManifest":
        """Load from a dataset directory or from its ``manifest.jsonl``."""
        path = Path(path)
        root = path if path.is_dir() else path.parent
        manifest_path = root / cls.MANIFEST_NAME if path.is_dir() else path
        if not manifest_path.exists():
            raise FileNotFoundError(manifest_path)
        entries = [
            ManifestEntry.from_record(json.loads(line))
            for line in manifest_path.read_text().splitlines()
            if line.strip()
        ]
        meta_path = root / cls.META_NAME
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
        else:
            labels = {e.label for e in entries}
            meta = {
                "num_categories": len(labels),
                "per_template_count": len(entries) // max(len(labels), 1),
                "global_seed": -1,
                "image_side": 224,
            }
        return cls(
            entries=entries,
            num_categories=meta["num_categories"],
            per_template_count=meta["per_template_count"],
            global_seed=meta["global_seed"],
            root=root,
            image_side=meta.get("image_side", 224),
        )


# ---------------------------------------------------------------------------
# image helpers


def resize(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a float HxW or HxWxC grid to ``shape`` (rows, cols)."""
    arr = np.asarray(arr, dtype=np.float64)
    rows, cols = int(shape[0]), int(shape[1])
    if arr.shape[:2] == (rows, cols):
        return arr.copy()
    if arr.ndim == 2:
        im = Image.fromarray(arr.astype(np.float32), mode="F")
        return np.asarray(im.resize((cols, rows), Image.BILINEAR), dtype=np.float64)
    return np.stack([resize(arr[..., c], shape) for c in range(arr.shape[2])], axis=-1)


def to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(arr: np.ndarray, path: str | Path) -> None:
    Image.fromarray(to_uint8(arr)).save(path, format="PNG")


def load_image(path: str | Path, gray: bool = False) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("L" if gray else "RGB")
        return np.asarray(im, dtype=np.float64) / 255.0


# ---------------------------------------------------------------------------
# procedural inputs


def _draw_shape(draw: ImageDraw.ImageDraw, rng: np.random.Generator, big: int) -> None:
    lo, hi = 0.12 * big, 0.88 * big
    width = max(1, int(rng.uniform(0.03, 0.07) * big))
    kind = rng.integers(0, 5)
    if kind == 0:  # polyline stroke
        n = int(rng.integers(3, 7))
        pts = [tuple(rng.uniform(lo, hi, size=2)) for _ in range(n)]
        draw.line(pts, fill=255, width=width, joint="curve")
    elif kind == 1:  # ellipse outline
        c = rng.uniform(0.3 * big, 0.7 * big, size=2)
        r = rng.uniform(0.08 * big, 0.3 * big, size=2)
        box = [c[0] - r[0], c[1] - r[1], c[0] + r[0], c[1] + r[1]]
        draw.ellipse(box, outline=255, width=width)
    elif kind == 2:  # arc
        c = rng.uniform(0.3 * big, 0.7 * big, size=2)
        r = rng.uniform(0.1 * big, 0.3 * big)
        start = rng.uniform(0, 360)
        draw.arc([c[0] - r, c[1] - r, c[0] + r, c[1] + r], start, start + rng.uniform(90, 300),
                 fill=255, width=width)
    elif kind == 3:  # filled polygon
        c = rng.uniform(0.3 * big, 0.7 * big, size=2)
        n = int(rng.integers(3, 7))
        ang = np.sort(rng.uniform(0, 2 * np.pi, size=n))
        rad = rng.uniform(0.06 * big, 0.22 * big, size=n)
        pts = [(c[0] + r * np.cos(a), c[1] + r * np.sin(a)) for a, r in zip(ang, rad)]
        draw.polygon(pts, fill=255)
    else:  # rectangle outline
        p = np.sort(rng.uniform(lo, hi, size=(2, 2)), axis=0)
        draw.rectangle([p[0, 0], p[0, 1], p[1, 0], p[1, 1]], outline=255, width=width)


def generate_glyph_template(rng_seed: int, side: int = 224, template_id: str | None = None,
                            category_label: int = 0) -> TattooTemplate:
    """Render 2-6 random strokes/shapes as an anti-aliased ink-density grid."""
    if side < 32:
        raise ValueError(f"template side must be >= 32, got {side}")
    rng = np.random.default_rng(rng_seed)
    supersample = 4
    big = side * supersample
    canvas = Image.new("L", (big, big), 0)
    draw = ImageDraw.Draw(canvas)
    for _ in range(int(rng.integers(2, 7))):
        _draw_shape(draw, rng, big)
    ink = np.asarray(canvas.resize((side, side), Image.BOX), dtype=np.float64) / 255.0
    if template_id is None:
        template_id = f"glyph{rng_seed:06d}"
    return TattooTemplate(id=template_id, category_label=category_label, ink=ink)


def generate_glyph_templates(n: int, side: int = 224, seed: int = 0) -> list[TattooTemplate]:
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return [
        generate_glyph_template(int(s), side, template_id=f"glyph{i:04d}", category_label=i)
        for i, s in enumerate(seeds)
    ]


def procedural_skin_base(seed: int, height: int = 256, width: int = 256,
                         base_id: str | None = None) -> SkinBase:
    """Smooth skin-toned field with low-frequency shading and fine speckle."""
    rng = np.random.default_rng(seed)
    r = rng.uniform(0.55, 0.95)
    tone = np.array([r, r * rng.uniform(0.68, 0.85), r * rng.uniform(0.52, 0.75)])
    low = ndimage.gaussian_filter(rng.normal(size=(height, width)), sigma=max(height, width) / 10)
    low /= np.abs(low).max() + 1e-12
    fine = ndimage.gaussian_filter(rng.normal(size=(height, width)), sigma=0.8)
    shade = 1.0 + 0.08 * low + 0.03 * fine
    img = np.clip(tone[None, None, :] * shade[..., None], 0.0, 1.0)
    return SkinBase(id=base_id or f"skin{seed:06d}", image=img)


def procedural_skin_bases(n: int, height: int = 256, width: int = 256, seed: int = 0,
                          prefix: str = "skin") -> list[SkinBase]:
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return [procedural_skin_base(int(s), height, width, base_id=f"{prefix}{i:04d}")
            for i, s in enumerate(seeds)]


def _image_files(folder: str | Path) -> list[Path]:
    folder = Path(folder)
    if not folder.is_dir():
        raise FileNotFoundError(folder)
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_template_folder(folder: str | Path, side: int = 224) -> list[TattooTemplate]:
    """One template per image file (dark ink on a light background), labelled in
    sorted filename order."""
    templates = []
    for label, path in enumerate(_image_files(folder)):
        gray = load_image(path, gray=True)
        h, w = gray.shape
        n = max(h, w)
        padded = np.ones((n, n))
        padded[(n - h) // 2:(n - h) // 2 + h, (n - w) // 2:(n - w) // 2 + w] = gray
        ink = np.clip(1.0 - resize(padded, (side, side)), 0.0, 1.0)
        templates.append(TattooTemplate(id=path.stem, category_label=label, ink=ink))
    return templates


def load_skin_folder(folder: str | Path) -> list[SkinBase]:
    return [SkinBase(id=p.stem, image=load_image(p)) for p in _image_files(folder)]


# ---------------------------------------------------------------------------
# compositing


def scaled_side(params: AugmentationParams, base_shape: tuple[int, ...]) -> int:
    return max(1, int(round(params.scale * min(base_shape[0], base_shape[1]))))


def sample_params(rng: np.random.Generator, base_shape: tuple[int, ...],
                  ranges: AugmentationRanges | None = None, seed: int = 0) -> AugmentationParams:
    ranges = ranges or AugmentationRanges()
    scale = float(rng.uniform(*ranges.scale))
    n = max(1, int(round(scale * min(base_shape[0], base_shape[1]))))
    row = int(rng.integers(0, base_shape[0] - n + 1))
    col = int(rng.integers(0, base_shape[1] - n + 1))
    color = tuple(float(c) for c in rng.uniform(*ranges.color_shift, size=3))
    blur = float(rng.uniform(*ranges.blur_sigma))
    opacity = float(rng.uniform(*ranges.opacity))
    return AugmentationParams(scale=scale, offset=(row, col), color_shift=color,
                              blur_sigma=blur, opacity=opacity, seed=int(seed))


def place_ink(template: TattooTemplate, base_shape: tuple[int, ...],
              params: AugmentationParams) -> np.ndarray:
    """Scaled template ink on a zero canvas the size of the base."""
    h, w = base_shape[0], base_shape[1]
    n = scaled_side(params, base_shape)
    r0, c0 = params.offset
    if r0 < 0 or c0 < 0 or r0 + n > h or c0 + n > w:
        raise ValueError(
            f"template of side {n} at offset {params.offset} does not fit in a {h}x{w} base")
    canvas = np.zeros((h, w))
    canvas[r0:r0 + n, c0:c0 + n] = np.clip(resize(template.ink, (n, n)), 0.0, 1.0)
    return canvas


def compose(template: TattooTemplate, base: SkinBase, params: AugmentationParams,
            ink_color: Sequence[float] = INK_COLOR, mask_eps: float = MASK_EPS) -> SyntheticSample:
    """Alpha-composite ``template`` onto ``base``.

    out = base * (1 - opacity * t') + ink_color * opacity * t', where t' is the
    placed ink density multiplied per channel by ``color_shift`` and blurred.
    The mask marks pre-blur placed ink above ``mask_eps``.
    """
    if not 0.0 <= params.opacity <= 1.0:
        raise ValueError(f"opacity must lie in [0, 1], got {params.opacity}")
    if params.blur_sigma < 0.0:
        raise ValueError("blur_sigma must be non-negative")
    placed = place_ink(template, base.image.shape, params)
    mask = placed > mask_eps
    shifted = placed[..., None] * np.asarray(params.color_shift, dtype=np.float64)[None, None, :]
    if params.blur_sigma > 0.0:
        shifted = np.stack(
            [ndimage.gaussian_filter(shifted[..., c], params.blur_sigma, mode="constant")
             for c in range(3)], axis=-1)
    alpha = params.opacity * shifted
    ink = np.asarray(ink_color, dtype=np.float64)[None, None, :]
    image = np.clip(base.image * (1.0 - alpha) + ink * alpha, 0.0, 1.0)
    return SyntheticSample(image=image, template_id=template.id,
                           category_label=template.category_label, mask=mask,
                           params=params, target=1.0 - placed)


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise InvalidStateError("mask is empty")
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def crop_box(mask: np.ndarray, margin_frac: float = 0.1) -> tuple[int, int, int, int]:
    """Tight mask bbox grown by ``margin_frac`` of its size per side, clamped."""
    r0, r1, c0, c1 = mask_bbox(mask)
    dr = int(math.ceil(margin_frac * (r1 - r0)))
    dc = int(math.ceil(margin_frac * (c1 - c0)))
    h, w = mask.shape
    return max(0, r0 - dr), min(h, r1 + dr), max(0, c0 - dc), min(w, c1 + dc)


def crop_to_tattoo(sample: SyntheticSample, margin_frac: float = 0.1,
                   out_side: int = 224) -> SyntheticSample:
    if margin_frac < 0:
        raise ValueError("margin_frac must be non-negative")
    r0, r1, c0, c1 = crop_box(sample.mask, margin_frac)
    image = np.clip(resize(sample.image[r0:r1, c0:c1], (out_side, out_side)), 0.0, 1.0)
    target = None
    if sample.target is not None:
        target = np.clip(resize(sample.target[r0:r1, c0:c1], (out_side, out_side)), 0.0, 1.0)
    return SyntheticSample(image=image, template_id=sample.template_id,
                           category_label=sample.category_label, mask=sample.mask,
                           params=sample.params, target=target, bbox=(r0, r1, c0, c1))


# ---------------------------------------------------------------------------
# dataset construction


def sample_seed(global_seed: int, label: int, index: int) -> int:
    return int(np.random.SeedSequence([global_seed, label, index]).generate_state(1)[0])


def _as_pools(bases) -> list[list[SkinBase]]:
    if not bases:
        raise ValueError("at least one skin base is required")
    if isinstance(bases[0], SkinBase):
        return [list(bases)]
    pools = [list(p) for p in bases]
    if any(len(p) == 0 for p in pools):
        raise ValueError("every base pool needs at least one image")
    return pools


@dataclass
class PlannedSample:
    template: TattooTemplate
    pool_index: int
    index: int
    seed: int

    @property
    def name(self) -> str:
        return f"c{self.template.category_label:05d}_{self.index:04d}"


def plan_samples(templates: Sequence[TattooTemplate], n_pools: int, per_template_count: int,
                 global_seed: int) -> list[PlannedSample]:
    """Fixed (template, pool, seed) assignment for every sample, in manifest order."""
    if not templates:
        raise ValueError("template list is empty")
    if per_template_count < 1:
        raise ValueError("per_template_count must be >= 1")
    labels = [t.category_label for t in templates]
    if len(set(labels)) != len(labels):
        raise ValueError("category labels must be unique per template")
    return [
        PlannedSample(t, k % n_pools, k, sample_seed(global_seed, t.category_label, k))
        for t in templates
        for k in range(per_template_count)
    ]


def _render_one(task):
    template, pool, seed, ranges, out_side, margin_frac = task
    rng = np.random.default_rng(seed)
    base = pool[int(rng.integers(0, len(pool)))]
    params = sample_params(rng, base.image.shape, ranges, seed=seed)
    sample = crop_to_tattoo(compose(template, base, params), margin_frac, out_side)
    return to_uint8(sample.image), to_uint8(sample.target), params, base.id


def build_dataset(templates: Sequence[TattooTemplate], bases, per_template_count: int,
                  global_seed: int, out_dir: str | Path, ranges: AugmentationRanges | None = None,
                  out_side: int = 224, margin_frac: float = 0.1, workers: int = 1) -> DatasetManifest:
    """Generate ``per_template_count`` cropped samples per template and write them
    with their clean targets and a JSON-lines manifest under ``out_dir``.

    ``bases`` is either a flat list of SkinBase or a list of pools; with several
    pools, sample k of each template draws from pool ``k % n_pools`` so the
    pools contribute evenly.
    """
    if not templates:
        raise ValueError("template list is empty")
    pools = _as_pools(bases)
    plan = plan_samples(templates, len(pools), per_template_count, global_seed)
    ranges = ranges or AugmentationRanges()
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "targets").mkdir(parents=True, exist_ok=True)

    tasks = [(p.template, pools[p.pool_index], p.seed, ranges, out_side, margin_frac) for p in plan]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_render_one, tasks, chunksize=16))
    else:
        results = [_render_one(task) for task in tasks]

    entries = []
    for p, (img, tgt, params, base_id) in zip(plan, results):
        img_rel, tgt_rel = f"images/{p.name}.png", f"targets/{p.name}.png"
        Image.fromarray(img).save(out_dir / img_rel, format="PNG")
        Image.fromarray(tgt).save(out_dir / tgt_rel, format="PNG")
        entries.append(ManifestEntry(path=img_rel, template_id=p.template.id,
                                     label=p.template.category_label,
                                     params=params, target_path=tgt_rel, base_id=base_id))

    manifest = DatasetManifest(entries=entries, num_categories=len(templates),
                               per_template_count=per_template_count, global_seed=global_seed,
                               root=out_dir, image_side=out_side)
    manifest.write(out_dir)
    return manifest
