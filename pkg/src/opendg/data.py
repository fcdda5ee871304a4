"""Datasets, triplet sampling, preprocessing and known/unknown splits."""

from __future__ import annotations

import gzip
import hashlib
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from PIL import Image

log = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
DEFAULT_SIZE = 128
DIGITS_SIZE = 28

MNIST_MD5 = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}


@dataclass
class LabeledImages:
    """Preprocessed images with integer labels, a domain name and a stable id per sample."""

    images: torch.Tensor  # (N, 3, H, W)
    labels: torch.Tensor  # (N,) long
    domains: list[str]
    ids: list[str]

    def __post_init__(self):
        n = self.images.shape[0]
        self.labels = torch.as_tensor(self.labels, dtype=torch.long)
        if self.labels.shape != (n,) or len(self.domains) != n or len(self.ids) != n:
            raise ValueError("images, labels, domains and ids must have one entry per sample")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx) -> "LabeledImages":
        idx = np.asarray(idx, dtype=np.int64)
        t = torch.as_tensor(idx)
        return LabeledImages(
            self.images[t], self.labels[t],
            [self.domains[i] for i in idx], [self.ids[i] for i in idx],
        )

    def relabel(self, labels) -> "LabeledImages":
        return LabeledImages(self.images, torch.as_tensor(labels, dtype=torch.long), self.domains, self.ids)

    @staticmethod
    def concat(parts: Sequence["LabeledImages"]) -> "LabeledImages":
        return LabeledImages(
            torch.cat([p.images for p in parts]),
            torch.cat([p.labels for p in parts]),
            [d for p in parts for d in p.domains],
            [i for p in parts for i in p.ids],
        )


# --------------------------------------------------------------------------
# preprocessing


def _to_pil(x) -> Image.Image:
    if isinstance(x, (str, os.PathLike)):
        with Image.open(x) as im:
            im.load()
            return im.convert("RGB")
    if isinstance(x, Image.Image):
        return x.convert("RGB")
    arr = np.asarray(x)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected an HxW or HxWx3 image, got shape {arr.shape}")
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return Image.fromarray(arr, "RGB")


def preprocess(x, target_size: int = DEFAULT_SIZE, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> torch.Tensor:
    """Resize to ``target_size`` square, scale to [0, 1] and normalize per channel.

    ``x`` may be a path, a PIL image or an ``HxW[x3]`` array (uint8, or float in
    [0, 1]). Already-sized input is not resampled.
    """
    im = _to_pil(x)
    if im.size != (target_size, target_size):
        im = im.resize((target_size, target_size), Image.BILINEAR)
    arr = torch.from_numpy(np.asarray(im, dtype=np.float32) / 255.0).permute(2, 0, 1)
    m = torch.tensor(mean, dtype=torch.float32)[:, None, None]
    s = torch.tensor(std, dtype=torch.float32)[:, None, None]
    return (arr - m) / s


def preprocess_batch(arrs: np.ndarray, target_size: int, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> torch.Tensor:
    """Vectorized :func:`preprocess` for a uint8 ``(N, H, W, 3)`` stack."""
    if arrs.shape[1:3] != (target_size, target_size):
        return torch.stack([preprocess(a, target_size, mean, std) for a in arrs])
    x = torch.from_numpy(arrs.astype(np.float32) / 255.0).permute(0, 3, 1, 2)
    m = torch.tensor(mean, dtype=torch.float32)[None, :, None, None]
    s = torch.tensor(std, dtype=torch.float32)[None, :, None, None]
    return ((x - m) / s).contiguous()


# --------------------------------------------------------------------------
# triplets


@dataclass
class TripletBatch:
    x1: torch.Tensor
    x2: torch.Tensor
    x3: torch.Tensor
    y1: torch.Tensor
    y3: torch.Tensor
    index: np.ndarray  # (B, 3) sample indices


def build_triplets(labels, epoch: int = 0, reshuffle_period: int = 5, seed: int = 0) -> np.ndarray:
    """Triplet indices ``(i1, i2, i3)`` with ``y[i1] == y[i2] != y[i3]``.

    Every sample appears once as ``i1``. The pairing is a function of
    ``(seed, epoch // reshuffle_period)`` so it changes only every
    ``reshuffle_period`` epochs. Returns an ``(N, 3)`` int array.
    """
    y = np.asarray(labels)
    if reshuffle_period < 1:
        raise ValueError("reshuffle_period must be >= 1")
    classes, inverse = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise ValueError("triplets need at least two classes")
    rng = np.random.default_rng([int(seed), int(epoch) // reshuffle_period])
    members = [np.flatnonzero(inverse == k) for k in range(len(classes))]
    complements = [np.flatnonzero(inverse != k) for k in range(len(classes))]
    singles = [classes[k] for k, m in enumerate(members) if len(m) == 1]
    if singles:
        log.warning("classes %s have a single sample; it is paired with itself", singles)
    n = len(y)
    order = rng.permutation(n)
    out = np.empty((n, 3), dtype=np.int64)
    for row, i in enumerate(order):
        k = inverse[i]
        same = members[k]
        if len(same) == 1:
            j = i
        else:
            j = same[rng.integers(len(same) - 1)]
            if j == i:
                j = same[-1]
        others = complements[k]
        out[row] = (i, j, others[rng.integers(len(others))])
    return out


def iter_triplet_batches(ds: LabeledImages, triplets: np.ndarray, batch_size: int) -> Iterator[TripletBatch]:
    for start in range(0, len(triplets), batch_size):
        idx = triplets[start:start + batch_size]
        t = torch.as_tensor(idx)
        yield TripletBatch(
            ds.images[t[:, 0]], ds.images[t[:, 1]], ds.images[t[:, 2]],
            ds.labels[t[:, 0]], ds.labels[t[:, 2]], idx,
        )


# --------------------------------------------------------------------------
# splits


@dataclass
class DomainSplit:
    known_labels: tuple[int, ...]
    unknown_labels: tuple[int, ...]
    source_domain: str
    target_domains: tuple[str, ...]

    def __post_init__(self):
        self.known_labels = tuple(sorted(int(k) for k in self.known_labels))
        self.unknown_labels = tuple(sorted(int(k) for k in self.unknown_labels))
        if not self.known_labels:
            raise ValueError("known label set must be nonempty")
        if set(self.known_labels) & set(self.unknown_labels):
            raise ValueError("known and unknown label sets overlap")
        if self.source_domain in self.target_domains:
            raise ValueError("the source domain cannot also be a target")

    @property
    def num_known(self) -> int:
        return len(self.known_labels)


def split_open(ds: LabeledImages, known_labels) -> tuple[LabeledImages, LabeledImages]:
    """Partition into known-class samples (relabelled 0..C-1) and the rest (relabelled C)."""
    known = sorted({int(k) for k in known_labels})
    if not known:
        raise ValueError("known label set must be nonempty")
    present = set(ds.labels.tolist())
    missing = set(known) - present
    if missing and len(ds):
        log.debug("known labels %s absent from this dataset", sorted(missing))
    remap = {k: i for i, k in enumerate(known)}
    y = ds.labels.numpy()
    is_known = np.isin(y, known)
    closed_idx = np.flatnonzero(is_known)
    open_idx = np.flatnonzero(~is_known)
    closed = ds.subset(closed_idx).relabel([remap[int(v)] for v in y[closed_idx]])
    opened = ds.subset(open_idx).relabel(np.full(len(open_idx), len(known), dtype=np.int64))
    return closed, opened


# --------------------------------------------------------------------------
# synthetic domains

# (foreground, background); every channel keeps foreground > background so a
# domain differs in per-channel level and contrast but never in polarity
PALETTES = (
    ((0.95, 0.95, 0.95), (0.08, 0.08, 0.08)),  # white on black
    ((0.95, 0.85, 0.65), (0.22, 0.12, 0.05)),  # cream on brown
    ((0.70, 0.90, 0.95), (0.05, 0.10, 0.28)),  # pale cyan on navy
    ((0.80, 0.80, 0.80), (0.35, 0.35, 0.35)),  # light on mid gray
    ((0.75, 0.95, 0.70), (0.25, 0.08, 0.30)),  # pale green on plum
)
TEXTURES = ("flat", "stripes", "noise")
SHAPES = ("disk", "ring", "square", "square_outline", "hbar", "vbar", "plus", "x", "triangle", "diagonal")


@dataclass(frozen=True)
class SyntheticDomainSpec:
    """Parametric shape classes rendered under per-domain palettes and textures."""

    image_size: int = 32
    num_classes: int = 10
    palettes: tuple = PALETTES
    textures: tuple = TEXTURES
    # (palette index, texture index) per domain, cycled if more domains are requested
    domain_styles: tuple = ((0, 0), (1, 1), (2, 2), (3, 0), (4, 1))
    contrast_range: tuple = (0.75, 1.0)
    contrast_jitter: float = 0.1
    pixel_noise: float = 0.03
    stripe_amplitude: float = 0.1
    noise_amplitude: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.num_classes <= len(SHAPES):
            raise ValueError(f"num_classes must be in [2, {len(SHAPES)}]")
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")


def _shape_mask(kind: str, u: np.ndarray, v: np.ndarray, t: float) -> np.ndarray:
    aa = 0.06
    r = np.hypot(u, v)
    box = np.maximum(np.abs(u), np.abs(v))

    def soft(dist):
        # inside where dist < 0, smooth edge of width aa
        return np.clip(0.5 - dist / aa, 0.0, 1.0)

    if kind == "disk":
        return soft(r - 0.55)
    if kind == "ring":
        return soft(np.abs(r - 0.5) - t / 2)
    if kind == "square":
        return soft(box - 0.5)
    if kind == "square_outline":
        return soft(np.abs(box - 0.5) - t / 2)
    if kind == "hbar":
        return soft(np.maximum(np.abs(v) - t, np.abs(u) - 0.7))
    if kind == "vbar":
        return soft(np.maximum(np.abs(u) - t, np.abs(v) - 0.7))
    if kind == "plus":
        return np.maximum(_shape_mask("hbar", u, v, t), _shape_mask("vbar", u, v, t))
    if kind == "x":
        d1 = np.abs(u - v) / np.sqrt(2)
        d2 = np.abs(u + v) / np.sqrt(2)
        return soft(np.maximum(np.minimum(d1, d2) - t, box - 0.6))
    if kind == "triangle":
        # upward triangle with vertices (0,-0.6), (-0.6,0.5), (0.6,0.5); v grows downward
        e1 = v - 0.5
        e2 = (-1.1 * u - 0.6 * v - 0.36) / np.hypot(1.1, 0.6)
        e3 = (1.1 * u - 0.6 * v - 0.36) / np.hypot(1.1, 0.6)
        return soft(np.maximum(np.maximum(e1, e2), e3))
    if kind == "diagonal":
        return soft(np.maximum(np.abs(u + v) / np.sqrt(2) - t, box - 0.7))
    raise ValueError(f"unknown shape {kind!r}")


def render_glyph(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Soft ``size x size`` mask of one shape with random placement, scale, stroke and tilt."""
    g = (np.arange(size) + 0.5) / size * 2 - 1
    x, y = np.meshgrid(g, g)
    cx, cy = rng.uniform(-0.15, 0.15, size=2)
    scale = rng.uniform(0.75, 1.1)
    theta = rng.uniform(-0.2, 0.2)
    t = rng.uniform(0.12, 0.2)
    c, s = np.cos(theta), np.sin(theta)
    dx, dy = (x - cx) / scale, (y - cy) / scale
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return _shape_mask(kind, u, v, t)


def _background(texture: str, base: np.ndarray, size: int, spec: "SyntheticDomainSpec",
                rng: np.random.Generator) -> np.ndarray:
    img = np.broadcast_to(base, (size, size, 3)).copy()
    if texture == "flat":
        return img
    if texture == "stripes":
        freq = rng.uniform(2.0, 5.0)
        phase = rng.uniform(0, 2 * np.pi)
        ang = rng.uniform(0, np.pi)
        g = np.arange(size) / size
        x, y = np.meshgrid(g, g)
        wave = spec.stripe_amplitude * np.sin(2 * np.pi * freq * (np.cos(ang) * x + np.sin(ang) * y) + phase)
        return img + wave[:, :, None]
    if texture == "noise":
        a = spec.noise_amplitude
        return img + rng.uniform(-a, a, size=(size, size, 1))
    raise ValueError(f"unknown texture {texture!r}")


def _box_blur(img: np.ndarray, passes: int) -> np.ndarray:
    for _ in range(passes):
        p = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
        img = (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] + p[1:-1, 1:-1]) / 5.0
    return img


@dataclass
class DomainLook:
    fg: np.ndarray
    bg: np.ndarray
    texture: str
    contrast: float
    blur_passes: int


def domain_look(spec: SyntheticDomainSpec, domain: int, rng: np.random.Generator) -> DomainLook:
    """Appearance parameters of one domain; domain 0 is the undistorted source look."""
    pal_i, tex_i = spec.domain_styles[domain % len(spec.domain_styles)]
    fg, bg = (np.asarray(c, dtype=np.float64) for c in spec.palettes[pal_i % len(spec.palettes)])
    texture = spec.textures[tex_i % len(spec.textures)]
    contrast = rng.uniform(*spec.contrast_range) if domain > 0 else 1.0
    blur = 0 if domain == 0 else int(rng.integers(0, 2))
    return DomainLook(fg, bg, texture, contrast, blur)


def paint(mask: np.ndarray, look: DomainLook, spec: SyntheticDomainSpec, rng: np.random.Generator) -> np.ndarray:
    """Composite a soft ``(S, S)`` mask in [0, 1] onto a domain background; returns uint8 HWC."""
    s = mask.shape[0]
    m = mask[:, :, None]
    img = _background(look.texture, look.bg, s, spec, rng) * (1 - m) + look.fg * m
    contrast = look.contrast + rng.uniform(-spec.contrast_jitter, spec.contrast_jitter)
    img = (img - 0.5) * contrast + 0.5
    img = _box_blur(img, look.blur_passes)
    img = img + rng.normal(0.0, spec.pixel_noise, size=img.shape)
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


def render_domain(spec: SyntheticDomainSpec, domain: int, n_per_class: int) -> tuple[np.ndarray, np.ndarray]:
    """uint8 ``(n_per_class * num_classes, S, S, 3)`` images and their labels for one domain."""
    rng = np.random.default_rng([spec.seed, domain])
    look = domain_look(spec, domain, rng)
    s = spec.image_size
    labels = np.repeat(np.arange(spec.num_classes), n_per_class)
    images = np.empty((len(labels), s, s, 3), dtype=np.uint8)
    for i, k in enumerate(labels):
        images[i] = paint(render_glyph(SHAPES[k], s, rng), look, spec, rng)
    return images, labels


def paint_grayscale(gray: np.ndarray, spec: SyntheticDomainSpec, domain: int) -> np.ndarray:
    """Re-render uint8 ``(N, H, W)`` grayscale glyphs (e.g. digits) in a synthetic domain's look."""
    rng = np.random.default_rng([spec.seed, domain, 1])
    look = domain_look(spec, domain, rng)
    return np.stack([paint(g.astype(np.float64) / 255.0, look, spec, rng) for g in gray])


def generate_synthetic_domains(
    spec: SyntheticDomainSpec,
    n_domains: int,
    n_per_class: int,
    mean=IMAGENET_MEAN,
    std=IMAGENET_STD,
    raw: bool = False,
) -> dict[str, LabeledImages]:
    """``{"domain0": ..., "domain1": ...}`` over one class set, deterministic in ``spec.seed``.

    Domain 0 is the canonical source. ``raw=True`` keeps uint8 HWC arrays in a
    ``(images, labels)`` tuple per domain instead of preprocessed tensors.
    """
    if n_domains < 1 or n_per_class < 1:
        raise ValueError("n_domains and n_per_class must be >= 1")
    out = {}
    for d in range(n_domains):
        images, labels = render_domain(spec, d, n_per_class)
        name = f"domain{d}"
        if raw:
            out[name] = (images, labels)
            continue
        out[name] = LabeledImages(
            preprocess_batch(images, spec.image_size, mean, std),
            torch.as_tensor(labels),
            [name] * len(labels),
            [f"{name}/{i:06d}" for i in range(len(labels))],
        )
    return out


# --------------------------------------------------------------------------
# manifests


@dataclass
class ManifestRecord:
    path: str
    label: int
    domain: str


def read_manifest(path) -> list[ManifestRecord]:
    """Tab-separated ``path  label  domain`` lines; ``#`` starts a comment. Relative paths
    resolve against the manifest's directory."""
    path = Path(path)
    base = path.parent
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'path<TAB>label<TAB>domain'")
        p, label, domain = parts
        full = Path(p) if os.path.isabs(p) else base / p
        try:
            records.append(ManifestRecord(str(full), int(label), domain))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: label {label!r} is not an integer") from None
    return records


def write_manifest(records: Sequence[ManifestRecord], path, relative_to=None) -> None:
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent
    lines = ["# path\tlabel\tdomain"]
    for r in records:
        p = Path(r.path)
        try:
            p = p.relative_to(base)
        except ValueError:
            pass
        lines.append(f"{p.as_posix()}\t{r.label}\t{r.domain}")
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_manifest(path, target_size: int = DEFAULT_SIZE, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> dict[str, LabeledImages]:
    """Load every manifest record, grouped by domain. Unreadable files are skipped and logged."""
    groups: dict[str, list] = {}
    for rec in read_manifest(path):
        try:
            img = preprocess(rec.path, target_size, mean, std)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s (%s)", rec.path, exc)
            continue
        groups.setdefault(rec.domain, []).append((img, rec.label, rec.path))
    out = {}
    for domain, items in groups.items():
        out[domain] = LabeledImages(
            torch.stack([it[0] for it in items]),
            torch.tensor([it[1] for it in items]),
            [domain] * len(items),
            [it[2] for it in items],
        )
    return out


def write_synthetic_dataset(spec: SyntheticDomainSpec, n_domains: int, n_per_class: int, out_dir) -> Path:
    """Render domains to PNG files plus ``manifest.tsv``; returns the manifest path."""
    out_dir = Path(out_dir)
    records = []
    for name, (images, labels) in generate_synthetic_domains(spec, n_domains, n_per_class, raw=True).items():
        for i, (img, y) in enumerate(zip(images, labels)):
            p = out_dir / name / str(int(y)) / f"{i:06d}.png"
            p.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(img, "RGB").save(p)
            records.append(ManifestRecord(str(p), int(y), name))
    manifest = out_dir / "manifest.tsv"
    write_manifest(records, manifest)
    return manifest


# --------------------------------------------------------------------------
# handwritten digits (IDX archives)


def file_md5(path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_idx(path) -> np.ndarray:
    """Parse an IDX file (optionally gzip-compressed) into an ndarray."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[0] != 0 or data[1] != 0:
        raise ValueError(f"{path}: not an IDX file")
    dtypes = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
    code, ndim = data[2], data[3]
    if code not in dtypes:
        raise ValueError(f"{path}: unknown IDX type code {code:#x}")
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    arr = np.frombuffer(data, dtype=dtypes[code], offset=4 + 4 * ndim)
    if arr.size != int(np.prod(dims)):
        raise ValueError(f"{path}: payload size does not match header {dims}")
    return arr.reshape(dims)


def read_digits_raw(
    root,
    split: str = "train",
    limit: int | None = 10000,
    checksums: dict[str, str] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """uint8 ``(N, 28, 28)`` digits and labels from the raw IDX archives, MD5-verified."""
    prefix = {"train": "train", "test": "t10k"}[split]
    checksums = MNIST_MD5 if checksums is None else checksums
    paths = []
    for kind in ("images-idx3-ubyte", "labels-idx1-ubyte"):
        name = f"{prefix}-{kind}.gz"
        p = Path(root) / name
        if not p.exists():
            p = Path(root) / name[:-3]
        if not p.exists():
            raise FileNotFoundError(f"missing digits archive {Path(root) / name}")
        expected = checksums.get(p.name)
        if expected is not None and file_md5(p) != expected:
            raise ValueError(f"checksum mismatch for {p}")
        paths.append(p)
    images = read_idx(paths[0])
    labels = read_idx(paths[1]).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise ValueError("image and label archives disagree on sample count")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return images, labels


def load_digits(
    root,
    split: str = "train",
    limit: int | None = 10000,
    target_size: int = DIGITS_SIZE,
    checksums: dict[str, str] | None = None,
    domain: str = "mnist",
    mean=IMAGENET_MEAN,
    std=IMAGENET_STD,
) -> LabeledImages:
    """Read the raw handwritten-digit archives from ``root`` after verifying their MD5."""
    images, labels = read_digits_raw(root, split, limit, checksums)
    rgb = np.repeat(images[:, :, :, None], 3, axis=3)
    return LabeledImages(
        preprocess_batch(rgb, target_size, mean, std),
        torch.as_tensor(labels),
        [domain] * len(labels),
        [f"{domain}-{split}/{i:06d}" for i in range(len(labels))],
    )


def digits_domains(
    root,
    spec: SyntheticDomainSpec,
    n_domains: int = 3,
    limit: int | None = 2000,
    target_size: int = DIGITS_SIZE,
    checksums: dict[str, str] | None = None,
) -> dict[str, LabeledImages]:
    """Digits in several synthetic looks: ``domain0`` from the train split, the rest from test.

    Target domains never share a sample with the source.
    """
    out = {}
    for d in range(n_domains):
        split = "train" if d == 0 else "test"
        gray, labels = read_digits_raw(root, split, None, checksums)
        if limit is not None and d > 0:
            # disjoint test slices per target domain
            lo = (d - 1) * limit
            gray, labels = gray[lo:lo + limit], labels[lo:lo + limit]
        elif limit is not None:
            gray, labels = gray[:limit], labels[:limit]
        rgb = paint_grayscale(gray, spec, d)
        name = f"domain{d}"
        out[name] = LabeledImages(
            preprocess_batch(rgb, target_size),
            torch.as_tensor(labels),
            [name] * len(labels),
            [f"{name}-{split}/{i:06d}" for i in range(len(labels))],
        )
    return out
