"""Manifests, annotations, image decoding and preprocessing."""

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import (DataError, DuplicateIdError, ImageFormatError, ManifestError,
                     UnknownGroupError, UnknownSplitError)

GROUPS = ("logo", "repeated_logo", "no_logo")
SPLITS = ("train", "test")
MANIFEST_COLUMNS = ("image_id", "path", "brand", "split")
ANNOTATION_COLUMNS = ("image_id", "group", "annotators")


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    path: str
    brand: str
    split: str


@dataclass
class DatasetManifest:
    entries: list
    category: str = ""
    root: str = ""

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def resolve(self, entry):
        return os.path.join(self.root, entry.path)

    def brand_of(self):
        return {e.image_id: e.brand for e in self.entries}


@dataclass
class AnnotationSet:
    groups: dict  # image_id -> group
    annotators: dict  # image_id -> int


def _normalize_group(token):
    g = token.strip().lower().replace("-", "_").replace(" ", "_")
    return g if g in GROUPS else None


def _rows(path, columns):
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ManifestError(f"{path}: empty file", line=1) from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise ManifestError(f"{path}: header lacks columns {missing}", line=1)
        pos = [header.index(c) for c in columns]
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise ManifestError(f"{path}: expected {len(header)} fields, got {len(row)}",
                                    line=reader.line_num)
            yield reader.line_num, [row[i].strip() for i in pos]


def load_manifest(path, category=""):
    entries, seen = [], set()
    for line, (image_id, rel, brand, split) in _rows(path, MANIFEST_COLUMNS):
        if image_id in seen:
            raise DuplicateIdError(f"{path}: duplicate image_id {image_id!r}", line=line)
        s = split.lower()
        if s not in SPLITS:
            raise UnknownSplitError(f"{path}: unknown split {split!r}", line=line)
        seen.add(image_id)
        entries.append(ManifestEntry(image_id, rel, brand, s))
    return DatasetManifest(entries, category, os.path.dirname(os.path.abspath(path)))


def load_annotations(path, manifest=None):
    groups, counts = {}, {}
    known = {e.image_id for e in manifest} if manifest is not None else None
    for line, (image_id, group, annotators) in _rows(path, ANNOTATION_COLUMNS):
        if image_id in groups:
            raise DuplicateIdError(f"{path}: duplicate image_id {image_id!r}", line=line)
        g = _normalize_group(group)
        if g is None:
            raise UnknownGroupError(f"{path}: unknown group {group!r}", line=line)
        if known is not None and image_id not in known:
            raise ManifestError(f"{path}: image_id {image_id!r} not in manifest", line=line)
        try:
            n = int(annotators) if annotators else 0
        except ValueError:
            raise ManifestError(f"{path}: bad annotator count {annotators!r}", line=line) from None
        groups[image_id] = g
        counts[image_id] = n
    return AnnotationSet(groups, counts)


def write_manifest(path, manifest):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for e in manifest:
            w.writerow([e.image_id, e.path, e.brand, e.split])


def write_annotations(path, ann):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ANNOTATION_COLUMNS)
        for image_id, g in ann.groups.items():
            w.writerow([image_id, g, ann.annotators.get(image_id, 0)])


# --- portable anymap (binary P5/P6) ---

def _pnm_header(data, path):
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: corrupt header")
        tokens.append(data[start:pos])
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError(f"{path}: corrupt header") from None
    return tokens[0], width, height, maxval, pos + 1  # one whitespace byte ends the header


def read_pnm(path):
    """Decode binary PPM (P6) or PGM (P5) as a uint8 (H, W, 3) array."""
    with open(path, "rb") as f:
        data = f.read()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: not a binary PPM/PGM file")
    _, width, height, maxval, off = _pnm_header(data, path)
    if width < 1 or height < 1 or maxval != 255:
        raise ImageFormatError(f"{path}: unsupported size or maxval ({width}x{height}, {maxval})")
    chans = 3 if magic == b"P6" else 1
    need = width * height * chans
    if len(data) - off < need:
        raise ImageFormatError(f"{path}: corrupt header or truncated pixel data")
    img = np.frombuffer(data, dtype=np.uint8, count=need, offset=off).reshape(height, width, chans)
    if chans == 1:
        img = np.repeat(img, 3, axis=2)
    return img.copy()


def write_ppm(path, rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim == 2:
        magic, h, w = b"P5", rgb.shape[0], rgb.shape[1]
    elif rgb.ndim == 3 and rgb.shape[2] == 3:
        magic, h, w = b"P6", rgb.shape[0], rgb.shape[1]
    else:
        raise ImageFormatError(f"cannot write array of shape {rgb.shape} as PNM")
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(rgb).tobytes())


def read_rgb8(path):
    """Decode an 8-bit RGB image: PPM/PGM natively, PNG through Pillow."""
    with open(path, "rb") as f:
        head = f.read(8)
    if head[:2] in (b"P5", b"P6"):
        return read_pnm(path)
    if head == b"\x89PNG\r\n\x1a\n":
        try:
            from PIL import Image
        except ImportError:
            raise ImageFormatError(f"{path}: PNG support needs Pillow") from None
        try:
            with Image.open(path) as im:
                return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
        except OSError as e:
            raise ImageFormatError(f"{path}: {e}") from None
    raise ImageFormatError(f"{path}: unsupported image format")


def bilinear_resize(img, out_h, out_w):
    """Half-pixel-centre bilinear resize of an (H, W[, C]) array, edges clamped.

    Returns float64.
    """
    a = np.asarray(img, dtype=np.float64)
    h, w = a.shape[:2]

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    r0, r1, fr = axis(h, out_h)
    c0, c1, fc = axis(w, out_w)
    extra = (None,) * (a.ndim - 2)
    fr = fr[(slice(None), None) + extra]
    fc = fc[(None, slice(None)) + extra]
    top = a[r0][:, c0] * (1 - fc) + a[r0][:, c1] * fc
    bot = a[r1][:, c0] * (1 - fc) + a[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr


def load_image(path):
    """Decode to a float32 (3, H, W) tensor scaled to [0, 1]."""
    rgb = read_rgb8(path)
    return np.ascontiguousarray(rgb.transpose(2, 0, 1), dtype=np.float32) / np.float32(255.0)


def preprocess(image, graph):
    """(C, H, W) image in [0, 1] -> model input: bilinear resize, then
    per-channel ``(x - mean) / std``."""
    c, h, w = graph.input_shape
    x = np.asarray(image, dtype=np.float64)
    if x.shape[0] != c:
        raise DataError(f"image has {x.shape[0]} channels, model expects {c}")
    if x.shape[1:] != (h, w):
        x = bilinear_resize(x.transpose(1, 2, 0), h, w).transpose(2, 0, 1)
    x = (x - np.asarray(graph.mean)[:, None, None]) / np.asarray(graph.std)[:, None, None]
    return np.ascontiguousarray(x, dtype=np.float32)
