"""Build the auxiliary-class dataset.

Covers synset-mapping parsing, cat/dog breed exclusion, per-class train/test
splitting, ratio-preserving subsampling, pixel preprocessing and a synthetic
stand-in corpus for desk-scale experiments.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from auxlearn.errors import DomainError, ParseError

logger = logging.getLogger(__name__)

DEFAULT_CAT_BREEDS = ("tabby", "tiger cat", "Persian cat", "Siamese cat", "Egyptian cat")
SPLITS = ("train", "test")
MANIFEST_COLUMNS = ("example_id", "class_name", "source_synset", "split")
SYNTHETIC_MAGIC = "auxlearn-synthetic"


@dataclass(frozen=True)
class SynsetEntry:
    synset_id: str
    names: tuple

    def __post_init__(self):
        if not self.synset_id or not self.names:
            raise DomainError("synset entry needs an id and at least one name")


@dataclass(frozen=True)
class ExclusionList:
    dog_breed_names: tuple = ()
    cat_breed_names: tuple = DEFAULT_CAT_BREEDS


@dataclass(frozen=True)
class ManifestRecord:
    example_id: str
    class_label: int
    source_synset: Optional[str] = None
    split: Optional[str] = None


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple
    class_names: tuple

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        k = len(self.class_names)
        for rec in self.records:
            if not 0 <= rec.class_label < k:
                raise DomainError(f"record {rec.example_id!r} has label {rec.class_label} outside [0, {k})")
            if rec.split not in SPLITS:
                raise DomainError(f"record {rec.example_id!r} has no valid split")

    def split(self, name: str) -> "DatasetManifest":
        return DatasetManifest([r for r in self.records if r.split == name], self.class_names)

    def counts(self, split: Optional[str] = None) -> list:
        out = [0] * len(self.class_names)
        for r in self.records:
            if split is None or r.split == split:
                out[r.class_label] += 1
        return out


@dataclass(frozen=True)
class LabeledExample:
    features: np.ndarray
    label: int

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 1 or np.any(np.abs(f) > 1.0) or not np.all(np.isfinite(f)):
            raise DomainError("features must be a finite vector in [-1, 1]")
        object.__setattr__(self, "features", f)


# -- synset mapping / exclusions -------------------------------------------------

def parse_synset_mapping(text: str) -> list:
    """Parse ``LOC_synset_mapping.txt``-style text.

    >>> parse_synset_mapping("n01440764 tench, Tinca tinca")[0].names
    ('tench', 'Tinca tinca')
    """
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        synset_id, sep, rest = line.partition(" ")
        names = tuple(n.strip() for n in rest.split(",") if n.strip())
        if not sep or not names:
            raise ParseError("expected '<synset_id> <name>[, <name>...]'", lineno)
        entries.append(SynsetEntry(synset_id, names))
    return entries


def parse_name_list(text: str) -> tuple:
    """One name per line; blank lines and ``#`` comments are skipped."""
    names = []
    for raw in text.splitlines():
        line = raw.strip()
        if line and not line.startswith("#"):
            names.append(line)
    return tuple(names)


def normalize_breed_name(dash_name: str) -> str:
    """``"soft-coated-wheaten-terrier"`` -> ``"softCoatedWheatenTerrier"``.

    Only first letters change case, which keeps the mapping idempotent.
    """
    tokens = [t for t in dash_name.strip().split("-") if t]
    if not tokens:
        raise DomainError("breed name is empty")
    head = tokens[0][:1].lower() + tokens[0][1:]
    return head + "".join(t[:1].upper() + t[1:] for t in tokens[1:])


def _match_key(name: str) -> str:
    # camelCase breed names carry no spaces, mapping names do
    return "".join(ch for ch in name.casefold() if ch not in " -_")


def _excluded_keys(excl: ExclusionList) -> dict:
    keys = {}
    for name in excl.dog_breed_names:
        keys.setdefault(_match_key(normalize_breed_name(name)), name)
    for name in excl.cat_breed_names:
        keys.setdefault(_match_key(name), name)
    return keys


def find_unmatched(entries: Sequence[SynsetEntry], excl: ExclusionList) -> list:
    """Exclusion names that match no synset, in input order."""
    present = {_match_key(n) for e in entries for n in e.names}
    return [orig for key, orig in _excluded_keys(excl).items() if key not in present]


def build_exclusion_set(entries: Sequence[SynsetEntry], excl: ExclusionList) -> set:
    """Synset ids whose names include any excluded breed.

    Matching compares whole names, ignoring case, spaces, dashes and
    underscores, so ``germanShepherd`` matches ``German shepherd`` but
    ``cat`` never matches ``catamaran``.
    """
    keys = _excluded_keys(excl)
    excluded = {e.synset_id for e in entries if any(_match_key(n) in keys for n in e.names)}
    unmatched = find_unmatched(entries, excl)
    if unmatched:
        logger.warning("%d exclusion names matched no synset: %s", len(unmatched), ", ".join(unmatched))
    return excluded


# -- splitting and ratio enforcement ---------------------------------------------

def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def assign_split(records: Sequence[ManifestRecord], train_fraction: float, seed: int,
                 class_names: Sequence[str]) -> DatasetManifest:
    """Per class, send ``round(n_c * train_fraction)`` seeded-random records to train.

    Record order is preserved in the returned manifest.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DomainError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if len(records) == 0:
        raise DomainError("no records to split")
    rng = np.random.default_rng(seed)
    by_class = {}
    for i, rec in enumerate(records):
        by_class.setdefault(rec.class_label, []).append(i)
    split_of = {}
    for label in sorted(by_class):
        idx = by_class[label]
        n_train = round_half_away(len(idx) * train_fraction)
        chosen = set(rng.permutation(len(idx))[:n_train].tolist())
        for j, i in enumerate(idx):
            split_of[i] = "train" if j in chosen else "test"
    out = [replace(rec, split=split_of[i]) for i, rec in enumerate(records)]
    return DatasetManifest(out, class_names)


def ratio_targets(counts: Sequence[int], ratios: Sequence[float]) -> list:
    """Largest per-class counts proportional to ``ratios`` that fit in ``counts``.

    The anchor is the class with the smallest ``count / ratio``; it keeps all
    its records and every other class is cut to ``anchor * ratio_c / ratio_anchor``.
    """
    counts = list(counts)
    r = [float(v) for v in ratios]
    if len(r) != len(counts):
        raise DomainError(f"{len(r)} ratios for {len(counts)} classes")
    if any(not (v > 0 and math.isfinite(v)) for v in r):
        raise DomainError("ratios must be positive")
    if any(c <= 0 for c in counts):
        raise DomainError(f"every class needs at least one record, got counts {counts}")
    anchor = min(range(len(counts)), key=lambda c: counts[c] / r[c])
    unit = counts[anchor] / r[anchor]
    return [min(counts[c], round_half_away(unit * r[c])) for c in range(len(counts))]


def enforce_ratio(manifest: DatasetManifest, ratios: Sequence[float], seed: int) -> DatasetManifest:
    """Subsample over-represented classes, split by split, to match ``ratios``."""
    k = len(manifest.class_names)
    if len(ratios) != k:
        raise DomainError(f"{len(ratios)} ratios for {k} classes")
    rng = np.random.default_rng(seed)
    keep = set()
    for split in SPLITS:
        positions = [[] for _ in range(k)]
        for i, rec in enumerate(manifest.records):
            if rec.split == split:
                positions[rec.class_label].append(i)
        if not any(positions):
            continue
        targets = ratio_targets([len(p) for p in positions], ratios)
        for pos, target in zip(positions, targets):
            if target == len(pos):
                keep.update(pos)
            else:
                keep.update(pos[j] for j in rng.choice(len(pos), size=target, replace=False))
    return DatasetManifest([r for i, r in enumerate(manifest.records) if i in keep], manifest.class_names)


# -- preprocessing -----------------------------------------------------------------

def scale_pixels(raw) -> np.ndarray:
    """Map pixel values in [0, 255] to [-1, 1] via ``x / 127.5 - 1``."""
    x = np.asarray(raw, dtype=np.float64)
    if np.any(x < 0) or np.any(x > 255) or not np.all(np.isfinite(x)):
        raise DomainError("pixel values must lie in [0, 255]")
    return x / 127.5 - 1.0


def unscale_pixels(scaled) -> np.ndarray:
    return (np.asarray(scaled, dtype=np.float64) + 1.0) * 127.5


def one_hot(label: int, num_classes: int) -> np.ndarray:
    if not 0 <= label < num_classes:
        raise DomainError(f"label {label} outside [0, {num_classes})")
    y = np.zeros(num_classes)
    y[label] = 1.0
    return y


def resize_image(pixels, target=(64, 64)) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling.

    Accepts ``H x W`` or ``H x W x C`` and returns float values; output corners
    coincide with input corners.
    """
    img = np.asarray(pixels, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1 or img.shape[2] < 1:
        raise DomainError(f"expected a non-empty H x W [x C] image, got shape {img.shape}")
    out_h, out_w = target
    if out_h < 1 or out_w < 1:
        raise DomainError("target size must be positive")

    def axis(n_in, n_out):
        if n_out == 1 or n_in == 1:
            src = np.zeros(n_out)
        else:
            src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.clip(np.floor(src).astype(int), 0, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(img.shape[0], out_h)
    x0, x1, fx = axis(img.shape[1], out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return out[:, :, 0] if squeeze else out


# -- synthetic corpus --------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Known classes are Gaussian blobs; the last class is a dispersed background.

    ``separation`` is the distance between neighbouring blob centres in units
    of ``sigma``. Auxiliary samples are a mix of uniform points in ``[-1, 1]^dim``
    and ring points at ``ring_radius * sigma * sqrt(dim)`` around random blob
    centres (``ring_fraction`` of them). Auxiliary points closer than the ring's
    inner radius to any centre are redrawn so the classes stay separable.
    """

    counts: tuple = (1250, 1250, 21875)
    dim: int = 8
    sigma: float = 0.08
    separation: float = 4.0
    ring_radius: float = 2.0
    ring_fraction: float = 0.3
    seed: int = 0
    class_names: tuple = ("cat", "dog", "others")

    def __post_init__(self):
        if len(self.counts) < 2 or any(int(c) < 1 for c in self.counts):
            raise DomainError("need at least two classes with count >= 1")
        if len(self.class_names) != len(self.counts):
            raise DomainError("class_names and counts differ in length")
        if self.dim < 1 or not self.sigma > 0 or not self.separation > 0:
            raise DomainError("dim, sigma and separation must be positive")
        if not 0.0 <= self.ring_fraction <= 1.0 or not self.ring_radius > 0:
            raise DomainError("bad ring parameters")


def _blob_centres(n_known, dim, spacing):
    # regular simplex-like layout: centres on a circle in the first two axes
    if n_known == 1:
        return np.zeros((1, dim))
    radius = spacing / (2.0 * math.sin(math.pi / n_known))
    centres = np.zeros((n_known, dim))
    for k in range(n_known):
        angle = 2.0 * math.pi * k / n_known
        centres[k, 0] = radius * math.cos(angle)
        if dim > 1:
            centres[k, 1] = radius * math.sin(angle)
    return centres


def generate_synthetic_dataset(spec: SyntheticSpec):
    """Return ``(examples, manifest)`` with every record unsplit-ready.

    The manifest's records carry ``split="train"`` placeholders; callers run
    :func:`assign_split` on them. Example ids are ``s000000``-style and index
    into ``examples``.
    """
    rng = np.random.default_rng(spec.seed)
    counts = [int(c) for c in spec.counts]
    n_known = len(counts) - 1
    centres = _blob_centres(n_known, spec.dim, spec.separation * spec.sigma)
    if np.any(np.abs(centres) + 3 * spec.sigma > 1.0):
        raise DomainError("blob layout does not fit in [-1, 1]; reduce sigma or separation")
    ring_r = spec.ring_radius * spec.sigma * math.sqrt(spec.dim)

    feats, labels = [], []
    for k in range(n_known):
        pts = centres[k] + spec.sigma * rng.standard_normal((counts[k], spec.dim))
        feats.append(np.clip(pts, -1.0, 1.0))
        labels.append(np.full(counts[k], k))

    n_aux = counts[-1]
    n_ring = round_half_away(n_aux * spec.ring_fraction)

    def far_from_centres(pts):
        dist = np.linalg.norm(pts[:, None, :] - centres[None, :, :], axis=2).min(axis=1)
        return pts[dist >= ring_r]

    def draw(n, sampler):
        got = np.empty((0, spec.dim))
        while len(got) < n:
            got = np.vstack([got, far_from_centres(np.clip(sampler(2 * n + 16), -1.0, 1.0))])
        return got[:n]

    def ring_sampler(m):
        dirs = rng.standard_normal((m, spec.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = ring_r * rng.uniform(1.0, 1.5, size=(m, 1))
        return centres[rng.integers(0, n_known, size=m)] + radii * dirs

    ring = draw(n_ring, ring_sampler)
    background = draw(n_aux - n_ring, lambda m: rng.uniform(-1.0, 1.0, size=(m, spec.dim)))
    aux = np.vstack([ring, background])
    feats.append(aux[rng.permutation(n_aux)])
    labels.append(np.full(n_aux, n_known))

    x = np.vstack(feats)
    y = np.concatenate(labels)
    examples = [LabeledExample(x[i], int(y[i])) for i in range(len(y))]
    ids = [f"s{i:06d}" for i in range(len(y))]
    records = [ManifestRecord(ids[i], int(y[i]), None, "train") for i in range(len(y))]
    return examples, DatasetManifest(records, spec.class_names)


# -- file formats ------------------------------------------------------------------

def dumps_manifest(manifest: DatasetManifest) -> str:
    """Delimited text: a ``# classes=`` line, then a CSV header and rows."""
    buf = io.StringIO()
    buf.write("# classes=" + ",".join(manifest.class_names) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for r in manifest.records:
        writer.writerow([r.example_id, manifest.class_names[r.class_label], r.source_synset or "", r.split])
    return buf.getvalue()


def loads_manifest(text: str) -> DatasetManifest:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# classes="):
        raise ParseError("manifest must start with '# classes=' line", 1)
    class_names = tuple(lines[0][len("# classes="):].split(","))
    index = {name: i for i, name in enumerate(class_names)}
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header is None or tuple(header) != MANIFEST_COLUMNS:
        raise ParseError(f"expected header {','.join(MANIFEST_COLUMNS)}", 2)
    records = []
    for lineno, row in enumerate(reader, start=3):
        if len(row) != len(MANIFEST_COLUMNS):
            raise ParseError(f"expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}", lineno)
        example_id, class_name, synset, split = row
        if class_name not in index:
            raise ParseError(f"unknown class {class_name!r}", lineno)
        if split not in SPLITS:
            raise ParseError(f"unknown split {split!r}", lineno)
        records.append(ManifestRecord(example_id, index[class_name], synset or None, split))
    return DatasetManifest(records, class_names)


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(dumps_manifest(manifest), encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    return loads_manifest(Path(path).read_text(encoding="utf-8"))


def dumps_dataset(ids: Sequence[str], examples: Sequence[LabeledExample], num_classes: int) -> str:
    """Feature table: ``# auxlearn-synthetic K=<k> dim=<d>`` then CSV rows."""
    if len(ids) != len(examples):
        raise DomainError("ids and examples differ in length")
    dim = len(examples[0].features) if examples else 0
    buf = io.StringIO()
    buf.write(f"# {SYNTHETIC_MAGIC} K={num_classes} dim={dim}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["example_id", "label"] + [f"f{j}" for j in range(dim)])
    for ex_id, ex in zip(ids, examples):
        writer.writerow([ex_id, ex.label] + [repr(float(v)) for v in ex.features])
    return buf.getvalue()


def loads_dataset(text: str):
    """Return ``(num_classes, {example_id: LabeledExample})`` in file order."""
    lines = text.splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 4 or head[:2] != ["#", SYNTHETIC_MAGIC]:
        raise ParseError(f"missing '# {SYNTHETIC_MAGIC} K=.. dim=..' header", 1)
    try:
        k = int(head[2].removeprefix("K="))
        dim = int(head[3].removeprefix("dim="))
    except ValueError:
        raise ParseError("bad K/dim in header", 1) from None
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header is None or len(header) != dim + 2:
        raise ParseError("column header does not match dim", 2)
    data = {}
    for lineno, row in enumerate(reader, start=3):
        if len(row) != dim + 2:
            raise ParseError(f"expected {dim + 2} fields, got {len(row)}", lineno)
        try:
            label = int(row[1])
            feats = np.array([float(v) for v in row[2:]])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not 0 <= label < k:
            raise ParseError(f"label {label} outside [0, {k})", lineno)
        data[row[0]] = LabeledExample(feats, label)
    return k, data


def save_dataset(path, ids, examples, num_classes) -> None:
    Path(path).write_text(dumps_dataset(ids, examples, num_classes), encoding="utf-8")


def load_dataset(path):
    return loads_dataset(Path(path).read_text(encoding="utf-8"))
