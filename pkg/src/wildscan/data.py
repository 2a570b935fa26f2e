"""Dataset manifest: taxonomy, image records, box annotations, and splits.

A manifest is a single JSON document with top-level keys ``taxonomy``,
``images``, ``annotations``, and ``splits``. Category-to-class mapping is
data, not code: ``class_mapping`` keys are ``"species:category"`` (category
names such as "claw" or "non-wildlife" repeat across species, so keys are
species-qualified) and values are evaluation classes.

Manifests are immutable after load; every operation returns a new manifest.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path

EVAL_CLASSES = ("elephant", "tiger", "pangolin", "non_wildlife")
NON_WILDLIFE = "non_wildlife"
SPLIT_NAMES = ("train", "val", "test")


class ManifestError(ValueError):
    """Schema or invariant violation, naming the offending field/record."""


def qualified(species: str, category: str) -> str:
    return f"{species}:{category}"


@dataclass(frozen=True)
class CategoryTaxonomy:
    """Species groups and the category -> evaluation-class mapping."""

    species_groups: tuple[tuple[str, tuple[str, ...]], ...]
    class_mapping: dict[str, str]  # "species:category" -> evaluation class

    def species_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.species_groups)

    def categories_of(self, species: str) -> tuple[str, ...]:
        for name, cats in self.species_groups:
            if name == species:
                return cats
        raise KeyError(species)

    def eval_class(self, species: str, category: str) -> str | None:
        return self.class_mapping.get(qualified(species, category))


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    uri: str
    width: int
    height: int
    category_label: str
    species_group: str


@dataclass(frozen=True)
class BoxAnnotation:
    image_id: str
    box: tuple[float, float, float, float]  # x_min, y_min, x_max, y_max
    category: str
    grouped: bool = False


@dataclass(frozen=True)
class DatasetManifest:
    taxonomy: CategoryTaxonomy
    images: tuple[ImageRecord, ...]
    annotations: tuple[BoxAnnotation, ...]
    splits: dict[str, str] = field(default_factory=dict)

    def image_by_id(self, image_id: str) -> ImageRecord:
        return {im.image_id: im for im in self.images}[image_id]

    def annotations_for(self, image_id: str) -> tuple[BoxAnnotation, ...]:
        return tuple(a for a in self.annotations if a.image_id == image_id)

    def split_images(self, split: str) -> tuple[ImageRecord, ...]:
        return tuple(im for im in self.images if self.splits.get(im.image_id) == split)

    def eval_class_of(self, image: ImageRecord) -> str:
        cls = self.taxonomy.eval_class(image.species_group, image.category_label)
        if cls is None:
            raise ManifestError(
                f"class_mapping: no entry for "
                f"{qualified(image.species_group, image.category_label)!r}"
            )
        return cls


# ---------------------------------------------------------------------------
# validation


def validate_manifest(manifest: DatasetManifest) -> None:
    tax = manifest.taxonomy
    species = set(tax.species_names())
    by_id: dict[str, ImageRecord] = {}
    for i, im in enumerate(manifest.images):
        if im.width <= 0 or im.height <= 0:
            raise ManifestError(
                f"images[{i}].width/height: must be positive "
                f"(image_id={im.image_id!r})"
            )
        if im.image_id in by_id:
            raise ManifestError(f"images[{i}].image_id: duplicate {im.image_id!r}")
        if im.species_group not in species:
            raise ManifestError(
                f"images[{i}].species_group: {im.species_group!r} not in taxonomy"
            )
        if im.category_label not in tax.categories_of(im.species_group):
            raise ManifestError(
                f"images[{i}].category_label: {im.category_label!r} not in "
                f"taxonomy for species {im.species_group!r}"
            )
        by_id[im.image_id] = im

    dangling = sorted(
        {a.image_id for a in manifest.annotations if a.image_id not in by_id}
    )
    if dangling:
        raise ManifestError(
            f"annotations reference unknown image_ids: {dangling}"
        )
    for i, ann in enumerate(manifest.annotations):
        x0, y0, x1, y1 = ann.box
        if not (x0 < x1 and y0 < y1):
            raise ManifestError(
                f"annotations[{i}].box: degenerate box {ann.box} "
                f"(image_id={ann.image_id!r})"
            )
        im = by_id[ann.image_id]
        if x0 < 0 or y0 < 0 or x1 > im.width or y1 > im.height:
            raise ManifestError(
                f"annotations[{i}].box: {ann.box} outside image bounds "
                f"{im.width}x{im.height} (image_id={ann.image_id!r})"
            )
        if ann.category not in tax.categories_of(im.species_group):
            raise ManifestError(
                f"annotations[{i}].category: {ann.category!r} not in taxonomy "
                f"for species {im.species_group!r}"
            )

    if manifest.splits:
        for image_id, split in manifest.splits.items():
            if image_id not in by_id:
                raise ManifestError(f"splits: unknown image_id {image_id!r}")
            if split not in SPLIT_NAMES:
                raise ManifestError(f"splits[{image_id!r}]: invalid split {split!r}")
        unassigned = sorted(set(by_id) - set(manifest.splits))
        if unassigned:
            raise ManifestError(
                f"splits: images missing a split assignment: {unassigned}"
            )


# ---------------------------------------------------------------------------
# serialization


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    return {
        "taxonomy": {
            "species_groups": [
                [name, list(cats)] for name, cats in manifest.taxonomy.species_groups
            ],
            "class_mapping": dict(manifest.taxonomy.class_mapping),
        },
        "images": [
            {
                "image_id": im.image_id,
                "uri": im.uri,
                "width": im.width,
                "height": im.height,
                "category_label": im.category_label,
                "species_group": im.species_group,
            }
            for im in manifest.images
        ],
        "annotations": [
            {
                "image_id": a.image_id,
                "box": list(a.box),
                "category": a.category,
                "grouped": a.grouped,
            }
            for a in manifest.annotations
        ],
        "splits": dict(manifest.splits),
    }


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ManifestError(f"{where}: missing key {key!r}")
    return d[key]


def manifest_from_dict(d: dict) -> DatasetManifest:
    tax_d = _require(d, "taxonomy", "manifest")
    groups = []
    for g, entry in enumerate(_require(tax_d, "species_groups", "taxonomy")):
        if not (isinstance(entry, (list, tuple)) and len(entry) == 2):
            raise ManifestError(
                f"taxonomy.species_groups[{g}]: expected [name, categories]"
            )
        groups.append((str(entry[0]), tuple(str(c) for c in entry[1])))
    taxonomy = CategoryTaxonomy(
        species_groups=tuple(groups),
        class_mapping={
            str(k): str(v)
            for k, v in _require(tax_d, "class_mapping", "taxonomy").items()
        },
    )

    images = []
    for i, im in enumerate(_require(d, "images", "manifest")):
        where = f"images[{i}]"
        try:
            images.append(
                ImageRecord(
                    image_id=str(_require(im, "image_id", where)),
                    uri=str(_require(im, "uri", where)),
                    width=int(_require(im, "width", where)),
                    height=int(_require(im, "height", where)),
                    category_label=str(_require(im, "category_label", where)),
                    species_group=str(_require(im, "species_group", where)),
                )
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ManifestError):
                raise
            raise ManifestError(f"{where}: {exc}") from exc

    annotations = []
    for i, a in enumerate(_require(d, "annotations", "manifest")):
        where = f"annotations[{i}]"
        box = _require(a, "box", where)
        if not (isinstance(box, (list, tuple)) and len(box) == 4):
            raise ManifestError(f"{where}.box: expected 4 numbers, got {box!r}")
        annotations.append(
            BoxAnnotation(
                image_id=str(_require(a, "image_id", where)),
                box=tuple(float(v) for v in box),
                category=str(_require(a, "category", where)),
                grouped=bool(a.get("grouped", False)),
            )
        )

    manifest = DatasetManifest(
        taxonomy=taxonomy,
        images=tuple(images),
        annotations=tuple(annotations),
        splits={str(k): str(v) for k, v in _require(d, "splits", "manifest").items()},
    )
    validate_manifest(manifest)
    return manifest


def canonical_manifest_bytes(manifest: DatasetManifest) -> bytes:
    text = json.dumps(manifest_to_dict(manifest), indent=2, sort_keys=True)
    return (text + "\n").encode("utf-8")


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).write_bytes(canonical_manifest_bytes(manifest))


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    try:
        d = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest: not valid JSON ({exc})") from exc
    return manifest_from_dict(d)


# ---------------------------------------------------------------------------
# operations


def category_histogram(manifest: DatasetManifest) -> dict[tuple[str, str], int]:
    """Image counts per (species_group, category_label)."""
    hist: dict[tuple[str, str], int] = {}
    for im in manifest.images:
        key = (im.species_group, im.category_label)
        hist[key] = hist.get(key, 0) + 1
    return hist


def map_to_eval_classes(
    manifest: DatasetManifest,
    mode: str = "multi_species",
    species: str | None = None,
) -> DatasetManifest:
    """Relabel images and annotations to evaluation classes.

    ``multi_species`` keeps all images; ``single_species`` keeps only the
    given species (its classes reduce to the species class plus
    ``non_wildlife``). Per-species non-wildlife pools merge into one
    ``non_wildlife`` class. Idempotent.
    """
    if mode not in ("multi_species", "single_species"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "single_species":
        if species is None:
            raise ValueError("single_species mode requires a species")
        if species not in manifest.taxonomy.species_names():
            raise ManifestError(f"species {species!r} not in taxonomy")
        allowed = {species, NON_WILDLIFE}
    else:
        allowed = set(EVAL_CLASSES)

    images = [
        im
        for im in manifest.images
        if mode == "multi_species" or im.species_group == species
    ]
    kept_ids = {im.image_id for im in images}

    unmapped: set[str] = set()
    bad_class: set[str] = set()

    def lookup(sp: str, category: str) -> str:
        cls = manifest.taxonomy.eval_class(sp, category)
        if cls is None:
            unmapped.add(qualified(sp, category))
            return category
        if cls not in allowed:
            bad_class.add(f"{qualified(sp, category)} -> {cls}")
        return cls

    species_of = {im.image_id: im.species_group for im in manifest.images}
    new_images = [
        replace(im, category_label=lookup(im.species_group, im.category_label))
        for im in images
    ]
    new_annotations = [
        replace(a, category=lookup(species_of[a.image_id], a.category))
        for a in manifest.annotations
        if a.image_id in kept_ids
    ]
    if unmapped:
        raise ManifestError(
            f"class_mapping: unmapped categories: {sorted(unmapped)}"
        )
    if bad_class:
        raise ManifestError(
            f"class_mapping: classes outside the {mode} class set: "
            f"{sorted(bad_class)}"
        )

    per_species: dict[str, set[str]] = {}
    for im in new_images:
        per_species.setdefault(im.species_group, set()).add(im.category_label)
    for a in new_annotations:
        per_species.setdefault(species_of[a.image_id], set()).add(a.category)
    groups = tuple(
        (name, tuple(sorted(cats))) for name, cats in sorted(per_species.items())
    )
    mapping = {
        qualified(name, cls): cls for name, cats in groups for cls in cats
    }
    taxonomy = CategoryTaxonomy(species_groups=groups, class_mapping=mapping)
    out = DatasetManifest(
        taxonomy=taxonomy,
        images=tuple(new_images),
        annotations=tuple(new_annotations),
        splits={k: v for k, v in manifest.splits.items() if k in kept_ids},
    )
    validate_manifest(out)
    return out


def split_dataset(
    manifest: DatasetManifest,
    fractions: tuple[float, float, float],
    seed: int,
) -> DatasetManifest:
    """Assign train/val/test splits, stratified per evaluation class.

    Per class: counts follow the floor-then-largest-remainder rule on the
    fractions (remainder ties broken in train/val/test order); which images
    land in which split is decided by a shuffle seeded from (seed, class).
    """
    if len(fractions) != 3:
        raise ValueError("fractions must be (train, val, test)")
    if any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be >= 0, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")

    nonzero_parts = sum(1 for f in fractions if f > 0)
    by_class: dict[str, list[str]] = {}
    for im in manifest.images:
        by_class.setdefault(manifest.eval_class_of(im), []).append(im.image_id)

    splits: dict[str, str] = {}
    for cls in sorted(by_class):
        ids = sorted(by_class[cls])
        n = len(ids)
        if n < nonzero_parts:
            raise ManifestError(
                f"class {cls!r} has {n} images, fewer than the "
                f"{nonzero_parts} nonzero split parts"
            )
        counts = _largest_remainder_counts(n, fractions)
        rng = random.Random(f"{seed}/{cls}")
        rng.shuffle(ids)
        cursor = 0
        for split_name, count in zip(SPLIT_NAMES, counts):
            for image_id in ids[cursor:cursor + count]:
                splits[image_id] = split_name
            cursor += count

    out = replace(manifest, splits=splits)
    validate_manifest(out)
    return out


def _largest_remainder_counts(
    n: int, fractions: tuple[float, float, float]
) -> list[int]:
    exact = [n * f for f in fractions]
    counts = [int(e) for e in exact]
    remainders = [e - c for e, c in zip(exact, counts)]
    for _ in range(n - sum(counts)):
        i = max(range(3), key=lambda j: (remainders[j], -j))
        counts[i] += 1
        remainders[i] = -1.0
    return counts


# ---------------------------------------------------------------------------
# labeling-tool import

_PIXEL_QUANTUM = Decimal("0.01")


def _pct_to_px(pct: float, extent: int) -> float:
    value = Decimal(str(pct)) / Decimal(100) * Decimal(extent)
    return float(value.quantize(_PIXEL_QUANTUM, rounding=ROUND_HALF_EVEN))


def import_rectangle_labels(
    records: list[dict],
    image_sizes: dict[str, tuple[int, int]],
) -> list[BoxAnnotation]:
    """Adapt labeling-tool rectangle exports into box annotations.

    Each record is ``{image, label, x, y, width, height}`` (a nested
    ``rectangle`` object holding the geometry is also accepted) with
    geometry in percent-of-image units. Pixel values are rounded
    half-to-even to 2 decimals. ``image_sizes`` maps image_id ->
    (width, height).
    """
    annotations = []
    for i, rec in enumerate(records):
        where = f"records[{i}]"
        image_id = str(_require(rec, "image", where))
        if image_id not in image_sizes:
            raise ManifestError(f"{where}.image: unknown image {image_id!r}")
        width, height = image_sizes[image_id]
        geom = rec.get("rectangle", rec)
        x = float(_require(geom, "x", where))
        y = float(_require(geom, "y", where))
        w = float(_require(geom, "width", where))
        h = float(_require(geom, "height", where))
        if w <= 0 or h <= 0:
            raise ManifestError(f"{where}: nonpositive rectangle size")
        annotations.append(
            BoxAnnotation(
                image_id=image_id,
                box=(
                    _pct_to_px(x, width),
                    _pct_to_px(y, height),
                    _pct_to_px(x + w, width),
                    _pct_to_px(y + h, height),
                ),
                category=str(_require(rec, "label", where)),
                grouped=bool(rec.get("grouped", False)),
            )
        )
    return annotations
