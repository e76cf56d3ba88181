"""Category taxonomy and point annotations.

Fourteen fine-grained aerial object categories, their coarse six-group
taxonomy (with Farmland and Pool treated as negative background classes),
and the JSON annotation container used across the toolkit.
"""

import json
from dataclasses import dataclass, field

MOC14_NAMES = (
    "Airplane", "Boat", "Car", "Container", "Farmland", "House", "Industrial",
    "Mansion", "Pool", "Stadium", "Tree", "Truck", "Vessel", "Others",
)

MOC6_GROUPS = {
    "Ship": ("Boat", "Vessel"),
    "Vehicle": ("Car", "Truck"),
    "Building": ("House", "Industrial", "Mansion", "Stadium", "Others"),
    "Tree": ("Tree",),
    "Container": ("Container",),
    "Airplane": ("Airplane",),
}

NEGATIVE_CATEGORIES = ("Farmland", "Pool")


class AnnotationError(ValueError):
    """Malformed or inconsistent annotation data."""


@dataclass(frozen=True)
class CategoryTaxonomy:
    """Fine category list plus its grouping into coarse categories.

    Groups and negatives must partition the fine list: disjoint, jointly
    covering every name.
    """

    fine_names: tuple
    groups: dict
    negatives: tuple

    def __post_init__(self):
        self.validate()

    def validate(self):
        seen = {}
        for group, members in self.groups.items():
            for m in members:
                if m in seen:
                    raise AnnotationError(
                        f"category {m!r} assigned to both {seen[m]!r} and {group!r}")
                seen[m] = group
        for m in self.negatives:
            if m in seen:
                raise AnnotationError(
                    f"negative category {m!r} also in group {seen[m]!r}")
            seen[m] = None
        missing = [n for n in self.fine_names if n not in seen]
        extra = [n for n in seen if n not in self.fine_names]
        if missing or extra:
            raise AnnotationError(
                f"groups+negatives must partition the fine categories "
                f"(missing {missing}, extra {extra})")

    @property
    def group_names(self):
        return tuple(self.groups.keys())

    def group_of(self, fine_name):
        for group, members in self.groups.items():
            if fine_name in members:
                return group
        return None

    @classmethod
    def default(cls):
        return cls(MOC14_NAMES, dict(MOC6_GROUPS), NEGATIVE_CATEGORIES)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        groups = {g: tuple(m) for g, m in raw["groups"].items()}
        negatives = tuple(raw.get("negatives", ()))
        fine = tuple(m for members in groups.values() for m in members) + negatives
        return cls(fine, groups, negatives)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(
                {"groups": {g: list(m) for g, m in self.groups.items()},
                 "negatives": list(self.negatives)},
                fh, indent=2)
            fh.write("\n")


@dataclass(frozen=True)
class IgnoreBox:
    """Axis-aligned rectangle (inclusive pixel bounds) scoped to one category."""

    category: str
    x0: int
    y0: int
    x1: int
    y1: int

    def contains(self, x, y):
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


@dataclass
class AnnotationSet:
    """Per-image center-point annotations plus category-scoped ignore boxes."""

    image_id: str
    width: int
    height: int
    points: dict = field(default_factory=dict)  # category -> [(x, y), ...]
    ignore_boxes: list = field(default_factory=list)

    @property
    def categories(self):
        return tuple(self.points.keys())

    def validate(self):
        for cat, pts in self.points.items():
            for x, y in pts:
                if not (0 <= x < self.width and 0 <= y < self.height):
                    raise AnnotationError(
                        f"point ({x}, {y}) of category {cat!r} outside "
                        f"{self.width}x{self.height} image {self.image_id!r}")
        return self


def load_annotations(path, valid_categories=None):
    """Load an annotation JSON file.

    ``valid_categories``, when given, is the active taxonomy's category
    list; unknown categories are rejected and missing ones filled with
    empty point lists in that order.
    """
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise AnnotationError(
                f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
                f"{exc.msg}") from exc
    try:
        image_id = raw["image_id"]
        width = int(raw["width"])
        height = int(raw["height"])
        raw_points = raw.get("points", {})
        raw_boxes = raw.get("ignore_boxes", [])
    except (KeyError, TypeError) as exc:
        raise AnnotationError(f"{path}: missing required field: {exc}") from exc

    if valid_categories is not None:
        unknown = [c for c in raw_points if c not in valid_categories]
        if unknown:
            raise AnnotationError(f"{path}: unknown categories {unknown}")
        order = list(valid_categories)
    else:
        order = list(raw_points.keys())

    points = {c: [(int(x), int(y)) for x, y in raw_points.get(c, [])] for c in order}
    boxes = []
    for b in raw_boxes:
        cat = b["category"]
        if valid_categories is not None and cat not in valid_categories:
            raise AnnotationError(f"{path}: ignore box for unknown category {cat!r}")
        boxes.append(IgnoreBox(cat, int(b["x0"]), int(b["y0"]),
                               int(b["x1"]), int(b["y1"])))
    return AnnotationSet(image_id, width, height, points, boxes).validate()


def save_annotations(anno, path):
    payload = {
        "image_id": anno.image_id,
        "width": anno.width,
        "height": anno.height,
        "points": {c: [[int(x), int(y)] for x, y in pts]
                   for c, pts in anno.points.items()},
        "ignore_boxes": [
            {"category": b.category, "x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1}
            for b in anno.ignore_boxes
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def group_to_moc6(anno, taxonomy=None):
    """Regroup fine-grained annotations into the coarse taxonomy.

    Group point lists are the concatenation of their members' lists (in
    member order); points and boxes of negative categories are dropped.
    """
    taxonomy = taxonomy or CategoryTaxonomy.default()
    points = {}
    for group, members in taxonomy.groups.items():
        merged = []
        for m in members:
            merged.extend(anno.points.get(m, []))
        points[group] = merged
    boxes = []
    for b in anno.ignore_boxes:
        group = taxonomy.group_of(b.category)
        if group is not None:
            boxes.append(IgnoreBox(group, b.x0, b.y0, b.x1, b.y1))
    return AnnotationSet(anno.image_id, anno.width, anno.height, points, boxes)


def counts(anno):
    """Per-category point counts, excluding points inside same-category
    ignore boxes."""
    out = {}
    for cat, pts in anno.points.items():
        boxes = [b for b in anno.ignore_boxes if b.category == cat]
        n = 0
        for x, y in pts:
            if not any(b.contains(x, y) for b in boxes):
                n += 1
        out[cat] = n
    return out


def visible_points(anno, category):
    """Points of one category that are not inside its ignore boxes."""
    boxes = [b for b in anno.ignore_boxes if b.category == category]
    return [(x, y) for x, y in anno.points.get(category, [])
            if not any(b.contains(x, y) for b in boxes)]
