"""Synthetic scene corpus: regions with attribute features, templated
captions, SVG rendering, dataset splits, and per-episode query streams.

A scene is a set of N colored shapes in the unit square.  Each region
carries a raw feature vector (one-hot category/color/size plus bbox,
with Gaussian noise) and each scene carries deduplicated captions tied
to a region: attribute captions ("a small red circle"), grid-cell
captions ("a red circle in the top left"), and relational captions
("a circle left of a blue square").  Captions are deliberately ambiguous
across scenes so that single-query retrieval is hard and multi-turn
refinement pays off.

The corpus loader accepts any file in the same record format, so
externally computed region features can be dropped in without code
changes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

CATEGORIES = [
    "circle", "ellipse", "square", "rectangle", "triangle", "diamond",
    "pentagon", "hexagon", "star", "cross", "arrow", "ring",
]
COLORS = ["red", "blue", "green", "yellow", "orange", "purple", "pink", "brown"]
SIZES = ["small", "medium", "large"]
SIZE_RANGES = {"small": (0.05, 0.12), "medium": (0.12, 0.22), "large": (0.22, 0.35)}

ROWS = ["top", "middle", "bottom"]
COLS = ["left", "center", "right"]

_EVAL_SALT = 9137  # stream separator for the fixed eval-order permutation


@dataclass(frozen=True)
class Region:
    category: str
    color: str
    size: str
    bbox: tuple[float, float, float, float]  # normalized [x, y, w, h]
    feature: np.ndarray

    def center(self) -> tuple[float, float]:
        x, y, w, h = self.bbox
        return (x + w / 2.0, y + h / 2.0)


@dataclass(frozen=True)
class Caption:
    region: int
    text: str


@dataclass(frozen=True)
class Scene:
    id: int
    seed: int
    regions: list[Region]
    captions: list[Caption]


@dataclass(frozen=True)
class CorpusConfig:
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 500
    n_regions: int = 8
    t_turns: int = 5
    categories: list[str] = field(default_factory=lambda: list(CATEGORIES))
    colors: list[str] = field(default_factory=lambda: list(COLORS))
    sizes: list[str] = field(default_factory=lambda: list(SIZES))
    noise: float = 0.05
    seed: int = 0


def feature_dim(config: CorpusConfig) -> int:
    return len(config.categories) + len(config.colors) + len(config.sizes) + 4


def cell_name(cx: float, cy: float) -> str:
    """3x3 grid cell of a point, e.g. (0.1, 0.1) -> 'top left'."""
    col = COLS[min(int(cx * 3), 2)]
    row = ROWS[min(int(cy * 3), 2)]
    return f"{row} {col}"


def relation_name(center_a, center_b) -> str:
    """Spatial relation of a w.r.t. b, by the dominant center-offset axis."""
    dx = center_b[0] - center_a[0]
    dy = center_b[1] - center_a[1]
    if abs(dx) >= abs(dy):
        return "left of" if dx > 0 else "right of"
    return "above" if dy > 0 else "below"  # y grows downward


def _contains(outer, inner) -> bool:
    ox, oy, ow, oh = outer
    ix, iy, iw, ih = inner
    return ox <= ix and oy <= iy and ox + ow >= ix + iw and oy + oh >= iy + ih


def _round6(v) -> float:
    return round(float(v), 6)


def _sample_bbox(size: str, taken: list[tuple], rng: np.random.Generator):
    lo, hi = SIZE_RANGES[size]
    for _ in range(1000):
        w = _round6(rng.uniform(lo, hi))
        h = _round6(rng.uniform(lo, hi))
        x = min(_round6(rng.uniform(0.0, 1.0 - w)), 1.0 - w)
        y = min(_round6(rng.uniform(0.0, 1.0 - h)), 1.0 - h)
        bbox = (x, y, w, h)
        if not any(_contains(bbox, t) or _contains(t, bbox) for t in taken):
            return bbox
    return None


def _region_feature(config: CorpusConfig, category, color, size, bbox, rng):
    one_hot = np.zeros(feature_dim(config))
    one_hot[config.categories.index(category)] = 1.0
    off = len(config.categories)
    one_hot[off + config.colors.index(color)] = 1.0
    off += len(config.colors)
    one_hot[off + config.sizes.index(size)] = 1.0
    one_hot[-4:] = bbox
    noisy = one_hot + rng.normal(0.0, config.noise, size=one_hot.shape)
    return np.round(noisy, 6)


def _scene_captions(regions: list[Region]) -> list[Caption]:
    captions: list[Caption] = []
    for i, r in enumerate(regions):
        captions.append(Caption(i, f"a {r.size} {r.color} {r.category}"))
    for i, r in enumerate(regions):
        cx, cy = r.center()
        captions.append(Caption(i, f"a {r.color} {r.category} in the {cell_name(cx, cy)}"))
    if len(regions) >= 2:
        centers = [r.center() for r in regions]
        for i, r in enumerate(regions):
            dists = [
                (np.hypot(centers[i][0] - c[0], centers[i][1] - c[1]), j)
                for j, c in enumerate(centers) if j != i
            ]
            _, j = min(dists)
            other = regions[j]
            rel = relation_name(centers[i], centers[j])
            captions.append(Caption(i, f"a {r.category} {rel} a {other.color} {other.category}"))
    seen: set[str] = set()
    unique = []
    for cap in captions:
        if cap.text not in seen:
            seen.add(cap.text)
            unique.append(cap)
    return unique


def _try_scene(config: CorpusConfig, seed: int, scene_id: int) -> Scene | None:
    rng = np.random.default_rng(seed)
    n_triples = len(config.categories) * len(config.colors) * len(config.sizes)
    triples: list[tuple[str, str, str]] = []
    used: set[tuple[str, str, str]] = set()
    while len(triples) < config.n_regions:
        triple = (
            config.categories[rng.integers(len(config.categories))],
            config.colors[rng.integers(len(config.colors))],
            config.sizes[rng.integers(len(config.sizes))],
        )
        if triple in used and len(used) < n_triples:
            continue
        used.add(triple)
        triples.append(triple)

    regions: list[Region] = []
    taken: list[tuple] = []
    for category, color, size in triples:
        bbox = _sample_bbox(size, taken, rng)
        if bbox is None:
            return None
        taken.append(bbox)
        feature = _region_feature(config, category, color, size, bbox, rng)
        regions.append(Region(category, color, size, bbox, feature))

    captions = _scene_captions(regions)
    if len(captions) < config.t_turns:
        return None
    return Scene(id=scene_id, seed=seed, regions=regions, captions=captions)


def generate_scene(config: CorpusConfig, rng: np.random.Generator, scene_id: int = 0) -> Scene:
    """Generate one scene; redraws internally until the caption floor is met."""
    if not config.categories or not config.colors or not config.sizes:
        raise ValueError("scene palettes must be non-empty")
    for _ in range(100):
        seed = int(rng.integers(2**63))
        scene = _try_scene(config, seed, scene_id)
        if scene is not None:
            return scene
    raise ValueError(
        f"could not generate a scene with >= {config.t_turns} captions; "
        f"config too constrained (n_regions={config.n_regions})"
    )


# ---------------------------------------------------------------------------
# SVG rendering

_CANVAS = 256.0


def _fmt(v: float) -> str:
    return f"{v * _CANVAS:.2f}"


def _poly(points, color) -> str:
    coords = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in points)
    return f'<polygon points="{coords}" fill="{color}" />'


def _ngon_points(x, y, w, h, n, start_deg=-90.0):
    cx, cy, rx, ry = x + w / 2, y + h / 2, w / 2, h / 2
    pts = []
    for k in range(n):
        a = np.deg2rad(start_deg + 360.0 * k / n)
        pts.append((cx + rx * np.cos(a), cy + ry * np.sin(a)))
    return pts


def _star_points(x, y, w, h):
    cx, cy, rx, ry = x + w / 2, y + h / 2, w / 2, h / 2
    pts = []
    for k in range(10):
        a = np.deg2rad(-90.0 + 36.0 * k)
        f = 1.0 if k % 2 == 0 else 0.45
        pts.append((cx + f * rx * np.cos(a), cy + f * ry * np.sin(a)))
    return pts


def region_svg(region: Region) -> str:
    """One SVG shape element for a region, at its bbox, in its color."""
    x, y, w, h = region.bbox
    c = region.color
    cx, cy = x + w / 2, y + h / 2
    if region.category == "circle":
        r = min(w, h) / 2
        return f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" fill="{c}" />'
    if region.category == "ellipse":
        return (f'<ellipse cx="{_fmt(cx)}" cy="{_fmt(cy)}" rx="{_fmt(w / 2)}" '
                f'ry="{_fmt(h / 2)}" fill="{c}" />')
    if region.category == "square":
        s = min(w, h)
        return (f'<rect x="{_fmt(cx - s / 2)}" y="{_fmt(cy - s / 2)}" '
                f'width="{_fmt(s)}" height="{_fmt(s)}" fill="{c}" />')
    if region.category == "rectangle":
        return (f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
                f'height="{_fmt(h)}" fill="{c}" />')
    if region.category == "triangle":
        return _poly([(cx, y), (x + w, y + h), (x, y + h)], c)
    if region.category == "diamond":
        return _poly([(cx, y), (x + w, cy), (cx, y + h), (x, cy)], c)
    if region.category == "pentagon":
        return _poly(_ngon_points(x, y, w, h, 5), c)
    if region.category == "hexagon":
        return _poly(_ngon_points(x, y, w, h, 6), c)
    if region.category == "star":
        return _poly(_star_points(x, y, w, h), c)
    if region.category == "cross":
        x0, x1 = x + w / 3, x + 2 * w / 3
        y0, y1 = y + h / 3, y + 2 * h / 3
        return _poly([(x0, y), (x1, y), (x1, y0), (x + w, y0), (x + w, y1),
                      (x1, y1), (x1, y + h), (x0, y + h), (x0, y1), (x, y1),
                      (x, y0), (x0, y0)], c)
    if region.category == "arrow":
        xm = x + 0.6 * w
        y0, y1 = y + h / 3, y + 2 * h / 3
        return _poly([(x, y0), (xm, y0), (xm, y), (x + w, cy), (xm, y + h),
                      (xm, y1), (x, y1)], c)
    if region.category == "ring":
        r = min(w, h) / 2
        stroke = max(r * 0.35, 0.01)
        return (f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r - stroke / 2)}" '
                f'fill="none" stroke="{c}" stroke-width="{_fmt(stroke)}" />')
    raise ValueError(f"unknown category {region.category!r}")


def render_svg(scene: Scene) -> str:
    """Standalone SVG document; byte-for-byte deterministic given the scene."""
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {int(_CANVAS)} '
        f'{int(_CANVAS)}" width="{int(_CANVAS)}" height="{int(_CANVAS)}" '
        f'style="background:#f6f5f0">'
    ]
    parts.extend("  " + region_svg(r) for r in scene.regions)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# corpus files

def scene_to_record(scene: Scene) -> dict:
    return {
        "id": scene.id,
        "seed": scene.seed,
        "regions": [
            {
                "category": r.category,
                "color": r.color,
                "size": r.size,
                "bbox": list(r.bbox),
                "feature": r.feature.tolist(),
            }
            for r in scene.regions
        ],
        "captions": [{"region": c.region, "text": c.text} for c in scene.captions],
    }


def record_to_scene(record: dict) -> Scene:
    regions = [
        Region(
            category=r["category"],
            color=r["color"],
            size=r["size"],
            bbox=tuple(float(v) for v in r["bbox"]),
            feature=np.asarray(r["feature"], dtype=np.float64),
        )
        for r in record["regions"]
    ]
    captions = [Caption(int(c["region"]), c["text"]) for c in record["captions"]]
    return Scene(id=int(record["id"]), seed=int(record["seed"]),
                 regions=regions, captions=captions)


SPLITS = ["train", "val", "test"]


def make_corpus(config: CorpusConfig, out_dir) -> dict:
    """Write train/val/test record files plus a manifest; returns the manifest."""
    counts = [config.n_train, config.n_val, config.n_test]
    if any(c <= 0 for c in counts):
        raise ValueError(f"split counts must be positive, got {counts}")
    if config.n_regions < 1 or config.t_turns < 1:
        raise ValueError("n_regions and t_turns must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    next_id = 0
    for split, count in zip(SPLITS, counts):
        path = out / f"{split}.jsonl"
        try:
            with open(path, "w") as fh:
                for _ in range(count):
                    scene = generate_scene(config, rng, scene_id=next_id)
                    next_id += 1
                    fh.write(json.dumps(scene_to_record(scene), separators=(",", ":")))
                    fh.write("\n")
        except OSError as exc:
            raise OSError(f"failed writing corpus split {path}: {exc}") from exc
    manifest = {"config": asdict(config), "seed": config.seed, "counts": counts}
    try:
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"failed writing manifest in {out}: {exc}") from exc
    return manifest


def load_corpus(path) -> list[Scene]:
    """Read one split file of scene records (also the external-features hook)."""
    path = Path(path)
    scenes = []
    try:
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    scenes.append(record_to_scene(json.loads(line)))
    except OSError as exc:
        raise OSError(f"failed reading corpus file {path}: {exc}") from exc
    return scenes


def load_manifest(out_dir) -> dict:
    with open(Path(out_dir) / "manifest.json") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# episodes

def sample_episode(scene: Scene, t_turns: int, mode: str,
                   rng: np.random.Generator | None = None) -> list[str]:
    """Ordered query stream for one scene.

    train mode: uniformly sampled distinct captions in random order.
    eval mode: first t_turns of a fixed permutation derived from scene.seed,
    so repeated evaluations see identical streams.
    """
    n = len(scene.captions)
    if t_turns > n:
        raise ValueError(f"scene {scene.id} has {n} captions, fewer than {t_turns}")
    if mode == "train":
        if rng is None:
            raise ValueError("train mode needs an rng")
        idx = rng.permutation(n)[:t_turns]
    elif mode == "eval":
        idx = np.random.default_rng([scene.seed, _EVAL_SALT]).permutation(n)[:t_turns]
    else:
        raise ValueError(f"unknown episode mode {mode!r}")
    return [scene.captions[int(i)].text for i in idx]
