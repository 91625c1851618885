"""Synthetic datasets, the plain-text dataset format, and sample export.

A dataset file starts with ``GBDS 1 <n> <d> <kind> [W] [L]`` and then has
one whitespace-separated row per point: the d coordinates, the weight
when ``W`` is present and the integer label (-1 for unlabeled) when ``L``
is present. Reals are written with ``repr`` so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .core import Space, SpaceKind
from .dataset import UNLABELED, Dataset
from .errors import BadParams, FormatError, ShapeError

MAGIC = "GBDS"
VERSION = "1"
BINARIZE_THRESHOLD = 0.5
SYNTHETIC_KINDS = ("gaussian_mixture", "binary_parity", "two_moons")


# ---------------------------------------------------------------------------
# synthetic generation


def _as_float_list(value, what):
    if isinstance(value, str):
        value = [float(v) for v in value.replace(";", ",").split(",") if v.strip()]
    try:
        return [float(v) for v in np.ravel(value)]
    except (TypeError, ValueError):
        raise BadParams(f"{what} must be a list of numbers") from None


def _gaussian_mixture(params, n, rng):
    K = int(params.get("k", 2))
    d = int(params.get("d", 2))
    if K < 1 or d < 1:
        raise BadParams("gaussian_mixture needs K >= 1 and d >= 1")
    if "means" in params:
        means = np.asarray(_as_float_list(params["means"], "means")).reshape(-1, d)
        if means.shape[0] != K:
            raise BadParams(f"means must give {K} rows of {d} values")
    elif K == 2:
        means = np.array([np.full(d, 3.0), np.full(d, -3.0)])
    else:
        # K points on a circle of radius 3 (first two coordinates)
        means = np.zeros((K, d))
        angles = 2 * np.pi * np.arange(K) / K
        means[:, 0] = 3 * np.cos(angles)
        if d > 1:
            means[:, 1] = 3 * np.sin(angles)
    std = float(params.get("std", 1.0))
    if std <= 0:
        raise BadParams("std must be positive")
    # contiguous blocks: rows of component j are consecutive
    counts = np.full(K, n // K)
    counts[: n % K] += 1
    comp = np.repeat(np.arange(K), counts)
    points = means[comp] + std * rng.standard_normal((n, d))
    label_map = params.get("label_map")
    if label_map is None:
        labels = comp
    else:
        table = np.asarray(_as_float_list(label_map, "label_map"), dtype=np.int64)
        if table.size != K or np.any(table < 0):
            raise BadParams(f"label_map must give one class per component ({K})")
        labels = table[comp]
    truth = {"K": K, "d": d, "means": means.tolist(), "std": std, "counts": counts.tolist()}
    return Dataset(points, Space.real(d), labels=labels), truth


def _binary_parity(params, n, rng):
    d = int(params.get("d", 6))
    if d < 2:
        raise BadParams("binary_parity needs d >= 2")
    bits = rng.integers(0, 2, (n, d - 1))
    last = bits.sum(axis=1) % 2
    points = np.column_stack([bits, last]).astype(np.float64)
    return Dataset(points, Space.binary(d)), {"d": d, "parity": "even"}


def _two_moons(params, n, rng):
    noise = float(params.get("noise", 0.1))
    if noise < 0:
        raise BadParams("noise must be nonnegative")
    counts = np.array([n - n // 2, n // 2])
    labels = np.repeat([0, 1], counts)
    t = rng.uniform(0.0, np.pi, n)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    points = np.where(labels[:, None] == 0, upper, lower) + noise * rng.standard_normal((n, 2))
    return Dataset(points, Space.real(2), labels=labels), {"noise": noise, "counts": counts.tolist()}


_GENERATORS = {"gaussian_mixture": _gaussian_mixture, "binary_parity": _binary_parity, "two_moons": _two_moons}


def make_synthetic(kind: str, params: dict | None = None, n: int = 1000, seed: int = 0) -> tuple[Dataset, dict]:
    """Deterministic synthetic dataset and a manifest of its ground truth.

    ``binarize=true`` in params thresholds [0, 1]-scaled coordinates at 0.5
    (the threshold is recorded in the manifest).
    """
    kind = kind.replace("-", "_").lower()
    if kind not in _GENERATORS:
        raise BadParams(f"unknown synthetic kind {kind!r}; choose from {', '.join(SYNTHETIC_KINDS)}")
    if n < 1:
        raise BadParams("n must be >= 1")
    params = {str(k).lower(): v for k, v in (params or {}).items()}
    rng = np.random.default_rng(seed)
    ds, truth = _GENERATORS[kind](params, int(n), rng)
    manifest = {"kind": kind, "n": int(n), "seed": int(seed), "params": {k: str(v) for k, v in params.items()},
                "truth": truth, "space": str(ds.space)}
    if str(params.get("binarize", "false")).lower() in ("1", "true", "yes"):
        ds = Dataset(binarize(ds.points), Space.binary(ds.space.dim), labels=ds.labels)
        manifest["binarize_threshold"] = BINARIZE_THRESHOLD
        manifest["space"] = str(ds.space)
    return ds, manifest


def binarize(points, threshold: float = BINARIZE_THRESHOLD) -> np.ndarray:
    """Min-max scale each column to [0, 1], then threshold."""
    x = np.asarray(points, dtype=np.float64)
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return ((x - lo) / span > threshold).astype(np.float64)


def split_labeled(ds: Dataset, per_class: int, n_classes: int | None = None, seed: int = 0):
    """Keep ``per_class`` labels of each class (chosen by seed), hide the rest."""
    from .dataset import LabeledDataset

    if ds.labels is None:
        raise BadParams("dataset has no labels to split")
    C = int(ds.labels.max()) + 1 if n_classes is None else n_classes
    rng = np.random.default_rng(seed)
    keep = []
    for c in range(C):
        idx = np.flatnonzero(ds.labels == c)
        if idx.size < per_class:
            raise BadParams(f"class {c} has only {idx.size} examples, {per_class} requested")
        keep.append(np.sort(rng.choice(idx, per_class, replace=False)))
    keep = np.concatenate(keep) if keep else np.zeros(0, dtype=np.int64)
    mask = np.zeros(len(ds), dtype=bool)
    mask[keep] = True
    return LabeledDataset(ds.points[~mask], ds.points[mask], ds.labels[mask], C, ds.space)


# ---------------------------------------------------------------------------
# dataset files


def _format_value(v: float, kind: SpaceKind) -> str:
    if kind is SpaceKind.REAL:
        return repr(float(v))
    return str(int(v))


def dataset_to_text(ds: Dataset) -> str:
    flags = (["W"] if ds.weights is not None else []) + (["L"] if ds.labels is not None else [])
    kind = ds.space.kind.value if ds.space.kind is not SpaceKind.CATEGORICAL else str(ds.space)
    lines = [" ".join([MAGIC, VERSION, str(len(ds)), str(ds.space.dim), kind] + flags)]
    pts = ds.points.reshape(len(ds), -1)
    for i in range(len(ds)):
        row = [_format_value(v, ds.space.kind) for v in pts[i]]
        if ds.weights is not None:
            row.append(repr(float(ds.weights[i])))
        if ds.labels is not None:
            row.append(str(int(ds.labels[i])))
        lines.append(" ".join(row))
    return "\n".join(lines) + "\n"


def save_dataset(ds: Dataset, path, manifest: dict | None = None) -> None:
    """Write the dataset file and, when given, a ``<path>.json`` sidecar."""
    path = Path(path)
    path.write_text(dataset_to_text(ds))
    if manifest is not None:
        Path(str(path) + ".json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _parse_header(line: str) -> tuple[int, int, Space, bool, bool]:
    parts = line.split()
    if len(parts) < 5 or parts[0] != MAGIC:
        raise FormatError("line 1 (offset 0): missing 'GBDS <version> <n> <d> <kind>' header")
    if parts[1] != VERSION:
        raise FormatError(f"line 1 (offset 0): unsupported format version {parts[1]!r}")
    try:
        n, d = int(parts[2]), int(parts[3])
    except ValueError:
        raise FormatError("line 1 (offset 0): n and d must be integers") from None
    kind = parts[4]
    try:
        if kind.startswith("categorical"):
            space = Space.parse(kind)
            if d != 1:
                raise FormatError("line 1 (offset 0): categorical datasets have d = 1")
        else:
            space = Space(SpaceKind(kind), d)
    except (ValueError, KeyError):
        raise FormatError(f"line 1 (offset 0): unknown space kind {kind!r}") from None
    flags = parts[5:]
    if any(f not in ("W", "L") for f in flags):
        raise FormatError(f"line 1 (offset 0): unknown header flags {flags}")
    if n < 1:
        raise FormatError("line 1 (offset 0): dataset must have n >= 1 rows")
    return n, d, space, "W" in flags, "L" in flags


def dataset_from_text(text: str) -> Dataset:
    lines = text.split("\n")
    n, d, space, has_w, has_l = _parse_header(lines[0])
    width = d + has_w + has_l
    pts = np.empty((n, d))
    w = np.empty(n) if has_w else None
    y = np.empty(n, dtype=np.int64) if has_l else None
    offset = len(lines[0]) + 1
    if lines and lines[-1] == "":
        lines = lines[:-1]
    for i in range(n):
        lineno = i + 2
        if lineno > len(lines):
            raise FormatError(f"truncated at line {lineno} (offset {offset}): expected {n} rows, found {i}")
        line = lines[lineno - 1]
        where = f"line {lineno} (offset {offset})"
        fields = line.split()
        if len(fields) != width:
            raise FormatError(f"{where}: expected {width} values, got {len(fields)}")
        try:
            vals = [float(f) for f in fields[:d]]
        except ValueError:
            raise FormatError(f"{where}: non-numeric value") from None
        if not all(math.isfinite(v) for v in vals):
            raise FormatError(f"{where}: non-finite value")
        if space.kind is SpaceKind.BINARY and any(v not in (0.0, 1.0) for v in vals):
            raise FormatError(f"{where}: value outside Binary space")
        if space.kind is SpaceKind.CATEGORICAL and any(v != int(v) or not 0 <= v < space.size for v in vals):
            raise FormatError(f"{where}: value outside Categorical space")
        pts[i] = vals
        col = d
        if has_w:
            try:
                w[i] = float(fields[col])
            except ValueError:
                raise FormatError(f"{where}: non-numeric weight") from None
            if not (math.isfinite(w[i]) and w[i] >= 0):
                raise FormatError(f"{where}: weight must be finite and nonnegative")
            col += 1
        if has_l:
            try:
                y[i] = int(fields[col])
            except ValueError:
                raise FormatError(f"{where}: label must be an integer") from None
            if y[i] < UNLABELED:
                raise FormatError(f"{where}: label must be >= -1")
        offset += len(line) + 1
    rest = "\n".join(lines[n + 1:]).strip()
    if rest:
        raise FormatError(f"line {n + 2} (offset {offset}): unexpected data after {n} rows")
    if has_w and not np.any(w > 0):
        raise FormatError("weights are all zero")
    points = pts[:, 0].astype(np.int64) if space.kind is SpaceKind.CATEGORICAL else pts
    return Dataset(points, space, w, y)


def load_dataset(path) -> Dataset:
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError:
        raise FormatError(f"{path}: not a text dataset file") from None
    return dataset_from_text(text)


def load_manifest(path) -> dict | None:
    side = Path(str(path) + ".json")
    return json.loads(side.read_text()) if side.exists() else None


# ---------------------------------------------------------------------------
# sample export


def samples_to_csv(samples: np.ndarray, space: Space) -> str:
    pts = np.asarray(samples).reshape(len(samples), -1)
    return "".join(",".join(_format_value(v, space.kind) for v in row) + "\n" for row in pts)


def samples_to_pgm(samples: np.ndarray, width: int, height: int) -> bytes:
    """Binary PGM (P5) of an m x m tile grid, m = ceil(sqrt(n)); values are
    clipped to [0, 1] and scaled to 0..255; empty tiles are black."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or width < 1 or height < 1 or x.shape[1] != width * height:
        raise ShapeError(f"samples of shape {x.shape} are not {width}x{height} images")
    n = x.shape[0]
    m = max(1, math.ceil(math.sqrt(n)))
    grid = np.zeros((m * height, m * width), dtype=np.uint8)
    pix = np.rint(np.clip(x, 0.0, 1.0) * 255).astype(np.uint8)
    for i in range(n):
        r, c = divmod(i, m)
        grid[r * height:(r + 1) * height, c * width:(c + 1) * width] = pix[i].reshape(height, width)
    header = f"P5\n{m * width} {m * height}\n255\n".encode()
    return header + grid.tobytes()


def export_samples(samples: np.ndarray, path, fmt: str, space: Space, width: int | None = None,
                   height: int | None = None) -> None:
    fmt = fmt.lower()
    if fmt == "csv":
        Path(path).write_text(samples_to_csv(samples, space))
    elif fmt == "pgm":
        if space.kind is SpaceKind.CATEGORICAL:
            raise ShapeError("PGM export needs a binary or real image space")
        if width is None or height is None:
            side = math.isqrt(space.dim)
            if side * side != space.dim:
                raise ShapeError(f"{space} is not image-shaped; pass width and height")
            width = height = side
        Path(path).write_bytes(samples_to_pgm(samples, width, height))
    else:
        raise BadParams(f"unknown export format {fmt!r}")
