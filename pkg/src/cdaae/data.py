"""Corpus manifests, same-subject pair samplers, and image pre/postprocessing.

A corpus is a CSV manifest pointing at pre-aligned, pre-cropped face crops.
Two samplers build the (source, target, target-label) training triples: the
action-unit sampler caps and stratifies targets per AU, the emotion sampler
exhaustively pairs every same-subject same-gaze image combination.
"""
from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

AU_NAMES = ("AU1", "AU2", "AU4", "AU5", "AU6", "AU9", "AU12", "AU15", "AU17", "AU20", "AU25", "AU26")
EMOTION_NAMES = ("neutral", "happiness", "sadness", "anger", "disgust", "contempt", "fear", "surprise")
LABEL_DIMS = {"au": 12, "emotion": 8}
RAW_AU_MAX = 5.0  # annotation scale before rescaling to [0, 1]
IMG_SIZE = 32

MANIFEST_COLUMNS = ("image_path", "subject_id", "gaze", "label_mode") + tuple(
    f"l{i}" for i in range(1, 13)
)


class ManifestError(ValueError):
    """The manifest file or its rows violate the corpus contract."""


@dataclass(frozen=True)
class ManifestRow:
    image_path: Path
    subject_id: str
    gaze: str
    label: np.ndarray = field(compare=False)


@dataclass
class CorpusManifest:
    label_mode: str
    rows: list[ManifestRow]

    @property
    def label_dim(self) -> int:
        return LABEL_DIMS[self.label_mode]

    def labels(self) -> np.ndarray:
        return np.stack([r.label for r in self.rows])


@dataclass(frozen=True)
class FacePair:
    """Training triple: source frame, target frame, and the target's label."""

    source: ManifestRow
    target: ManifestRow
    label: np.ndarray = field(compare=False)
    subject_id: str = ""


def load_manifest(path: str | Path) -> CorpusManifest:
    """Read and validate a corpus manifest CSV.

    Image paths are resolved relative to the manifest's directory and must
    exist; the images themselves are only decoded on access. Raw 0-5 action
    unit intensities are detected and rescaled to [0, 1].
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_COLUMNS:
            raise ManifestError(
                f"manifest header must be {','.join(MANIFEST_COLUMNS)}, got {reader.fieldnames}"
            )
        raw_rows = list(reader)
    if not raw_rows:
        raise ManifestError("manifest has no rows")

    modes = {r["label_mode"] for r in raw_rows}
    if len(modes) != 1:
        raise ManifestError(f"manifest mixes label modes: {sorted(modes)}")
    label_mode = modes.pop()
    if label_mode not in LABEL_DIMS:
        raise ManifestError(f"unknown label_mode {label_mode!r} (expected 'au' or 'emotion')")
    dim = LABEL_DIMS[label_mode]

    rows: list[ManifestRow] = []
    seen_paths: set[Path] = set()
    for lineno, raw in enumerate(raw_rows, start=2):
        image_path = (root / raw["image_path"]).resolve()
        if image_path in seen_paths:
            raise ManifestError(f"line {lineno}: duplicate image_path {raw['image_path']}")
        seen_paths.add(image_path)
        if not image_path.is_file():
            raise ManifestError(f"line {lineno}: image file missing: {image_path}")
        try:
            values = [float(raw[f"l{i}"]) for i in range(1, dim + 1)]
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"line {lineno}: malformed label values") from exc
        extras = [raw[f"l{i}"] for i in range(dim + 1, 13)]
        if any(e not in ("", None) for e in extras):
            raise ManifestError(f"line {lineno}: unused label columns must be empty in {label_mode} mode")
        rows.append(
            ManifestRow(
                image_path=image_path,
                subject_id=raw["subject_id"],
                gaze=raw["gaze"],
                label=np.asarray(values, dtype=np.float32),
            )
        )

    labels = np.stack([r.label for r in rows])
    if label_mode == "au":
        top = labels.max()
        if top > RAW_AU_MAX:
            raise ManifestError(f"AU intensities exceed the raw 0-{RAW_AU_MAX:g} scale (max {top:g})")
        if top > 1.0:
            # raw 0-5 annotations: rescale the whole corpus to [0, 1]
            for row in rows:
                row.label[:] = row.label / RAW_AU_MAX
            labels = labels / RAW_AU_MAX
    if labels.min() < 0.0 or labels.max() > 1.0:
        raise ManifestError("label values outside [0, 1] after rescaling")

    counts: dict[str, int] = defaultdict(int)
    for row in rows:
        counts[row.subject_id] += 1
    lonely = sorted(s for s, n in counts.items() if n < 2)
    if lonely:
        raise ManifestError(f"subjects with a single image cannot be paired: {lonely[:5]}")

    return CorpusManifest(label_mode=label_mode, rows=rows)


def write_manifest(path: str | Path, label_mode: str, rows: list[dict]) -> None:
    """Write rows (dicts with image_path/subject_id/gaze/label) as a manifest CSV."""
    dim = LABEL_DIMS[label_mode]
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for row in rows:
            label = list(np.asarray(row["label"], dtype=float))
            if len(label) != dim:
                raise ManifestError(f"label for {row['image_path']} has length {len(label)}, want {dim}")
            cells = [f"{v:.6g}" for v in label] + [""] * (12 - dim)
            writer.writerow([row["image_path"], row["subject_id"], row.get("gaze", ""), label_mode, *cells])


# ---------------------------------------------------------------------------
# pair samplers


def _stratified_take(indices: np.ndarray, bins: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    """Sample ``cap`` of ``indices`` proportionally to the per-bin histogram."""
    uniq, counts = np.unique(bins, return_counts=True)
    total = counts.sum()
    exact = counts * (cap / total)
    quota = np.floor(exact).astype(int)
    remainder = cap - quota.sum()
    if remainder > 0:
        order = np.argsort(-(exact - quota), kind="stable")
        quota[order[:remainder]] += 1
    chosen: list[np.ndarray] = []
    for b, q in zip(uniq, quota):
        members = indices[bins == b]
        if q >= len(members):
            chosen.append(members)
        elif q > 0:
            chosen.append(rng.choice(members, size=q, replace=False))
    return np.sort(np.concatenate(chosen)) if chosen else np.empty(0, dtype=int)


def sample_pairs_au(
    manifest: CorpusManifest,
    per_au_cap: int = 2000,
    zero_frames: int = 1000,
    seed: int = 0,
) -> list[FacePair]:
    """Build AU-mode training pairs.

    For every action unit, up to ``per_au_cap`` frames with nonzero intensity
    for that unit are selected, stratified proportionally to the intensity
    histogram (bins of one raw annotation unit, i.e. 0.2 after rescaling).
    ``zero_frames`` all-zero-label frames are pooled once on top. Every
    selected target is paired with a uniformly random frame of the same
    subject (possibly itself).
    """
    if manifest.label_mode != "au":
        raise ManifestError("sample_pairs_au requires an AU-mode manifest")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA0]))
    labels = manifest.labels()
    n_aus = labels.shape[1]

    targets: list[int] = []
    for au in range(n_aus):
        values = labels[:, au]
        nonzero = np.flatnonzero(values > 0.0)
        if nonzero.size == 0:
            logger.warning("AU index %d has no nonzero frames; skipping", au)
            continue
        if nonzero.size <= per_au_cap:
            chosen = nonzero
        else:
            bins = np.ceil(values[nonzero] * RAW_AU_MAX - 1e-9).astype(int)
            chosen = _stratified_take(nonzero, bins, per_au_cap, rng)
        targets.extend(int(i) for i in chosen)

    zero_idx = np.flatnonzero((labels == 0.0).all(axis=1))
    if zero_idx.size > zero_frames:
        zero_idx = np.sort(rng.choice(zero_idx, size=zero_frames, replace=False))
    targets.extend(int(i) for i in zero_idx)

    by_subject: dict[str, list[int]] = defaultdict(list)
    for i, row in enumerate(manifest.rows):
        by_subject[row.subject_id].append(i)

    pairs: list[FacePair] = []
    for t in targets:
        target = manifest.rows[t]
        pool = by_subject[target.subject_id]
        source = manifest.rows[pool[int(rng.integers(len(pool)))]]
        pairs.append(FacePair(source=source, target=target, label=target.label, subject_id=target.subject_id))
    return pairs


def sample_pairs_emotion(manifest: CorpusManifest, seed: int = 0) -> list[FacePair]:
    """Exhaustive emotion-mode pairing.

    Every image is paired, as a source, with each image of the same subject
    and gaze (one per emotion class, itself included), so a complete corpus
    of ``k`` images yields ``k * n_classes`` pairs. An incomplete
    (subject, gaze, emotion) grid is an error listing the holes.
    """
    if manifest.label_mode != "emotion":
        raise ManifestError("sample_pairs_emotion requires an emotion-mode manifest")
    n_classes = manifest.label_dim

    cells: dict[tuple[str, str], dict[int, ManifestRow]] = defaultdict(dict)
    for row in manifest.rows:
        one = np.flatnonzero(row.label == 1.0)
        if len(one) != 1 or row.label.sum() != 1.0:
            raise ManifestError(f"{row.image_path.name}: emotion pairing requires one-hot labels")
        emotion = int(one[0])
        cell = cells[(row.subject_id, row.gaze)]
        if emotion in cell:
            raise ManifestError(
                f"duplicate emotion {EMOTION_NAMES[emotion]} for subject {row.subject_id} gaze {row.gaze!r}"
            )
        cell[emotion] = row

    holes = [
        (subject, gaze, EMOTION_NAMES[e])
        for (subject, gaze), cell in sorted(cells.items())
        for e in range(n_classes)
        if e not in cell
    ]
    if holes:
        raise ManifestError(f"incomplete emotion grid, missing {len(holes)} images: {holes[:8]}")

    pairs: list[FacePair] = []
    for (subject, gaze), cell in sorted(cells.items()):
        ordered = [cell[e] for e in range(n_classes)]
        for source in ordered:
            for target in ordered:
                pairs.append(
                    FacePair(source=source, target=target, label=target.label, subject_id=subject)
                )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE0]))
    rng.shuffle(pairs)
    return pairs


# ---------------------------------------------------------------------------
# image io and normalization


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to an (H, W, 3) uint8 RGB array."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except Exception as exc:
        raise ManifestError(f"cannot decode image {path}: {exc}") from exc


def save_png(path: str | Path, image: np.ndarray) -> None:
    Image.fromarray(image, mode="RGB").save(path, format="PNG")


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample at pixel centers; a 2x downscale averages 2x2 blocks."""
    h, w = image.shape[:2]
    if (h, w) == (out_h, out_w):
        return image.astype(np.float32, copy=True)
    src = image.astype(np.float32)

    def axis_coords(n_in: int, n_out: int):
        pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
        hi = np.clip(lo + 1, 0, n_in - 1)
        frac = np.clip(pos - np.floor(pos), 0.0, 1.0).astype(np.float32)
        return lo, hi, frac

    y0, y1, fy = axis_coords(h, out_h)
    x0, x1, fx = axis_coords(w, out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def preprocess(image: np.ndarray | Image.Image) -> np.ndarray:
    """Uint8 RGB image of any size -> float32 (3, 32, 32) in [-1, 1]."""
    if isinstance(image, Image.Image):
        image = np.asarray(image.convert("RGB"))
    if image.ndim != 3 or image.shape[2] != 3:
        raise ManifestError(f"expected an (H, W, 3) RGB image, got shape {image.shape}")
    resized = resize_bilinear(image, IMG_SIZE, IMG_SIZE)
    scaled = resized * np.float32(2.0 / 255.0) - np.float32(1.0)
    return np.ascontiguousarray(scaled.transpose(2, 0, 1))


def postprocess(tensor: np.ndarray) -> np.ndarray:
    """Float (3, H, W) in [-1, 1] -> uint8 (H, W, 3); exact inverse of preprocess."""
    arr = np.asarray(tensor)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ManifestError(f"expected a (3, H, W) tensor, got shape {arr.shape}")
    clipped = np.clip(arr, -1.0, 1.0)
    scaled = (clipped + 1.0) * (255.0 / 2.0)
    return np.rint(scaled).astype(np.uint8).transpose(1, 2, 0)


def load_preprocessed(row: ManifestRow) -> np.ndarray:
    return preprocess(load_image(row.image_path))
