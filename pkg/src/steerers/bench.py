"""Synthetic rotation benchmark: textures, rotated pairs and correct-match ratios."""
from __future__ import annotations

import csv
import functools
import io as _io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy import ndimage

from . import descriptor as desc
from .fit import CorrespondenceBatch, fit_steerer_anchored
from .group_reps import PlanarRotation, Steerer
from .io import load_pgm
from .matcher import STRATEGIES, MatcherConfig, MatchSet

log = logging.getLogger(__name__)

MODES = {"quarter": 90, "deca": 10}
MIN_SIZE = 64
# keypoints stay inside this disk margin so rotated patches remain in the valid region
DISK_MARGIN = 14
N_BUNDLED = 10
DECA_ORDER = 36
DECA_TRAIN_SEED = 7919


def make_texture(seed: int, size: int = 128) -> np.ndarray:
    """Seeded value noise over three octaves plus random rectangles and edges."""
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size))
    for cells, weight in ((4, 0.5), (8, 0.3), (16, 0.2)):
        grid = rng.random((cells + 1, cells + 1))
        img += weight * ndimage.zoom(grid, size / (cells + 1), order=3, mode="nearest")[:size, :size]
    for _ in range(int(rng.integers(12, 20))):
        h, w = rng.integers(6, size // 3, size=2)
        r, c = rng.integers(0, size - 4, size=2)
        img[r:r + h, c:c + w] = 0.6 * img[r:r + h, c:c + w] + 0.4 * rng.random()
    for _ in range(4):
        a, b = rng.normal(size=2)
        yy, xx = np.mgrid[0:size, 0:size]
        img += 0.15 * ((a * xx + b * yy + rng.uniform(-size, size)) > 0)
    img -= img.min()
    img /= img.max()
    return np.round(img * 255) / 255


def bundled_textures() -> list[np.ndarray]:
    root = resources.files("steerers") / "data"
    return [load_pgm(root / f"texture_{i:02d}.pgm") for i in range(N_BUNDLED)]


def bundled_path(name: str):
    return resources.files("steerers") / "data" / name


@dataclass(frozen=True)
class BenchConfig:
    rotation_mode: str = "quarter"
    thresholds_px: tuple[float, ...] = (3.0, 5.0, 10.0)
    max_keypoints: int = 256
    strategy: str = "max-matches"
    seed: int = 0
    matcher: MatcherConfig = field(default_factory=MatcherConfig)

    def __post_init__(self):
        if self.rotation_mode not in MODES:
            raise ValueError(f"rotation_mode must be one of {sorted(MODES)}")
        th = tuple(float(t) for t in self.thresholds_px)
        if not th or any(t <= 0 for t in th) or any(a >= b for a, b in zip(th, th[1:])):
            raise ValueError("thresholds must be positive and strictly ascending")
        object.__setattr__(self, "thresholds_px", th)
        if self.max_keypoints < 1:
            raise ValueError("max_keypoints must be positive")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {sorted(STRATEGIES)}")

    @property
    def angles_deg(self) -> list[int]:
        step = MODES[self.rotation_mode]
        return list(range(0, 360, step))


def generate_pair(img, angle_deg: float, cfg: BenchConfig | None = None):
    """Return ``(img, rotated img, ground truth rotation about the centre)``."""
    cfg = cfg or BenchConfig()
    img = desc.check_image(img)
    if img.shape[0] != img.shape[1]:
        raise ValueError("benchmark images must be square")
    if cfg.rotation_mode == "quarter":
        if angle_deg % 90:
            raise ValueError("quarter mode only supports multiples of 90 degrees")
        k = int(angle_deg // 90)
        return img, desc.rotate_image_quarter(img, k), PlanarRotation.quarter(k)
    rot = PlanarRotation(math.radians(angle_deg))
    return img, desc.rotate_image_continuous(img, rot.angle), rot


def _radius(img) -> float:
    return img.shape[0] / 2 - DISK_MARGIN


def _features(img, cfg: BenchConfig):
    kps = desc.detect_keypoints(img, cfg.max_keypoints, radius=_radius(img))
    return kps, np.asarray(desc.describe(img, kps))


def _deca_training_batch(seed: int, n_images: int = 12) -> CorrespondenceBatch:
    batch = CorrespondenceBatch()
    imgs = [make_texture(DECA_TRAIN_SEED + 100 * seed + i) for i in range(n_images)]
    for step in range(1, DECA_ORDER // 2 + 1):
        before, after = [], []
        for img in imgs:
            kps = desc.detect_keypoints(img, 128, radius=_radius(img))
            _, img2, rot = generate_pair(img, 10 * step, BenchConfig(rotation_mode="deca"))
            before.append(np.asarray(desc.describe(img, kps)))
            after.append(np.asarray(desc.describe(img2, desc.rotate_keypoints(kps, rot))))
        batch.add(np.hstack(before), np.hstack(after), k=step)
    return batch


@functools.lru_cache(maxsize=4)
def default_deca_steerer(seed: int = 0) -> Steerer:
    """C36 steerer fitted on textures disjoint from the bundled benchmark images.

    The quarter-turn power (k = 9) is anchored, since quarter turns are the
    rotations under which the descriptor is exactly equivariant.
    """
    return fit_steerer_anchored(_deca_training_batch(seed), DECA_ORDER, DECA_ORDER // 4).steerer


def default_steerer(cfg: BenchConfig) -> Steerer:
    if cfg.rotation_mode == "quarter":
        return desc.upsift_steerer()
    return default_deca_steerer(cfg.seed)


def run_matcher(strategy: str, y1, y2, s: Steerer | None, cfg: MatcherConfig) -> MatchSet:
    fn = STRATEGIES[strategy]
    if s is None and strategy != "dual-softmax":
        raise ValueError(f"strategy {strategy!r} needs a steerer")
    return fn(y1, y2, s, cfg)


@dataclass
class BenchResult:
    config: BenchConfig
    rows: list[dict]
    steering: dict[int, list]
    skipped: list[dict]
    timings: dict[str, float]

    @property
    def aggregate(self) -> dict[float, float]:
        out = {}
        for t in self.config.thresholds_px:
            vals = [r["ratio"] for r in self.rows if r["threshold_px"] == t]
            out[t] = float(np.mean(vals)) if vals else 0.0
        return out

    def ratio(self, angle_deg: int, threshold: float) -> float:
        return self.row(angle_deg, threshold)["ratio"]

    def row(self, angle_deg: int, threshold: float) -> dict:
        for r in self.rows:
            if r["angle_deg"] == angle_deg and r["threshold_px"] == threshold:
                return r
        raise KeyError((angle_deg, threshold))

    def to_dict(self, include_timings: bool = False) -> dict:
        cfg = self.config
        out = {
            "config": {
                "rotation_mode": cfg.rotation_mode,
                "thresholds_px": list(cfg.thresholds_px),
                "max_keypoints": cfg.max_keypoints,
                "strategy": cfg.strategy,
                "seed": cfg.seed,
                "inverse_temperature": cfg.matcher.inverse_temperature,
                "similarity_threshold": cfg.matcher.similarity_threshold,
                "subset_size": cfg.matcher.subset_size,
            },
            "angles": [
                {
                    "angle_deg": a,
                    "steering_power_per_image": self.steering[a],
                    "thresholds": [
                        {k: r[k] for k in ("threshold_px", "n_matches", "n_correct", "ratio")}
                        for r in self.rows if r["angle_deg"] == a
                    ],
                }
                for a in cfg.angles_deg
            ],
            "aggregate": {str(t): v for t, v in self.aggregate.items()},
            "skipped": self.skipped,
        }
        if include_timings:
            out["timings_s"] = self.timings
        return out

    def to_json(self, include_timings: bool = False) -> str:
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = _io.StringIO()
        cols = ["angle_deg", "threshold_px", "n_matches", "n_correct", "ratio"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({c: r[c] for c in cols})
        return buf.getvalue()


def run_benchmark(images, cfg: BenchConfig | None = None, steerer: Steerer | None = None) -> BenchResult:
    """Detect, describe, match and score every image at every angle of the mode.

    A match (i, j) is correct at threshold t when the ground-truth rotation of
    keypoint i of the first image lies within t pixels of keypoint j of the
    second image. Match and correct counts are summed over images per angle.
    """
    cfg = cfg or BenchConfig()
    images = list(images)
    if not images:
        raise ValueError("empty image list")
    if steerer is None and cfg.strategy != "dual-softmax":
        steerer = default_steerer(cfg)
    timings = {"detect_describe": 0.0, "match": 0.0, "score": 0.0}
    skipped = []
    usable = []
    for idx, img in enumerate(images):
        img = desc.check_image(img)
        if img.shape[0] != img.shape[1] or img.shape[0] < MIN_SIZE:
            log.warning("skipping image %d with shape %s", idx, img.shape)
            skipped.append({"image": idx, "shape": list(img.shape),
                            "reason": f"needs a square image of at least {MIN_SIZE}x{MIN_SIZE}"})
            continue
        usable.append((idx, img))
    th = np.asarray(cfg.thresholds_px)
    rows, steering = [], {}
    for angle in cfg.angles_deg:
        n_matches = 0
        n_correct = np.zeros(len(th), dtype=np.int64)
        steering[angle] = []
        for _, img in usable:
            t0 = time.perf_counter()
            img1, img2, rot = generate_pair(img, angle, cfg)
            k1, y1 = _features(img1, cfg)
            k2, y2 = _features(img2, cfg)
            t1 = time.perf_counter()
            m = run_matcher(cfg.strategy, y1, y2, steerer, cfg.matcher)
            t2 = time.perf_counter()
            if len(m):
                gt = desc.rotate_keypoints(k1[:, m.pairs[:, 0]], rot)
                err = np.linalg.norm(gt - k2[:, m.pairs[:, 1]], axis=0)
                n_correct += np.sum(err[None, :] <= th[:, None], axis=1)
            n_matches += len(m)
            steering[angle].append(m.steering_power)
            timings["detect_describe"] += t1 - t0
            timings["match"] += t2 - t1
            timings["score"] += time.perf_counter() - t2
        for t, c in zip(cfg.thresholds_px, n_correct):
            rows.append({"angle_deg": angle, "threshold_px": t, "n_matches": int(n_matches),
                         "n_correct": int(c), "ratio": float(c / n_matches) if n_matches else 0.0})
    return BenchResult(cfg, rows, steering, skipped, timings)
