"""Child-network evaluators: what a sampled architecture is worth.

Three evaluators share the ``evaluator(arch) -> reward`` calling convention:

* :class:`SurrogateEvaluator` scores the wiring itself with a closed-form
  formula, which makes the search loop testable against enumeration;
* :class:`MicroDetEvaluator` instantiates the architecture on a fixed
  four-channel filter-bank pyramid, trains a per-cell logistic objectness
  head and returns mAP on held-out images;
* :class:`ExternalEvaluator` delegates to another process over
  newline-delimited JSON.
"""

from __future__ import annotations

import json
import math
import queue
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .archspace import NUM_BACKBONE, Architecture, MergeOp, encode, longest_path, reachable_backbone
from .detectmetrics import Detection, EvalConfig, extract_boxes, mean_ap, nms
from .errors import ExternalMalformedReply, ExternalTimeout, ImageTooSmall, NonFiniteLoss
from .geometry import BBox, polygon_bbox

PYRAMID_LEVELS = (2, 3, 4, 5)
MIN_IMAGE_SIDE = 32


# --------------------------------------------------------------------------
# surrogate


@dataclass(frozen=True)
class SurrogateSpec:
    w_cov: float = 0.5
    w_bal: float = 0.3
    w_depth: float = 0.2

    def __post_init__(self):
        if abs(self.w_cov + self.w_bal + self.w_depth - 1.0) > 1e-12:
            raise ValueError("surrogate weights must sum to 1")


def surrogate_reward(arch: Architecture, spec: SurrogateSpec = SurrogateSpec()) -> float:
    """Backbone coverage, SUM/POOL balance and depth, weighted."""
    T = len(arch)
    n_sum = sum(1 for b in arch.blocks if b.op is MergeOp.SUM)
    coverage = len(reachable_backbone(arch)) / NUM_BACKBONE
    balance = 1.0 - abs(n_sum - (T - n_sum)) / T
    depth = longest_path(arch) / T
    return spec.w_cov * coverage + spec.w_bal * balance + spec.w_depth * depth


class SurrogateEvaluator:
    def __init__(self, spec: SurrogateSpec = SurrogateSpec()):
        self.spec = spec

    def __call__(self, arch: Architecture) -> float:
        return surrogate_reward(arch, self.spec)


# --------------------------------------------------------------------------
# feature pyramid and assembly


@dataclass
class FeaturePyramid:
    levels: list[np.ndarray]  # P2..P5, each (rows, cols, C)

    def __post_init__(self):
        if len(self.levels) != len(PYRAMID_LEVELS):
            raise ValueError(f"expected {len(PYRAMID_LEVELS)} levels, got {len(self.levels)}")

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [lvl.shape[:2] for lvl in self.levels]


def _avg_pool2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[:2]
    if h % 2 or w % 2:
        x = np.pad(x, ((0, h % 2), (0, w % 2), (0, 0)), mode="edge")
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def base_features(image: np.ndarray) -> np.ndarray:
    """Full-resolution filter bank: intensity, |d/dx|, |d/dy|, 3x3 local std; all in [0, 1]."""
    img = np.asarray(image, dtype=float)
    gy, gx = np.gradient(img)
    mean = ndimage.uniform_filter(img, 3, mode="nearest")
    sq = ndimage.uniform_filter(img * img, 3, mode="nearest")
    std = np.sqrt(np.clip(sq - mean * mean, 0.0, None))
    feats = np.stack([img, np.abs(gx), np.abs(gy), std], axis=-1)
    lo = feats.min(axis=(0, 1))
    span = feats.max(axis=(0, 1)) - lo
    return (feats - lo) / np.where(span > 0, span, 1.0)


def build_pyramid(image: np.ndarray) -> FeaturePyramid:
    img = np.asarray(image)
    if img.ndim != 2 or min(img.shape) < MIN_IMAGE_SIDE:
        raise ImageTooSmall(f"image must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {img.shape}")
    x = base_features(img)
    levels = []
    for k in range(1, PYRAMID_LEVELS[-1] + 1):
        x = _avg_pool2(x)
        if k >= PYRAMID_LEVELS[0]:
            levels.append(x)
    return FeaturePyramid(levels)


def resize_nearest(x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = x.shape[:2]
    if (h, w) == tuple(shape):
        return x
    rows = (np.arange(shape[0]) * h) // shape[0]
    cols = (np.arange(shape[1]) * w) // shape[1]
    return x[rows[:, None], cols[None, :]]


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def merge(op: MergeOp, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Merge ``b`` into ``a``'s grid. POOL gates ``b`` by the sigmoid of ``a``'s channel means."""
    b = resize_nearest(b, a.shape[:2])
    if op is MergeOp.SUM:
        return a + b
    gate = sigmoid(a.mean(axis=(0, 1)))
    return a + b * gate


def assemble(arch: Architecture, pyr: FeaturePyramid, with_level: bool = False):
    """Evaluate the blocks in order and return the newest map.

    With ``with_level`` also returns the pyramid level whose grid the output
    lives on (each block inherits ``input_a``'s grid).
    """
    maps = list(pyr.levels)
    levels = list(PYRAMID_LEVELS)
    for blk in arch.blocks:
        maps.append(merge(blk.op, maps[blk.input_a], maps[blk.input_b]))
        levels.append(levels[blk.input_a])
    if with_level:
        return maps[-1], levels[-1]
    return maps[-1]


# --------------------------------------------------------------------------
# micro-detector


@dataclass(frozen=True)
class MicroDetConfig:
    channels: int = 4
    train_lr: float = 2.0
    train_iters: int = 300
    pos_weight: float = 4.0
    det_threshold: float = 0.5
    nms_iou: float = 0.5

    def __post_init__(self):
        if not self.train_lr > 0:
            raise ValueError("train_lr must be > 0")
        if self.train_iters < 0:
            raise ValueError("train_iters must be >= 0")


@dataclass
class Head:
    """Per-cell logistic objectness: ``sigmoid(((f - shift) / scale) @ weights + bias)``.

    ``shift``/``scale`` standardize the assembled channels with training-set
    statistics and stay fixed during SGD; only ``weights`` and ``bias`` learn.
    """

    weights: np.ndarray  # (C,)
    bias: float
    shift: np.ndarray = None
    scale: np.ndarray = None

    def __post_init__(self):
        c = len(self.weights)
        self.shift = np.zeros(c) if self.shift is None else np.asarray(self.shift, dtype=float)
        self.scale = np.ones(c) if self.scale is None else np.asarray(self.scale, dtype=float)

    def as_vector(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    def standardize(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.shift) / self.scale

    def to_json(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "shift": self.shift.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_json(cls, doc) -> "Head":
        return cls(np.asarray(doc["weights"], dtype=float), float(doc["bias"]),
                   doc.get("shift"), doc.get("scale"))


def cell_labels(grid_shape: tuple[int, int], cell_scale: float, boxes: Sequence[BBox]) -> np.ndarray:
    """1 for cells whose center falls inside any box, else 0."""
    rows, cols = grid_shape
    cy = (np.arange(rows) + 0.5) * cell_scale
    cx = (np.arange(cols) + 0.5) * cell_scale
    lab = np.zeros(grid_shape)
    for b in boxes:
        inside_r = (cy >= b.y_min) & (cy <= b.y_max)
        inside_c = (cx >= b.x_min) & (cx <= b.x_max)
        lab[np.ix_(inside_r, inside_c)] = 1.0
    return lab


def head_loss_and_grad(vec: np.ndarray, feats: np.ndarray, labels: np.ndarray, pos_weight: float = 1.0):
    """Mean weighted logistic loss over cells and its gradient w.r.t. ``[weights, bias]``."""
    X = feats.reshape(-1, feats.shape[-1])
    y = labels.reshape(-1)
    z = X @ vec[:-1] + vec[-1]
    wts = np.where(y > 0, pos_weight, 1.0)
    # log(1 + exp(-z)) and log(1 + exp(z)), overflow-safe
    loss_pos = np.logaddexp(0.0, -z)
    loss_neg = np.logaddexp(0.0, z)
    loss = float(np.mean(wts * (y * loss_pos + (1 - y) * loss_neg)))
    dz = wts * (sigmoid(z) - y) / len(y)
    grad = np.append(X.T @ dz, dz.sum())
    return loss, grad


@dataclass
class PreparedImage:
    feats: np.ndarray
    labels: np.ndarray
    gts: list[BBox]
    cell_scale: float


def gt_boxes(sample) -> list[BBox]:
    return [polygon_bbox(p) for p in sample.burr_polygons]


def prepare(arch: Architecture, pyramids: Sequence[FeaturePyramid], samples) -> list[PreparedImage]:
    out = []
    for pyr, s in zip(pyramids, samples):
        feats, level = assemble(arch, pyr, with_level=True)
        scale = float(2**level)
        boxes = gt_boxes(s)
        out.append(PreparedImage(feats, cell_labels(feats.shape[:2], scale, boxes), boxes, scale))
    return out


def feature_stats(prepared: Sequence[PreparedImage]) -> tuple[np.ndarray, np.ndarray]:
    cells = np.concatenate([p.feats.reshape(-1, p.feats.shape[-1]) for p in prepared])
    std = cells.std(axis=0)
    return cells.mean(axis=0), np.where(std > 1e-12, std, 1.0)


def train_head(prepared: Sequence[PreparedImage], cfg: MicroDetConfig, seed: int) -> Head:
    """Single-image SGD steps, cycling through a seeded shuffle of the images."""
    vec = np.zeros(cfg.channels + 1)
    if cfg.train_iters == 0 or not prepared:
        return Head(vec[:-1], float(vec[-1]))
    shift, scale = feature_stats(prepared)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(prepared))
    for it in range(cfg.train_iters):
        if it and it % len(prepared) == 0:
            order = rng.permutation(len(prepared))
        p = prepared[order[it % len(prepared)]]
        loss, grad = head_loss_and_grad(vec, (p.feats - shift) / scale, p.labels, cfg.pos_weight)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NonFiniteLoss(f"non-finite loss {loss} at step {it}; weights {vec.tolist()}")
        vec = vec - cfg.train_lr * grad
    return Head(vec[:-1].copy(), float(vec[-1]), shift, scale)


def train_microdet(arch: Architecture, cfg: MicroDetConfig, train, seed: int,
                   pyramids: Sequence[FeaturePyramid] | None = None) -> Head:
    samples = list(train)
    if not samples:
        raise ValueError("training set is empty")
    if pyramids is None:
        pyramids = [build_pyramid(s.image) for s in samples]
    return train_head(prepare(arch, pyramids, samples), cfg, seed)


def probability_map(head: Head, feats: np.ndarray) -> np.ndarray:
    return sigmoid(head.standardize(feats) @ head.weights + head.bias)


def detect_prepared(head: Head, p: PreparedImage, cfg: MicroDetConfig) -> list[Detection]:
    prob = probability_map(head, p.feats)
    return nms(extract_boxes(prob, p.cell_scale, cfg.det_threshold), cfg.nms_iou)


def detect(arch: Architecture, head: Head, image: np.ndarray, cfg: MicroDetConfig = MicroDetConfig(),
           pyramid: FeaturePyramid | None = None) -> list[Detection]:
    pyr = pyramid if pyramid is not None else build_pyramid(image)
    feats, level = assemble(arch, pyr, with_level=True)
    p = PreparedImage(feats, np.zeros(feats.shape[:2]), [], float(2**level))
    return detect_prepared(head, p, cfg)


class MicroDetEvaluator:
    """Train on ``train`` samples, reward = mAP on ``holdout`` samples (polar images)."""

    def __init__(self, train, holdout, cfg: MicroDetConfig = MicroDetConfig(), seed: int = 0,
                 eval_cfg: EvalConfig = EvalConfig()):
        self.train = list(train)
        self.holdout = list(holdout)
        if not self.train or not self.holdout:
            raise ValueError("micro-detector evaluation needs non-empty train and holdout sets")
        self.cfg = cfg
        self.seed = seed
        self.eval_cfg = eval_cfg
        self._train_pyr = [build_pyramid(s.image) for s in self.train]
        self._hold_pyr = [build_pyramid(s.image) for s in self.holdout]
        self.cache: dict[str, float] = {}

    def __call__(self, arch: Architecture) -> float:
        key = encode(arch)
        if key not in self.cache:
            head = train_head(prepare(arch, self._train_pyr, self.train), self.cfg, self.seed)
            hold = prepare(arch, self._hold_pyr, self.holdout)
            dets = [detect_prepared(head, p, self.cfg) for p in hold]
            self.cache[key] = mean_ap(dets, [p.gts for p in hold], self.eval_cfg)
        return self.cache[key]


# --------------------------------------------------------------------------
# external process


class ExternalEvaluator:
    """Newline-delimited JSON request/reply with a child process.

    Request ``{"id", "arch", "child_iters"}``; reply ``{"id", "reward"}``.
    """

    def __init__(self, command: Sequence[str], child_iters: int = 3000, timeout: float = 600.0):
        self.command = list(command)
        self.child_iters = child_iters
        self.timeout = timeout
        self._next_id = 0
        self._proc = None
        self._lines: queue.Queue = queue.Queue()

    def _start(self):
        self._proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )
        threading.Thread(target=self._pump, args=(self._proc.stdout,), daemon=True).start()

    def _pump(self, stream):
        for line in stream:
            self._lines.put(line)
        self._lines.put(None)

    def __call__(self, arch: Architecture) -> float:
        if self._proc is None:
            self._start()
        req_id = self._next_id
        self._next_id += 1
        request = {"id": req_id, "arch": encode(arch), "child_iters": self.child_iters}
        try:
            self._proc.stdin.write(json.dumps(request) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ExternalMalformedReply(f"evaluator process is not accepting requests: {exc}") from exc
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self._proc.kill()
            self.close()
            raise ExternalTimeout(f"no reply to request {req_id} within {self.timeout} s") from None
        if line is None:
            raise ExternalMalformedReply(f"evaluator exited before answering request {req_id}")
        try:
            reply = json.loads(line)
            rid, reward = reply["id"], float(reply["reward"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise ExternalMalformedReply(f"unparseable reply {line.strip()!r}") from None
        if rid != req_id:
            raise ExternalMalformedReply(f"reply id {rid} does not match request id {req_id}")
        if not 0.0 <= reward <= 1.0:
            raise ExternalMalformedReply(f"reward {reward} outside [0, 1]")
        return reward

    def close(self):
        if self._proc is not None:
            if self._proc.stdin:
                try:
                    self._proc.stdin.close()
                except OSError:
                    pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


EVALUATOR_KINDS = ("surrogate", "microdet", "external")


def evaluate_child(arch: Architecture, kind: str, context=None) -> float:
    """Dispatch on evaluator kind. ``context`` is the evaluator instance (or spec for surrogate)."""
    if kind == "surrogate":
        spec = context if isinstance(context, SurrogateSpec) else SurrogateSpec()
        return surrogate_reward(arch, spec)
    if kind in ("microdet", "external"):
        if context is None:
            raise ValueError(f"{kind} evaluation needs an evaluator instance as context")
        return float(context(arch))
    raise ValueError(f"unknown evaluator kind {kind!r}; expected one of {EVALUATOR_KINDS}")
