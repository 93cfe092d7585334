"""Deterministic toy video sequences for end-to-end tests.

Textured rectangles and discs move linearly across a textured background,
occluding each other by depth. Rendering produces RGB frames, ground-truth
instance label maps, per-pixel depth and a predicted foreground mask in which
scripted dropout events blank an object (ground truth stays intact).
"""

import json
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import io
from .geometry import CameraModel, DepthMap, PoseSE3

BACKGROUND_DEPTH = 50.0
NOISE_CELL = 8


class ValueNoise:
    """Smooth random RGB texture: random lattice values, smoothstep-interpolated."""

    def __init__(self, seed, extent, cell=NOISE_CELL, channels=3):
        rows = int(np.ceil(extent[0] / cell)) + 3
        cols = int(np.ceil(extent[1] / cell)) + 3
        rng = np.random.default_rng(seed)
        base = rng.uniform(0.2, 0.8, channels)
        self.grid = np.clip(base + rng.uniform(-0.2, 0.2, (rows, cols, channels)), 0, 1)
        self.cell = cell
        self.origin = (extent[0] / 2 + cell, extent[1] / 2 + cell)

    def __call__(self, r, c):
        """Sample at coordinates measured from the texture's centre."""
        gr = (np.asarray(r, dtype=np.float64) + self.origin[0]) / self.cell
        gc = (np.asarray(c, dtype=np.float64) + self.origin[1]) / self.cell
        nr, nc = self.grid.shape[:2]
        gr = np.clip(gr, 0, nr - 1 - 1e-9)
        gc = np.clip(gc, 0, nc - 1 - 1e-9)
        r0 = np.floor(gr).astype(int)
        c0 = np.floor(gc).astype(int)
        fr = gr - r0
        fc = gc - c0
        fr = (fr * fr * (3 - 2 * fr))[..., None]
        fc = (fc * fc * (3 - 2 * fc))[..., None]
        g = self.grid
        top = (1 - fc) * g[r0, c0] + fc * g[r0, c0 + 1]
        bottom = (1 - fc) * g[r0 + 1, c0] + fc * g[r0 + 1, c0 + 1]
        return (1 - fr) * top + fr * bottom


@dataclass
class SceneObject:
    id: int
    shape: str = "rect"
    size: tuple = (12.0, 16.0)       # (height, width) for rect, (radius,) for disc
    depth: float = 10.0
    position: tuple = (32.0, 48.0)   # (row, col) of the centre at frame 0
    velocity: tuple = (0.0, 0.0)     # (rows, cols) per frame
    texture_seed: int = 0

    def __post_init__(self):
        if self.shape not in ("rect", "disc"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if not 0 < self.id < 1000:
            raise ValueError("object ids must lie in [1, 999]")
        if self.depth <= 0:
            raise ValueError("object depth must be positive")
        self.size = tuple(float(s) for s in np.atleast_1d(self.size))
        self.position = tuple(float(p) for p in self.position)
        self.velocity = tuple(float(v) for v in self.velocity)

    @property
    def extent(self):
        if self.shape == "rect":
            return self.size[0], self.size[1]
        return 2 * self.size[0], 2 * self.size[0]

    def coverage(self, rows, cols, centre):
        dr = rows - centre[0]
        dc = cols - centre[1]
        if self.shape == "rect":
            return (np.abs(dr) <= self.size[0] / 2) & (np.abs(dc) <= self.size[1] / 2)
        return dr * dr + dc * dc <= self.size[0] ** 2


@dataclass
class SceneSpec:
    height: int = 64
    width: int = 96
    frames: int = 5
    objects: list = field(default_factory=list)
    camera: CameraModel = None
    camera_poses: list = None        # camera motion relative to frame 0, translation only
    dropout: list = field(default_factory=list)   # [(frame, object_id)]
    seed: int = 0

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("a scene needs at least one frame")
        if self.camera is None:
            self.camera = CameraModel(fx=float(self.width), fy=float(self.width),
                                      cx=(self.width - 1) / 2, cy=(self.height - 1) / 2)
        self.objects = [o if isinstance(o, SceneObject) else SceneObject(**o) for o in self.objects]
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("object ids must be unique")
        depths = [o.depth for o in self.objects]
        if len(set(depths)) != len(depths):
            raise ValueError("objects need distinct depths for a strict occlusion order")
        if self.camera_poses is not None:
            self.camera_poses = [p if isinstance(p, PoseSE3) else PoseSE3(**p)
                                 for p in self.camera_poses]
            if len(self.camera_poses) != self.frames:
                raise ValueError("need one camera pose per frame")
            for p in self.camera_poses:
                if np.any(np.asarray(p.rotation) != 0) or p.translation[2] != 0:
                    raise ValueError("camera motion is limited to x/y translation")
        self.dropout = [tuple(int(v) for v in d) for d in self.dropout]

    def to_dict(self):
        return {
            "height": self.height, "width": self.width, "frames": self.frames,
            "objects": [asdict(o) for o in self.objects],
            "camera": asdict(self.camera),
            "camera_poses": None if self.camera_poses is None else
            [{"rotation": list(p.rotation), "translation": list(p.translation)}
             for p in self.camera_poses],
            "dropout": [list(d) for d in self.dropout],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("camera") is not None:
            d["camera"] = CameraModel(**d["camera"])
        return cls(**d)


@dataclass
class RenderedSequence:
    rgb: np.ndarray         # (T, H, W, 3) in [0, 1]
    labels: np.ndarray      # (T, H, W) instance ids, 0 = background
    depth: np.ndarray       # (T, H, W) nearest-surface depth
    detections: np.ndarray  # (T, H, W) predicted foreground mask, dropouts blanked


def _parallax(spec, t, depth):
    if spec.camera_poses is None:
        return 0.0, 0.0
    tx, ty, _ = spec.camera_poses[t].translation
    return -spec.camera.fy * ty / depth, -spec.camera.fx * tx / depth


def render_sequence(spec):
    """Render every frame with a painter's algorithm (far to near)."""
    T, H, W = spec.frames, spec.height, spec.width
    rows, cols = np.mgrid[0:H, 0:W].astype(np.float64)
    background = ValueNoise(spec.seed, (H + 2 * H, W + 2 * W), cell=2 * NOISE_CELL)
    textures = {o.id: ValueNoise(o.texture_seed, o.extent) for o in spec.objects}
    rgb = np.empty((T, H, W, 3))
    labels = np.zeros((T, H, W), dtype=np.int64)
    depth = np.full((T, H, W), BACKGROUND_DEPTH)
    drops = set(spec.dropout)
    detections = np.zeros((T, H, W), dtype=bool)
    ever_visible = {o.id: False for o in spec.objects}
    order = sorted(spec.objects, key=lambda o: -o.depth)
    for t in range(T):
        pr, pc = _parallax(spec, t, BACKGROUND_DEPTH)
        rgb[t] = background(rows - H / 2 - pr, cols - W / 2 - pc)
        for obj in order:
            pr, pc = _parallax(spec, t, obj.depth)
            centre = (obj.position[0] + t * obj.velocity[0] + pr,
                      obj.position[1] + t * obj.velocity[1] + pc)
            cover = obj.coverage(rows, cols, centre)
            if not cover.any():
                continue
            rgb[t][cover] = textures[obj.id](rows[cover] - centre[0], cols[cover] - centre[1])
            labels[t][cover] = obj.id
            depth[t][cover] = obj.depth
        for obj in spec.objects:
            visible = labels[t] == obj.id
            ever_visible[obj.id] |= bool(visible.any())
            if (t, obj.id) not in drops:
                detections[t] |= visible
    for k, seen in ever_visible.items():
        if not seen:
            warnings.warn(f"object {k} is never visible", stacklevel=2)
    return RenderedSequence(rgb, labels, depth, detections)


# -- oracle embeddings ------------------------------------------------------------

@dataclass
class OracleEmbeddingSpec:
    means: dict                     # instance id -> p-vector
    sigma: float = 0.0
    drift: tuple = None             # p-vector added per frame
    seed: int = 0
    background: float = 1e3         # sentinel coordinate for background pixels

    def __post_init__(self):
        self.means = {int(k): np.asarray(v, dtype=np.float64) for k, v in self.means.items()}
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        dims = {len(v) for v in self.means.values()}
        if len(dims) > 1:
            raise ValueError("all means need the same dimension")

    @property
    def dim(self):
        return len(next(iter(self.means.values())))

    def to_dict(self):
        return {"means": {str(k): v.tolist() for k, v in self.means.items()},
                "sigma": self.sigma,
                "drift": None if self.drift is None else [float(v) for v in self.drift],
                "seed": self.seed, "background": self.background}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def min_separation(self):
        keys = list(self.means)
        d = [np.linalg.norm(self.means[a] - self.means[b])
             for i, a in enumerate(keys) for b in keys[i + 1:]]
        return min(d) if d else np.inf


def separated_means(ids, dim, rho_r, margin=1.2):
    """Means on scaled coordinate axes, pairwise ``margin * 2 rho_r`` apart."""
    ids = list(ids)
    if len(ids) > 2 * dim:
        raise ValueError("not enough dimensions for that many separated means")
    scale = margin * 2 * rho_r / np.sqrt(2)
    means = {}
    for i, k in enumerate(ids):
        v = np.zeros(dim)
        v[i // 2] = scale if i % 2 == 0 else -scale
        means[k] = v
    return means


def oracle_embeddings(labels, ospec):
    """Embedding field ``mean_k + t * drift + N(0, sigma^2)`` per instance pixel.

    Returns a ``(p, T, H, W)`` float64 array; background gets the sentinel.
    """
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    ids = [int(k) for k in np.unique(labels) if k != 0]
    missing = [k for k in ids if k not in ospec.means]
    if missing:
        raise ValueError(f"no target mean for instances {missing}")
    p = ospec.dim
    T, H, W = labels.shape
    rng = np.random.default_rng(ospec.seed)
    drift = np.zeros(p) if ospec.drift is None else np.asarray(ospec.drift, dtype=np.float64)
    y = np.full((p, T, H, W), ospec.background, dtype=np.float64)
    noise = rng.normal(0.0, ospec.sigma, (p, T, H, W)) if ospec.sigma > 0 else None
    for t in range(T):
        for k in ids:
            m = labels[t] == k
            if not m.any():
                continue
            y[:, t][:, m] = (ospec.means[k] + t * drift)[:, None]
            if noise is not None:
                y[:, t][:, m] += noise[:, t][:, m]
    return y


# -- geometry fixture -------------------------------------------------------------

def plane_fixture(cam, depth, baseline, seed=0, shape=(64, 96)):
    """Two views of a textured fronto-parallel plane.

    The plane sits at ``depth`` in the target camera. The returned pose maps
    target-camera points to source-camera points (a pure translation by
    ``baseline``), so a baseline ``(b, 0, 0)`` shifts the source image by
    ``fx * b / depth`` pixels.

    Returns ``(I_t, I_s, pose, DepthMap)``.
    """
    if depth <= 0:
        raise ValueError("plane depth must be positive")
    H, W = shape
    b = np.asarray(baseline, dtype=np.float64)
    if depth + b[2] <= 0:
        raise ValueError("plane is behind the source camera")
    tex = ValueNoise(seed, (4 * H, 4 * W), cell=2 * NOISE_CELL)
    v, u = np.mgrid[0:H, 0:W].astype(np.float64)

    def render(z_plane, shift):
        X = (u - cam.cx) / cam.fx * z_plane - shift[0]
        Y = (v - cam.cy) / cam.fy * z_plane - shift[1]
        # texture coordinates in target-image pixels
        return tex(Y * cam.fy / depth, X * cam.fx / depth)

    I_t = render(depth, np.zeros(3))
    I_s = render(depth + b[2], b)
    pose = PoseSE3(translation=b)
    return I_t, I_s, pose, DepthMap(np.full((H, W), float(depth)))


# -- files ------------------------------------------------------------------------

def write_sequence(out_dir, spec, seq, embeddings=None, embedding_spec=None):
    """Write frames, id maps, depth, predicted masks, optional embeddings and a manifest."""
    sub = {name: os.path.join(out_dir, name) for name in ("rgb", "labels", "depth", "masks")}
    if embeddings is not None:
        sub["embeddings"] = os.path.join(out_dir, "embeddings")
    for d in sub.values():
        os.makedirs(d, exist_ok=True)
    for t in range(spec.frames):
        stem = f"{t:06d}"
        io.write_ppm(os.path.join(sub["rgb"], stem + ".ppm"), seq.rgb[t])
        io.write_id_map(os.path.join(sub["labels"], stem + ".pgm"), seq.labels[t])
        io.write_pfm(os.path.join(sub["depth"], stem + ".pfm"), seq.depth[t])
        io.write_pgm(os.path.join(sub["masks"], stem + ".pgm"),
                     seq.detections[t].astype(np.uint8) * 255, maxval=255)
        if embeddings is not None:
            io.write_tensor(os.path.join(sub["embeddings"], stem + ".ste"), embeddings[:, t])
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        manifest = {"scene": spec.to_dict()}
        if embedding_spec is not None:
            manifest["embedding"] = embedding_spec.to_dict()
        json.dump(manifest, f, indent=2, sort_keys=True)


def occlusion_scenarios():
    """Named scenes for partial occlusion, missed detections and total occlusion.

    * ``partial``: a near rectangle sweeps across a far disc, covering part of it.
    * ``missed_detection``: three objects; one loses its detection for two
      consecutive frames.
    * ``total_occlusion``: a small far disc passes completely behind a large
      near rectangle and re-emerges.
    """
    return {
        "partial": SceneSpec(frames=8, seed=11, objects=[
            SceneObject(1, "rect", (20, 18), 10.0, (30, 15), (0, 8), texture_seed=1),
            SceneObject(2, "disc", (10,), 20.0, (32, 70), (0, -3), texture_seed=2),
        ]),
        "missed_detection": SceneSpec(frames=10, seed=12, objects=[
            SceneObject(1, "rect", (16, 20), 10.0, (18, 16), (1, 4), texture_seed=3),
            SceneObject(2, "disc", (9,), 15.0, (44, 76), (-1, -3), texture_seed=4),
            SceneObject(3, "rect", (10, 10), 25.0, (50, 20), (0, 1), texture_seed=5),
        ], dropout=[(3, 1), (4, 1)]),
        "total_occlusion": SceneSpec(frames=8, seed=13, objects=[
            SceneObject(1, "rect", (30, 24), 8.0, (32, 48), (0, 0), texture_seed=6),
            SceneObject(2, "disc", (7,), 20.0, (32, 12), (0, 8), texture_seed=7),
        ]),
    }
