"""Datasets of fixed-size point clouds: synthetic shapes, normalisation,
train/val/test splits and shuffled mini-batches."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigError, DegenerateScaleError, DimensionError, EmptyInputError

PRIMITIVES = ("sphere", "box", "cylinder", "torus", "cone", "composite")
SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    """``clouds`` is a float32 array ``[count, K, 3]``."""

    clouds: np.ndarray
    labels: np.ndarray | None = None
    split: np.ndarray | None = None
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.clouds = np.asarray(self.clouds, dtype=np.float32)
        if self.clouds.ndim != 3 or self.clouds.shape[2] != 3:
            raise DimensionError(f"clouds must be [count, K, 3], got {list(self.clouds.shape)}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.split is not None:
            self.split = np.asarray(self.split, dtype="<U5")

    def __len__(self):
        return self.clouds.shape[0]

    @property
    def n_points(self):
        return self.clouds.shape[1]

    def indices(self, split=None):
        if split is None or split == "all":
            return np.arange(len(self))
        if self.split is None:
            raise ConfigError("dataset has no split assignment")
        return np.nonzero(self.split == split)[0]

    def subset(self, split):
        idx = self.indices(split)
        return Dataset(self.clouds[idx],
                       None if self.labels is None else self.labels[idx],
                       None if self.split is None else self.split[idx],
                       dict(self.manifest))


# ---------------------------------------------------------------- normalisation

def normalize(cloud):
    """Centre on the centroid and scale so the farthest point sits at radius 1."""
    pts = np.asarray(cloud)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DimensionError(f"cloud must be [N, 3], got {list(pts.shape)}")
    if pts.shape[0] == 0:
        raise EmptyInputError("cannot normalise an empty cloud")
    p64 = pts.astype(np.float64)
    centred = p64 - p64.mean(axis=0)
    radius = np.sqrt((centred * centred).sum(axis=1)).max()
    # rounding in the mean leaves ulp-sized residue when all points coincide
    if radius <= 64 * np.finfo(np.float64).eps * np.abs(p64).max():
        raise DegenerateScaleError("cloud collapses to a single point")
    out = centred / radius
    return out.astype(pts.dtype if np.issubdtype(pts.dtype, np.floating) else np.float64)


# ---------------------------------------------------------------- synthetic shapes

@dataclass
class ShapeRecipe:
    """A primitive surface with size parameters and a rigid pose.

    ``params`` by primitive: sphere ``radius``; box ``size`` (3 edge
    lengths); cylinder and cone ``radius``, ``height``; torus ``major``,
    ``minor``; composite ``parts`` (a list of ShapeRecipe in the parent frame).
    ``rotation`` is an xyz Euler triple in radians.
    """

    primitive: str
    params: dict = field(default_factory=dict)
    rotation: tuple = (0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)
    seed: int | None = None
    label: int | None = None

    def __post_init__(self):
        if self.primitive not in PRIMITIVES:
            raise ConfigError(f"unknown primitive {self.primitive!r}")
        _validate_params(self)

    def to_dict(self):
        d = asdict(self)
        if self.primitive == "composite":
            d["params"] = {"parts": [p.to_dict() for p in self.params["parts"]]}
        return d


def _positive(recipe, *names):
    for name in names:
        val = recipe.params.get(name)
        if val is None or np.any(np.asarray(val, dtype=float) <= 0):
            raise ConfigError(f"{recipe.primitive} needs positive {name!r}, got {val!r}")


def _validate_params(r):
    if r.primitive == "sphere":
        _positive(r, "radius")
    elif r.primitive == "box":
        _positive(r, "size")
        if np.asarray(r.params["size"]).shape != (3,):
            raise ConfigError("box size must have three edge lengths")
    elif r.primitive in ("cylinder", "cone"):
        _positive(r, "radius", "height")
    elif r.primitive == "torus":
        _positive(r, "major", "minor")
        if r.params["minor"] >= r.params["major"]:
            raise ConfigError("torus minor radius must be smaller than the major radius")
    else:
        parts = r.params.get("parts")
        if not parts:
            raise ConfigError("composite needs at least one part")
        for i, part in enumerate(parts):
            if isinstance(part, dict):
                parts[i] = ShapeRecipe(**part)


def surface_area(r):
    p = r.params
    if r.primitive == "sphere":
        return 4 * math.pi * p["radius"] ** 2
    if r.primitive == "box":
        a, b, c = p["size"]
        return 2 * (a * b + b * c + a * c)
    if r.primitive == "cylinder":
        return 2 * math.pi * p["radius"] * p["height"] + 2 * math.pi * p["radius"] ** 2
    if r.primitive == "cone":
        slant = math.hypot(p["radius"], p["height"])
        return math.pi * p["radius"] * slant + math.pi * p["radius"] ** 2
    if r.primitive == "torus":
        return 4 * math.pi ** 2 * p["major"] * p["minor"]
    return sum(surface_area(q) for q in p["parts"])


def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_sphere(p, k, rng):
    # antithetic pairs (and one zero-sum triple for odd k) keep the centroid
    # exactly at the centre, so normalisation maps every point to radius 1
    r = p["radius"]
    if k == 1:
        return r * _unit_vectors(rng, 1)
    parts = []
    if k % 2:
        u, w = _unit_vectors(rng, 2)
        w = w - (w @ u) * u
        w /= np.linalg.norm(w)
        ang = np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
        parts.append(np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * w)
        k -= 3
    half = _unit_vectors(rng, k // 2)
    parts.append(np.concatenate([half, -half]))
    return r * np.concatenate(parts)


def _split_counts(areas, k, rng):
    areas = np.asarray(areas, dtype=np.float64)
    return rng.multinomial(k, areas / areas.sum())


def _sample_box(p, k, rng):
    size = np.asarray(p["size"], dtype=np.float64)
    half = size / 2
    a, b, c = size
    # faces: -x, +x, -y, +y, -z, +z
    counts = _split_counts([b * c, b * c, a * c, a * c, a * b, a * b], k, rng)
    out = []
    for face, n in enumerate(counts):
        axis, sign = divmod(face, 2)
        pts = rng.uniform(-half, half, size=(n, 3))
        pts[:, axis] = half[axis] if sign else -half[axis]
        out.append(pts)
    return np.concatenate(out)


def _disk(radius, n, z, rng):
    rad = radius * np.sqrt(rng.uniform(size=n))
    th = rng.uniform(0, 2 * np.pi, size=n)
    return np.stack([rad * np.cos(th), rad * np.sin(th), np.full(n, z)], axis=1)


def _sample_cylinder(p, k, rng):
    r, h = p["radius"], p["height"]
    n_side, n_bot, n_top = _split_counts([2 * np.pi * r * h, np.pi * r * r, np.pi * r * r], k, rng)
    th = rng.uniform(0, 2 * np.pi, size=n_side)
    side = np.stack([r * np.cos(th), r * np.sin(th), rng.uniform(-h / 2, h / 2, n_side)], axis=1)
    return np.concatenate([side, _disk(r, n_bot, -h / 2, rng), _disk(r, n_top, h / 2, rng)])


def _sample_cone(p, k, rng):
    r, h = p["radius"], p["height"]
    slant = math.hypot(r, h)
    n_side, n_base = _split_counts([np.pi * r * slant, np.pi * r * r], k, rng)
    t = np.sqrt(rng.uniform(size=n_side))  # fraction of the way from apex to rim
    th = rng.uniform(0, 2 * np.pi, size=n_side)
    side = np.stack([r * t * np.cos(th), r * t * np.sin(th), h * (1 - t)], axis=1)
    return np.concatenate([side, _disk(r, n_base, 0.0, rng)])


def _sample_torus(p, k, rng):
    R, r = p["major"], p["minor"]
    out = []
    need = k
    while need > 0:
        m = max(2 * need, 16)
        u = rng.uniform(0, 2 * np.pi, m)
        v = rng.uniform(0, 2 * np.pi, m)
        # area element is proportional to R + r cos v
        keep = rng.uniform(size=m) < (R + r * np.cos(v)) / (R + r)
        u, v = u[keep][:need], v[keep][:need]
        ring = R + r * np.cos(v)
        out.append(np.stack([ring * np.cos(u), ring * np.sin(u), r * np.sin(v)], axis=1))
        need -= u.size
    return np.concatenate(out)


def _sample_composite(p, k, rng):
    parts = p["parts"]
    counts = _split_counts([surface_area(q) for q in parts], k, rng)
    return np.concatenate([sample_surface(q, n, rng) for q, n in zip(parts, counts)])


_SAMPLERS = {
    "sphere": _sample_sphere,
    "box": _sample_box,
    "cylinder": _sample_cylinder,
    "cone": _sample_cone,
    "torus": _sample_torus,
    "composite": _sample_composite,
}


def sample_surface(recipe, k, rng):
    """``k`` area-uniform surface samples of ``recipe`` in its posed frame (float64)."""
    if k == 0:
        return np.zeros((0, 3))
    local = _SAMPLERS[recipe.primitive](recipe.params, k, rng)
    rot = Rotation.from_euler("xyz", recipe.rotation).as_matrix()
    return local @ rot.T + np.asarray(recipe.translation, dtype=np.float64)


def generate_synthetic(recipes, K, seed=0, normalized=True):
    """Sample ``K`` points from each recipe. Deterministic in ``(recipes, seed)``."""
    if K < 1:
        raise ConfigError("K must be >= 1")
    recipes = list(recipes)
    clouds = np.empty((len(recipes), K, 3), dtype=np.float32)
    for i, recipe in enumerate(recipes):
        key = recipe.seed if recipe.seed is not None else i
        rng = np.random.default_rng([int(seed), int(key)])
        pts = sample_surface(recipe, K, rng)
        clouds[i] = normalize(pts) if normalized else pts
    labels = None
    if recipes and all(r.label is not None for r in recipes):
        labels = np.array([r.label for r in recipes])
    manifest = {
        "source": "synthetic",
        "seed": int(seed),
        "K": int(K),
        "normalized": bool(normalized),
        "recipes": [r.to_dict() for r in recipes],
    }
    return Dataset(clouds, labels, None, manifest)


# eight categories: the five plain primitives plus three composites
CATEGORIES = ("sphere", "box", "cylinder", "torus", "cone", "rocket", "snowman", "table")


def _category_recipe(name, rng):
    u = rng.uniform
    if name == "sphere":
        prim, params = "sphere", {"radius": u(0.5, 1.5)}
    elif name == "box":
        prim, params = "box", {"size": [u(0.4, 2.0), u(0.4, 2.0), u(0.4, 2.0)]}
    elif name == "cylinder":
        prim, params = "cylinder", {"radius": u(0.3, 1.0), "height": u(0.5, 2.5)}
    elif name == "torus":
        major = u(0.8, 1.5)
        prim, params = "torus", {"major": major, "minor": u(0.15, 0.6) * major}
    elif name == "cone":
        prim, params = "cone", {"radius": u(0.4, 1.2), "height": u(0.6, 2.0)}
    elif name == "rocket":
        r, h, hc = u(0.25, 0.5), u(1.2, 2.2), u(0.4, 0.9)
        prim, params = "composite", {"parts": [
            ShapeRecipe("cylinder", {"radius": r, "height": h}),
            ShapeRecipe("cone", {"radius": r * 1.2, "height": hc}, translation=(0, 0, h / 2)),
        ]}
    elif name == "snowman":
        r1 = u(0.5, 0.8)
        r2 = r1 * u(0.5, 0.8)
        prim, params = "composite", {"parts": [
            ShapeRecipe("sphere", {"radius": r1}),
            ShapeRecipe("sphere", {"radius": r2}, translation=(0, 0, r1 + 0.8 * r2)),
        ]}
    elif name == "table":
        w, d, leg = u(1.0, 2.0), u(0.6, 1.2), u(0.5, 1.0)
        legs = [ShapeRecipe("cylinder", {"radius": 0.06, "height": leg},
                            translation=(sx * (w / 2 - 0.1), sy * (d / 2 - 0.1), -leg / 2))
                for sx in (-1, 1) for sy in (-1, 1)]
        prim, params = "composite", {"parts": [
            ShapeRecipe("box", {"size": [w, d, 0.08]}, translation=(0, 0, 0.04)), *legs]}
    else:
        raise ConfigError(f"unknown category {name!r}")
    rotation = tuple(Rotation.random(random_state=rng).as_euler("xyz"))
    translation = tuple(u(-1, 1, size=3))
    return prim, params, rotation, translation


def default_recipes(per_category=50, seed=0, categories=CATEGORIES):
    """Randomised size and pose for ``per_category`` shapes of each category."""
    rng = np.random.default_rng([int(seed), 7919])
    recipes = []
    for label, name in enumerate(categories):
        for j in range(per_category):
            prim, params, rot, trans = _category_recipe(name, rng)
            recipes.append(ShapeRecipe(prim, params, rot, trans,
                                       seed=label * per_category + j, label=label))
    return recipes


# ---------------------------------------------------------------- splits and batches

def split_dataset(ds, fractions, seed=0):
    """Shuffle under ``seed`` and assign train/val/test.

    ``fractions`` is ``(train, test)``, ``(train, val, test)`` or a dict.
    Non-train sizes are ``floor(n * fraction)``; the remainder goes to train.
    """
    if isinstance(fractions, dict):
        fr = {s: float(fractions.get(s, 0.0)) for s in SPLITS}
    elif len(fractions) == 2:
        fr = {"train": fractions[0], "val": 0.0, "test": fractions[1]}
    elif len(fractions) == 3:
        fr = dict(zip(SPLITS, map(float, fractions)))
    else:
        raise ConfigError("fractions must have two or three entries")
    if any(f < 0 for f in fr.values()) or abs(sum(fr.values()) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fr}")
    n = len(ds)
    sizes = {s: int(math.floor(n * fr[s] + 1e-9)) for s in ("val", "test")}
    sizes["train"] = n - sizes["val"] - sizes["test"]
    for s in SPLITS:
        if fr[s] > 0 and sizes[s] == 0:
            raise ConfigError(f"split {s!r} would be empty with {n} clouds")
    perm = np.random.default_rng(int(seed)).permutation(n)
    split = np.empty(n, dtype="<U5")
    split[perm[: sizes["train"]]] = "train"
    split[perm[sizes["train"]: sizes["train"] + sizes["val"]]] = "val"
    split[perm[sizes["train"] + sizes["val"]:]] = "test"
    manifest = dict(ds.manifest, split={"fractions": fr, "seed": int(seed)})
    return Dataset(ds.clouds, ds.labels, split, manifest)


def batch_indices(ds, split, batch_size, seed, epoch):
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    idx = ds.indices(split)
    order = idx[np.random.default_rng([int(seed), int(epoch)]).permutation(idx.size)]
    return [order[s:s + batch_size] for s in range(0, order.size, batch_size)]


def batches(ds, split, batch_size, seed=0, epoch=0):
    """Yield ``[B, 3, K]`` float32 batches, reshuffled per ``(seed, epoch)``.
    The final partial batch is kept."""
    for idx in batch_indices(ds, split, batch_size, seed, epoch):
        yield np.ascontiguousarray(ds.clouds[idx].transpose(0, 2, 1))
