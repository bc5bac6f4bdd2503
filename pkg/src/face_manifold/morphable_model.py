"""Linear 3D morphable face model.

A face is ``mean + alpha_id @ id_basis + alpha_exp @ exp_basis``: the
coefficient vectors select a point on the identity and expression bases, and
each coefficient has its own scale (used as a standard deviation for Gaussian
sampling and as the half-width unit for uniform sampling).

The licensed face bases are not shipped; ``make_toy_model`` builds a small
procedural stand-in (a deformable icosphere) with the same structure, and
``load_model`` reads user-supplied bases in the ``.fmm`` format.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import binio
from ._rng import as_rng

MODEL_MAGIC = b"FMM1"

# Per-group magnitude of the first coefficient in the toy model.  At the
# default decay of 0.8 Gaussian identity draws have a covariance trace of
# ~1.8e12 raw units, the magnitude reported for the real shape basis; the
# expression scale puts the leading coefficients on the order of the
# training noise (sigma = 2).
ID_SCALE0 = 8.0e5
EXP_SCALE0 = 2.0
# RMS per-coordinate displacement of a coefficient equal to its group's scale_0.
DISPLACEMENT_RMS = 0.05


class Group(str, Enum):
    IDENTITY = "identity"
    EXPRESSION = "expression"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        value = str(value).lower()
        if value == "shape":
            return cls.IDENTITY
        return cls(value)


@dataclass(frozen=True, eq=False)
class MorphableModel:
    mean: np.ndarray
    id_basis: np.ndarray
    exp_basis: np.ndarray
    id_scale: np.ndarray
    exp_scale: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        conv = {
            "mean": np.asarray(self.mean, dtype=np.float64).reshape(-1),
            "id_basis": np.atleast_2d(np.asarray(self.id_basis, dtype=np.float64)),
            "exp_basis": np.atleast_2d(np.asarray(self.exp_basis, dtype=np.float64)),
            "id_scale": np.asarray(self.id_scale, dtype=np.float64).reshape(-1),
            "exp_scale": np.asarray(self.exp_scale, dtype=np.float64).reshape(-1),
            "triangles": np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3),
        }
        for name, value in conv.items():
            object.__setattr__(self, name, value)
        self._validate()

    def _validate(self):
        n3 = self.mean.size
        if n3 == 0 or n3 % 3:
            raise ValueError(f"mean length must be a positive multiple of 3, got {n3}")
        for name in ("id", "exp"):
            basis = getattr(self, f"{name}_basis")
            scale = getattr(self, f"{name}_scale")
            if basis.shape[1] != n3:
                raise ValueError(
                    f"{name}_basis has {basis.shape[1]} columns, expected 3N = {n3}"
                )
            if scale.size != basis.shape[0]:
                raise ValueError(
                    f"{name}_scale has length {scale.size}, expected {basis.shape[0]}"
                )
            if not np.all(scale > 0):
                raise ValueError(f"{name}_scale entries must be strictly positive")
        for name in ("mean", "id_basis", "exp_basis", "id_scale", "exp_scale"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains NaN or Inf")
        tri = self.triangles
        if tri.size and (tri.min() < 0 or tri.max() >= self.vertex_count):
            raise ValueError(
                f"triangle indices must lie in [0, {self.vertex_count}), "
                f"found range [{tri.min()}, {tri.max()}]"
            )

    @property
    def vertex_count(self):
        return self.mean.size // 3

    @property
    def p_id(self):
        return self.id_basis.shape[0]

    @property
    def p_exp(self):
        return self.exp_basis.shape[0]

    def basis(self, group):
        return self.id_basis if Group.parse(group) is Group.IDENTITY else self.exp_basis

    def scale(self, group):
        return self.id_scale if Group.parse(group) is Group.IDENTITY else self.exp_scale

    def param_count(self, group):
        return self.scale(group).size


@dataclass(frozen=True, eq=False)
class ParamVector:
    group: Group
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "group", Group.parse(self.group))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64).reshape(-1))

    def __len__(self):
        return self.values.size


@dataclass(frozen=True, eq=False)
class FaceMesh:
    positions: np.ndarray
    triangles: np.ndarray

    @property
    def vertex_count(self):
        return self.positions.size // 3

    @property
    def vertices(self):
        return self.positions.reshape(-1, 3)


def _coefficients(model, params, group):
    if isinstance(params, ParamVector):
        if params.group is not group:
            raise ValueError(f"expected {group.value} parameters, got {params.group.value}")
        values = params.values
    else:
        values = np.asarray(params, dtype=np.float64).reshape(-1)
    expected = model.param_count(group)
    if values.size != expected:
        raise ValueError(
            f"{group.value} parameter length {values.size} does not match model "
            f"({expected} basis rows)"
        )
    return values


def synthesize_face(model, id_params, exp_params):
    """Mesh for the given identity and expression coefficients."""
    a_id = _coefficients(model, id_params, Group.IDENTITY)
    a_exp = _coefficients(model, exp_params, Group.EXPRESSION)
    positions = model.mean + a_id @ model.id_basis + a_exp @ model.exp_basis
    return FaceMesh(positions, model.triangles)


# --- sampling ----------------------------------------------------------------

def draw_normal(scale, rng, count=None):
    scale = np.asarray(scale, dtype=np.float64)
    size = scale.shape if count is None else (count,) + scale.shape
    return rng.standard_normal(size) * scale


def draw_uniform(scale, k, rng, count=None):
    if not k > 0:
        raise ValueError(f"interval multiplier k must be positive, got {k}")
    scale = np.asarray(scale, dtype=np.float64)
    size = scale.shape if count is None else (count,) + scale.shape
    half = k * scale
    return rng.uniform(-1.0, 1.0, size) * half


def sample_normal(model, group, seed):
    """One coefficient vector with entries ~ Normal(0, scale[i])."""
    group = Group.parse(group)
    return ParamVector(group, draw_normal(model.scale(group), as_rng(seed)))


def sample_uniform(model, group, k, seed):
    """One coefficient vector with entries ~ Uniform(-k*scale[i], k*scale[i])."""
    group = Group.parse(group)
    return ParamVector(group, draw_uniform(model.scale(group), k, as_rng(seed)))


def sample_normal_batch(model, group, count, seed):
    """``count`` Gaussian coefficient vectors as a (count, P) array."""
    return draw_normal(model.scale(group), as_rng(seed), count=count)


def sample_uniform_batch(model, group, k, count, seed):
    return draw_uniform(model.scale(group), k, as_rng(seed), count=count)


# --- procedural toy model ---------------------------------------------------

_ICOSAHEDRON_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def _icosahedron():
    t = (1.0 + 5.0 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    return [np.array(v, dtype=np.float64) for v in verts], list(_ICOSAHEDRON_FACES)


def _tetrahedron():
    verts = [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]
    faces = [(0, 2, 1), (0, 1, 3), (0, 3, 2), (1, 2, 3)]
    return [np.array(v, dtype=np.float64) for v in verts], faces


def _subdivide(verts, faces):
    cache = {}

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in cache:
            verts.append((verts[a] + verts[b]) / 2.0)
            cache[key] = len(verts) - 1
        return cache[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    return verts, out


def feasible_vertex_counts(limit=100_000):
    """Vertex counts reachable by subdividing an icosahedron or a tetrahedron."""
    counts = set()
    for base in (10, 2):
        s = 0
        while base * 4 ** s + 2 <= limit:
            counts.add(base * 4 ** s + 2)
            s += 1
    return sorted(counts)


def sphere_mesh(vertex_count):
    """Unit-sphere triangulation with exactly ``vertex_count`` vertices."""
    for base, factory in ((10, _icosahedron), (2, _tetrahedron)):
        s = 0
        while base * 4 ** s + 2 < vertex_count:
            s += 1
        if base * 4 ** s + 2 == vertex_count:
            verts, faces = factory()
            for _ in range(s):
                verts, faces = _subdivide(verts, faces)
            v = np.array(verts)
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            return v, np.array(faces, dtype=np.int64)
    nearby = [c for c in feasible_vertex_counts(max(4 * vertex_count, 100))]
    raise ValueError(
        f"no sphere subdivision has {vertex_count} vertices; feasible counts include {nearby[:10]}"
    )


def _smooth_field(vertices, row, rng):
    """Random displacement field; later rows use narrower bumps (higher order)."""
    n_bumps = 6
    width = 1.0 / np.sqrt(1.0 + row / 3.0)
    centers = rng.standard_normal((n_bumps, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    amplitudes = rng.standard_normal((n_bumps, 3))
    # geodesic-like distance via 1 - cos(angle)
    weights = np.exp(-(1.0 - vertices @ centers.T) / width ** 2)
    return (weights @ amplitudes).reshape(-1)


def _orthonormal_rows(vertices, count, rng):
    """Gram-Schmidt (two passes) over random smooth fields."""
    n3 = vertices.size
    if count > n3:
        raise ValueError(f"cannot build {count} orthogonal rows in dimension 3N = {n3}")
    rows = np.empty((count, n3))
    for r in range(count):
        for _attempt in range(20):
            v = _smooth_field(vertices, r, rng)
            ref = np.linalg.norm(v)
            for _ in range(2):
                v -= rows[:r].T @ (rows[:r] @ v)
            norm = np.linalg.norm(v)
            if norm > 1e-6 * ref:
                break
            # numerically dependent on earlier rows: fall back to a rough field
            v = rng.standard_normal(n3)
            for _ in range(2):
                v -= rows[:r].T @ (rows[:r] @ v)
            norm = np.linalg.norm(v)
            if norm > 1e-6:
                break
        rows[r] = v / norm
    return rows


def make_toy_model(vertex_count=642, p_id=199, p_exp=29, scale_decay=0.8, seed=0,
                   id_scale0=ID_SCALE0, exp_scale0=EXP_SCALE0):
    """Procedural morphable model on a subdivided unit sphere.

    Basis rows are smooth random displacement fields, orthonormalized and then
    scaled so a coefficient equal to ``scale0`` moves vertices by about
    ``DISPLACEMENT_RMS``.  Per-parameter scales decay geometrically:
    ``scale[i] = scale0 * scale_decay**i``.
    """
    if vertex_count < 4:
        raise ValueError(f"vertex_count must be >= 4, got {vertex_count}")
    if p_id < 1 or p_exp < 1:
        raise ValueError(f"p_id and p_exp must be >= 1, got {p_id}, {p_exp}")
    if not scale_decay > 0:
        raise ValueError(f"scale_decay must be positive, got {scale_decay}")
    vertices, triangles = sphere_mesh(vertex_count)
    rng = as_rng(seed)
    n3 = vertices.size
    id_rows = _orthonormal_rows(vertices, p_id, rng)
    exp_rows = _orthonormal_rows(vertices, p_exp, rng)
    id_basis = id_rows * (DISPLACEMENT_RMS * np.sqrt(n3) / id_scale0)
    exp_basis = exp_rows * (DISPLACEMENT_RMS * np.sqrt(n3) / exp_scale0)
    id_scale = id_scale0 * scale_decay ** np.arange(p_id, dtype=np.float64)
    exp_scale = exp_scale0 * scale_decay ** np.arange(p_exp, dtype=np.float64)
    return MorphableModel(vertices.reshape(-1), id_basis, exp_basis, id_scale, exp_scale, triangles)


# --- persistence --------------------------------------------------------------

def model_to_bytes(model):
    w = binio.Writer(MODEL_MAGIC)
    w.u32(model.vertex_count)
    w.u32(model.p_id)
    w.u32(model.p_exp)
    w.u32(model.triangles.shape[0])
    w.f64_array(model.mean)
    w.f64_array(model.id_basis)
    w.f64_array(model.exp_basis)
    w.f64_array(model.id_scale)
    w.f64_array(model.exp_scale)
    w.u32_array(model.triangles)
    return w.getvalue()


def model_from_bytes(data):
    r = binio.Reader(data, MODEL_MAGIC, "model (.fmm)")
    n = r.u32("header")
    p_id = r.u32("header")
    p_exp = r.u32("header")
    t = r.u32("header")
    mean = r.f64_array(3 * n, "mean")
    id_basis = r.f64_array(p_id * 3 * n, "id_basis").reshape(p_id, 3 * n)
    exp_basis = r.f64_array(p_exp * 3 * n, "exp_basis").reshape(p_exp, 3 * n)
    id_scale = r.f64_array(p_id, "id_scale")
    exp_scale = r.f64_array(p_exp, "exp_scale")
    triangles = r.u32_array(3 * t, "triangles").reshape(t, 3)
    r.finish()
    try:
        return MorphableModel(mean, id_basis, exp_basis, id_scale, exp_scale, triangles)
    except ValueError as exc:
        raise binio.FileFormatError(f"invalid model contents: {exc}") from exc


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def export_obj(mesh):
    """Wavefront OBJ text for a mesh (1-based face indices)."""
    lines = ["v %.6f %.6f %.6f" % tuple(v) for v in mesh.vertices]
    lines += ["f %d %d %d" % tuple(f + 1) for f in np.asarray(mesh.triangles)]
    text = "\n".join(lines) + "\n"
    # "%.6f" renders tiny negatives as -0.000000
    return text.replace("-0.000000", "0.000000")
