"""Point cloud ingestion, voxelization and synthetic generators.

A raw cloud is an (n, 3) float64 array in source units.  Quantization maps
it onto an integer voxel grid of side 2**depth with a single uniform scale
(max axis extent), so the grid is cubic as the octree requires.  The affine
transform back to source coordinates (origin, scale) travels with the
quantized cloud and ends up in the bitstream header.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, ParseError

SYNTH_KINDS = ("uniform", "plane", "sphere", "gaussian_clusters", "lidar_rings")

# fixed plane/sphere geometry for the synthetic generators
_PLANE_COEF = (0.4, -0.3, 0.1)  # z = a*x + b*y + c
_SPHERE_RADIUS = 0.8


@dataclass
class RawPointCloud:
    """Point positions in source units plus a label for provenance."""

    points: np.ndarray  # (n, 3) float64
    source_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise InvalidInput("point cloud must be a non-empty (n, 3) array")
        if not np.isfinite(pts).all():
            raise InvalidInput("point cloud contains non-finite coordinates")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]


@dataclass
class QuantizedPointCloud:
    """Deduplicated voxel coordinates at bit depth `depth`.

    Voxels are stored lexicographically sorted so that set equality is
    plain array equality.  Dequantization: source ~= origin + scale * voxel.
    """

    depth: int
    voxels: np.ndarray  # (m, 3) int64, sorted, unique, in [0, 2**depth)
    origin: np.ndarray  # (3,) float64
    scale: float
    source_id: str = ""

    def __post_init__(self):
        if self.depth < 1:
            raise InvalidInput("depth must be >= 1")
        v = np.asarray(self.voxels, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] == 0:
            raise InvalidInput("voxels must be a non-empty (m, 3) array")
        if v.min() < 0 or v.max() >= (1 << self.depth):
            raise InvalidInput("voxel coordinate outside [0, 2**depth)")
        if not self.scale > 0:
            raise InvalidInput("scale must be positive")
        v = np.unique(v, axis=0)  # sorts lexicographically
        self.voxels = v
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)

    def __len__(self):
        return self.voxels.shape[0]

    def same_voxels(self, other: "QuantizedPointCloud") -> bool:
        """Exact voxel-set equality (depth must agree)."""
        return (
            self.depth == other.depth
            and self.voxels.shape == other.voxels.shape
            and bool(np.array_equal(self.voxels, other.voxels))
        )


def quantize(pc: RawPointCloud, depth: int) -> QuantizedPointCloud:
    """Map a raw cloud onto the integer grid [0, 2**depth)^3.

    origin = per-axis minimum, scale = (max axis extent) / (2**depth - 1).
    Coordinates are rounded half-away-from-zero; duplicates collapse.
    A cloud with zero extent on every axis maps to the single voxel (0,0,0).
    """
    if not isinstance(pc, RawPointCloud):
        pc = RawPointCloud(np.asarray(pc, dtype=np.float64))
    if not (1 <= depth <= 21):
        raise InvalidInput(f"depth must be in [1, 21], got {depth}")
    pts = pc.points
    origin = pts.min(axis=0)
    extent = float((pts.max(axis=0) - origin).max())
    side = (1 << depth) - 1
    scale = extent / side if extent > 0 else 1.0
    scaled = (pts - origin) / scale
    voxels = np.floor(scaled + 0.5).astype(np.int64)  # half away from zero (coords >= 0)
    np.clip(voxels, 0, side, out=voxels)
    return QuantizedPointCloud(depth=depth, voxels=voxels, origin=origin,
                               scale=scale, source_id=pc.source_id)


def dequantize(qpc: QuantizedPointCloud) -> RawPointCloud:
    """Invert the quantization transform; one point per voxel."""
    pts = qpc.origin[None, :] + qpc.scale * qpc.voxels.astype(np.float64)
    return RawPointCloud(pts, source_id=qpc.source_id)


def synth(kind: str, n: int, seed: int, jitter: float = 0.0) -> RawPointCloud:
    """Deterministic synthetic point clouds.

    kinds: uniform (box [-1,1]^3), plane (z = 0.4x - 0.3y + 0.1 patch),
    sphere (radius 0.8), gaussian_clusters (8 blobs), lidar_rings
    (spinning-scanner stand-in: fixed elevation rings, ground returns).
    `jitter` displaces plane/sphere points off the ideal surface by at most
    `jitter` along the surface normal; without it they sit on the surface
    to float precision.
    """
    if n < 1:
        raise InvalidInput("n must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "uniform":
        pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    elif kind == "plane":
        a, b, c = _PLANE_COEF
        xy = rng.uniform(-1.0, 1.0, size=(n, 2))
        z = a * xy[:, 0] + b * xy[:, 1] + c
        pts = np.column_stack([xy, z])
        if jitter > 0:
            normal = np.array([-a, -b, 1.0]) / np.sqrt(1 + a * a + b * b)
            pts = pts + rng.uniform(-jitter, jitter, size=(n, 1)) * normal
    elif kind == "sphere":
        dirs = rng.standard_normal(size=(n, 3))
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        dirs /= norms
        radii = np.full(n, _SPHERE_RADIUS)
        if jitter > 0:
            radii = radii + rng.uniform(-jitter, jitter, size=n)
        pts = dirs * radii[:, None]
    elif kind == "gaussian_clusters":
        centers = rng.uniform(-0.7, 0.7, size=(8, 3))
        which = rng.integers(0, 8, size=n)
        pts = centers[which] + 0.12 * rng.standard_normal(size=(n, 3))
    elif kind == "lidar_rings":
        pts = _lidar_rings(n, rng)
    else:
        raise InvalidInput(f"unknown synth kind {kind!r} (choose from {SYNTH_KINDS})")
    return RawPointCloud(pts, source_id=f"synth:{kind}:{n}:{seed}")


def _lidar_rings(n: int, rng: np.random.Generator) -> np.ndarray:
    """Sparse ring-structured returns from a scanner 1 m above a ground plane."""
    rings = 16
    height = 1.0
    max_range = 30.0
    elev = np.deg2rad(np.linspace(-15.0, 2.0, rings))
    ring_of = np.arange(n) % rings
    phi = elev[ring_of]
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    r = np.where(phi < np.deg2rad(-1.0),
                 np.minimum(height / np.tan(-np.minimum(phi, -1e-6)), max_range),
                 max_range * (0.3 + 0.4 * rng.uniform(size=n)))
    r = r * (1.0 + 0.01 * rng.standard_normal(n))
    cos_phi = np.cos(phi)
    return np.column_stack([r * cos_phi * np.cos(theta),
                            r * cos_phi * np.sin(theta),
                            r * np.sin(phi)])


# ---------------------------------------------------------------------------
# PLY I/O (geometry only; ASCII and binary little-endian)
# ---------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def read_ply(path) -> RawPointCloud:
    """Read x,y,z from an ASCII or binary-little-endian PLY vertex element.

    Extra scalar vertex properties (color, normals, ...) are skipped.
    """
    with open(path, "rb") as f:
        fmt, elements = _parse_ply_header(f)
        body = f.read()
    vertex = next((e for e in elements if e["name"] == "vertex"), None)
    if vertex is None:
        raise ParseError("PLY has no vertex element")
    names = [p[0] for p in vertex["props"]]
    if any(p[1] is None for p in vertex["props"]):
        raise ParseError("list property in vertex element is unsupported")
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ParseError(f"vertex element lacks property {axis!r}")

    if fmt == "ascii":
        tokens = body.split()
        pos = 0
        pts = None
        for elem in elements:
            if elem["name"] == "vertex":
                want = len(elem["props"])
                count = elem["count"]
                need = want * count
                if pos + need > len(tokens):
                    raise ParseError("ASCII PLY body shorter than declared")
                block = np.array(tokens[pos:pos + need], dtype=np.float64).reshape(count, want)
                cols = [names.index(a) for a in ("x", "y", "z")]
                pts = block[:, cols]
                break
            pos = _skip_ascii_element(tokens, pos, elem)
        if pts is None:
            raise ParseError("vertex element not found in body")
    else:
        offset = 0
        pts = None
        for elem in elements:
            if elem["name"] == "vertex":
                dt = np.dtype([(nm, "<" + code) for nm, code in elem["props"]])
                need = dt.itemsize * elem["count"]
                if offset + need > len(body):
                    raise ParseError("binary PLY body shorter than declared")
                rec = np.frombuffer(body, dtype=dt, count=elem["count"], offset=offset)
                pts = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)
                break
            if any(code is None for _, code in elem["props"]):
                raise ParseError("cannot skip binary list properties before vertex element")
            stride = sum(np.dtype(code).itemsize for _, code in elem["props"])
            offset += stride * elem["count"]
        if pts is None:
            raise ParseError("vertex element not found in body")

    return RawPointCloud(pts, source_id=str(path))


def _parse_ply_header(f):
    def line():
        raw = f.readline()
        if not raw:
            raise ParseError("unexpected end of PLY header")
        return raw.decode("ascii", errors="replace").strip()

    if line() != "ply":
        raise ParseError("not a PLY file (missing 'ply' magic)")
    fmt = None
    elements = []
    while True:
        ln = line()
        if ln == "end_header":
            break
        parts = ln.split()
        if not parts or parts[0] == "comment" or parts[0] == "obj_info":
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported PLY format line: {ln!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ParseError(f"malformed element line: {ln!r}")
            try:
                count = int(parts[2])
            except ValueError:
                raise ParseError(f"malformed element count: {ln!r}") from None
            elements.append({"name": parts[1], "count": count, "props": []})
        elif parts[0] == "property":
            if not elements:
                raise ParseError("property before any element")
            if parts[1] == "list":
                # (name, None) marks a variable-length property
                elements[-1]["props"].append((parts[-1], None))
            else:
                if parts[1] not in _PLY_TYPES:
                    raise ParseError(f"unknown property type {parts[1]!r}")
                elements[-1]["props"].append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise ParseError(f"unrecognized header line: {ln!r}")
    if fmt is None:
        raise ParseError("PLY header lacks a format line")
    return fmt, elements


def _skip_ascii_element(tokens, pos, elem):
    has_list = any(code is None for _, code in elem["props"])
    if not has_list:
        return pos + len(elem["props"]) * elem["count"]
    for _ in range(elem["count"]):
        for _, code in elem["props"]:
            if code is None:
                if pos >= len(tokens):
                    raise ParseError("ASCII PLY body shorter than declared")
                pos += 1 + int(tokens[pos])
            else:
                pos += 1
    if pos > len(tokens):
        raise ParseError("ASCII PLY body shorter than declared")
    return pos


def write_ply(path, pc: RawPointCloud, binary: bool = False) -> None:
    """Write geometry as a PLY with double-precision x,y,z."""
    pts = pc.points
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            f.write(np.ascontiguousarray(pts, dtype="<f8").tobytes())
        else:
            for x, y, z in pts:
                f.write(f"{x:.17g} {y:.17g} {z:.17g}\n".encode("ascii"))
