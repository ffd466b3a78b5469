"""Attractor point clouds (random orbits or iterated curves), rasters and
their file formats."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .curves import grow_family, seed_family
from .fileio import atomic_write_bytes
from .geometry import in_convex_polygon
from .maps import PiecewiseMap, spec_hash
from .rng import generator


@dataclass
class PointCloud:
    points: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.points)

    def to_csv_bytes(self):
        buf = io.StringIO()
        buf.write("x1,x2\n")
        np.savetxt(buf, self.points, fmt="%.17g", delimiter=",")
        return buf.getvalue().encode()

    def write_csv(self, path):
        atomic_write_bytes(path, self.to_csv_bytes())


def read_csv_points(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def sample_orbit_cloud(spec: PiecewiseMap, burn_in=100, count=100_000, seed=0, *, chains=1024) -> PointCloud:
    """``chains`` independent orbits advanced together, each contributing a
    contiguous block of the output.  An orbit hitting the singularity set
    restarts from a fresh random point and burns in again; ``breaks`` lists
    output indices where a new orbit segment begins."""
    if burn_in < 100:
        raise ValueError("burn_in must be at least 100")
    if count < 0:
        raise ValueError("count must be non-negative")
    chains = max(1, min(chains, count))
    per = math.ceil(count / chains) if count else 0
    rng = generator(seed, "orbit-cloud")
    x = spec.random_points(rng, chains)
    burn = np.full(chains, burn_in)
    filled = np.zeros(chains, dtype=np.int64)
    out = np.empty((chains, per, 2))
    breaks = [c * per for c in range(chains)]
    restarts = 0
    while per and np.any(filled < per):
        piece = spec.piece_index(x)
        bad = piece <= 0
        if bad.any():
            idx = np.nonzero(bad)[0]
            restarts += len(idx)
            x[idx] = spec.random_points(rng, len(idx))
            burn[idx] = burn_in
            breaks.extend(int(c * per + filled[c]) for c in idx if 0 < filled[c] < per)
            continue
        take = (burn == 0) & (filled < per)
        ci = np.nonzero(take)[0]
        out[ci, filled[ci]] = x[ci]
        filled[ci] += 1
        burn = np.maximum(burn - 1, 0)
        x = spec.apply_piece(x, piece)
        x = spec.refill_low_bits(x, rng)
    pts = out.reshape(-1, 2)[:count]
    breaks = sorted(b for b in set(breaks) if b < count)
    meta = {
        "mode": "orbit",
        "spec_hash": spec_hash(spec),
        "burn_in": burn_in,
        "count": int(count),
        "seed": seed,
        "chains": chains,
        "restarts": restarts,
        "segment_starts": breaks,
    }
    return PointCloud(pts, meta)


def sample_curve_cloud(spec: PiecewiseMap, generations=14, seed=0, *, l=0.05, q=1, refine_step=1e-3,
                       pitch=None) -> PointCloud:
    """Arc-length samples of the final generation of an iterated seed curve.
    The construction is deterministic; ``seed`` only enters the metadata."""
    fam = seed_family(spec, q=q, l=l)
    if generations:
        fam, _, _ = grow_family(spec, fam, generations, refine_step)
    pitch = l / 50 if pitch is None else pitch
    pts = [c.samples(pitch)[1] for c in fam.curves]
    pts = np.vstack(pts) if pts else np.zeros((0, 2))
    meta = {
        "mode": "curves",
        "spec_hash": spec_hash(spec),
        "generations": generations,
        "curves": len(fam),
        "count": len(pts),
        "seed": seed,
        "l": l,
        "q": q,
        "refine_step": refine_step,
        "pitch": pitch,
    }
    return PointCloud(pts, meta)


def image_regions(spec: PiecewiseMap):
    """Convex images of the pieces under affine branches (counter-clockwise)."""
    regions = []
    for piece in range(1, spec.n_pieces + 1):
        aff = spec.branch_affine(piece)
        if aff is None:
            raise ValueError("image regions need affine branches")
        A, b = aff
        poly = spec.piece_polygon(piece) @ A.T + b
        if np.linalg.det(A) < 0:
            poly = poly[::-1]
        regions.append(poly)
    return regions


def in_image_regions(spec: PiecewiseMap, points, tol=1e-9):
    ok = np.zeros(len(points), dtype=bool)
    for poly in image_regions(spec):
        ok |= in_convex_polygon(points, poly, tol)
    return ok


# -- rasters ---------------------------------------------------------------------


@dataclass
class RasterImage:
    """8-bit grayscale; row 0 is the top (largest x2)."""

    width: int
    height: int
    pixels: np.ndarray
    domain: tuple

    def to_pixel(self, points):
        x0, x1, y0, y1 = self.domain
        p = np.atleast_2d(points)
        col = np.floor((p[:, 0] - x0) / (x1 - x0) * self.width).astype(np.int64)
        row = self.height - 1 - np.floor((p[:, 1] - y0) / (y1 - y0) * self.height).astype(np.int64)
        return np.clip(row, 0, self.height - 1), np.clip(col, 0, self.width - 1)

    @property
    def lit(self):
        return self.pixels > 0


def rasterize(cloud: PointCloud | np.ndarray, width=512, height=512, domain=(-1.0, 1.0, -1.0, 1.0)) -> RasterImage:
    """log(1 + hits) scaled so the busiest pixel is 255; any hit is >= 1."""
    if width < 16 or height < 16:
        raise ValueError("width and height must be at least 16")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float).reshape(-1, 2)
    img = RasterImage(width, height, np.zeros((height, width), np.uint8), tuple(domain))
    if len(pts) == 0:
        return img
    row, col = img.to_pixel(pts)
    hits = np.bincount(row * width + col, minlength=width * height).reshape(height, width)
    level = np.log1p(hits) / math.log1p(hits.max()) * 255.0
    px = np.where(hits > 0, np.maximum(np.rint(level), 1), 0)
    img.pixels = px.astype(np.uint8)
    return img


def pgm_bytes(img: RasterImage) -> bytes:
    return f"P5\n{img.width} {img.height}\n255\n".encode() + np.ascontiguousarray(img.pixels, np.uint8).tobytes()


def write_pgm(path, img: RasterImage):
    atomic_write_bytes(path, pgm_bytes(img))


def read_pgm(path, domain=(-1.0, 1.0, -1.0, 1.0)) -> RasterImage:
    data = open(path, "rb").read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    pix = np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8).reshape(h, w).copy()
    return RasterImage(w, h, pix, tuple(domain))


def occupancy_agreement(a: RasterImage, b: RasterImage) -> float:
    """Fraction of pixels on which both images agree about being lit."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError("image sizes differ")
    return float(np.mean(a.lit == b.lit))
