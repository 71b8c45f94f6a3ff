"""Synthetic 2.5D terrain generation.

Builds map instances that pair appearance (per-cell color) and geometry
(elevation, slope) with a ground-truth traversability coefficient in [0, 1].
Terrain classes are laid out as Perlin-noise clusters, elevation comes from
midpoint displacement plus optional crater features, slope uses the Horn
gradient kernel, and each cell's traversability follows its class's latent
function of slope with additive Gaussian noise.

Rasters are row-major with the origin at the south-west corner: row index is
the y (northing) cell, column index the x (easting) cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, GenerationError

# Cluster layout of terrain classes (cycles per map edge, octave count,
# per-octave amplitude decay).
PERLIN_CYCLES = 4.0
PERLIN_OCTAVES = 2
PERLIN_PERSISTENCE = 0.5

# Fixed light azimuth for hillshading, degrees counterclockwise from +x.
SUN_AZIMUTH_DEG = 315.0

_FAMILIES = ("std", "hg", "hs")


@dataclass(frozen=True)
class TerrainClassDef:
    """One terrain class: appearance plus its latent traversability function.

    The latent function is linear in slope, clamp(lt_lambda0 -
    lt_slope_gain * psi, 0, 1), with additive zero-mean Gaussian noise of
    standard deviation noise_sigma realized per cell.
    """

    class_id: int
    name: str
    base_color: tuple[float, float, float]
    lt_lambda0: float
    lt_slope_gain: float
    noise_sigma: float

    def __post_init__(self):
        if not 0.0 <= self.lt_lambda0 <= 1.0:
            raise ConfigError(f"lt_lambda0 must be in [0, 1], got {self.lt_lambda0}")
        if self.lt_slope_gain < 0.0:
            raise ConfigError(f"lt_slope_gain must be >= 0, got {self.lt_slope_gain}")
        if self.noise_sigma < 0.0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if len(self.base_color) != 3 or any(not 0.0 <= c <= 1.0 for c in self.base_color):
            raise ConfigError(f"base_color must be an RGB triple in [0, 1], got {self.base_color}")


DEFAULT_CLASS_SET: tuple[TerrainClassDef, ...] = (
    TerrainClassDef(0, "rock", (0.44, 0.41, 0.39), 0.90, 0.6, 0.02),
    TerrainClassDef(1, "gravel", (0.58, 0.53, 0.45), 0.80, 0.8, 0.04),
    TerrainClassDef(2, "sand", (0.78, 0.70, 0.50), 0.60, 1.2, 0.06),
    TerrainClassDef(3, "dune", (0.88, 0.80, 0.58), 0.45, 1.6, 0.08),
)

DEFAULT_OCCUPANCY = (0.40, 0.30, 0.20, 0.10)


@dataclass(frozen=True)
class ScenarioSpec:
    """Complete recipe for one benchmark map instance and its episode limits.

    family selects the scenario preset semantics: "std" (standard), "hg"
    (harsh geometry, craters) or "hs" (harsh shading, low sun). All knobs
    remain explicit here so presets are plain value choices.
    """

    family: str
    seed: int
    width_m: float = 32.0
    height_m: float = 32.0
    resolution: float = 0.5
    class_set: tuple[TerrainClassDef, ...] = DEFAULT_CLASS_SET
    occupancy_ratios: tuple[float, ...] = DEFAULT_OCCUPANCY
    roughness: float = 0.6
    crater_count: int = 0
    crater_radius_m: float = 3.5
    crater_depth_m: float = 2.0
    sun_elevation_deg: float = 55.0
    shading_strength: float = 0.35
    start: tuple[float, float] = (8.0, 8.0)
    goal: tuple[float, float] = (24.0, 24.0)
    time_budget_T: float = 100.0
    lambda_stuck: float = 0.1
    goal_radius: float = 0.5

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ConfigError(f"unknown scenario family {self.family!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.resolution <= 0.0 or self.width_m <= 0.0 or self.height_m <= 0.0:
            raise ConfigError("map dimensions and resolution must be positive")
        ids = [c.class_id for c in self.class_set]
        if ids != list(range(len(self.class_set))):
            raise ConfigError("class_id values must be unique and contiguous from 0")
        if len(self.occupancy_ratios) != len(self.class_set):
            raise ConfigError("occupancy_ratios must have one entry per terrain class")
        if any(r < 0.0 for r in self.occupancy_ratios):
            raise ConfigError("occupancy_ratios must be nonnegative")
        if abs(sum(self.occupancy_ratios) - 1.0) > 1e-9:
            raise ConfigError("occupancy_ratios must sum to 1")
        for name, (px, py) in (("start", self.start), ("goal", self.goal)):
            if not (0.0 <= px < self.width_m and 0.0 <= py < self.height_m):
                raise ConfigError(f"{name} {px, py} lies outside the map bounds")
        if self.time_budget_T <= 0.0:
            raise ConfigError("time_budget_T must be positive")
        if not 0.0 <= self.lambda_stuck < 1.0:
            raise ConfigError("lambda_stuck must be in [0, 1)")
        if self.goal_radius <= 0.0:
            raise ConfigError("goal_radius must be positive")
        if self.crater_count < 0 or self.crater_radius_m <= 0.0 or self.crater_depth_m < 0.0:
            raise ConfigError("invalid crater parameters")
        if not 0.0 <= self.shading_strength <= 1.0:
            raise ConfigError("shading_strength must be in [0, 1]")
        if self.roughness < 0.0:
            raise ConfigError("roughness must be >= 0")

    @property
    def width_cells(self) -> int:
        return int(round(self.width_m / self.resolution))

    @property
    def height_cells(self) -> int:
        return int(round(self.height_m / self.resolution))

    def cell_index(self, x: float, y: float) -> tuple[int, int]:
        """(col, row) of the cell containing the in-bounds point (x, y)."""
        return int(x / self.resolution), int(y / self.resolution)


@dataclass(frozen=True)
class GridMap:
    """Immutable 2.5D raster bundle for one generated map instance."""

    resolution: float
    width: int
    height: int
    colors: np.ndarray      # (H, W, 3) float in [0, 1]
    elevation: np.ndarray   # (H, W) meters
    slope: np.ndarray       # (H, W) radians
    class_id: np.ndarray    # (H, W) uint8
    lambda_true: np.ndarray # (H, W) in [0, 1]

    def __post_init__(self):
        shape = (self.height, self.width)
        object.__setattr__(self, "colors", _frozen(self.colors, float, shape + (3,)))
        object.__setattr__(self, "elevation", _frozen(self.elevation, float, shape))
        object.__setattr__(self, "slope", _frozen(self.slope, float, shape))
        object.__setattr__(self, "class_id", _frozen(self.class_id, np.uint8, shape))
        object.__setattr__(self, "lambda_true", _frozen(self.lambda_true, float, shape))
        if self.slope.min() < 0.0 or self.slope.max() >= math.pi / 2:
            raise DataError("slope values must lie in [0, pi/2)")
        if self.lambda_true.min() < 0.0 or self.lambda_true.max() > 1.0:
            raise DataError("lambda_true values must lie in [0, 1]")
        if self.colors.min() < 0.0 or self.colors.max() > 1.0:
            raise DataError("colors must lie in [0, 1]")

    @property
    def extent(self) -> tuple[float, float]:
        return self.width * self.resolution, self.height * self.resolution


def _frozen(arr, dtype, shape) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    if out.shape != shape:
        raise DataError(f"raster shape {out.shape} does not match {shape}")
    out.setflags(write=False)
    return out


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _gradient_noise(shape: tuple[int, int], freq: float, rng: np.random.Generator) -> np.ndarray:
    """One octave of 2D gradient (Perlin) noise sampled at cell centers."""
    h, w = shape
    n = int(math.ceil(freq)) + 1
    angles = rng.uniform(0.0, 2.0 * math.pi, size=(n + 1, n + 1))
    gx, gy = np.cos(angles), np.sin(angles)

    u = (np.arange(w) + 0.5) / w * freq
    v = (np.arange(h) + 0.5) / h * freq
    V, U = np.meshgrid(v, u, indexing="ij")
    j0 = np.minimum(U.astype(np.int64), n - 1)
    i0 = np.minimum(V.astype(np.int64), n - 1)
    du, dv = U - j0, V - i0

    def corner(di, dj):
        return gx[i0 + di, j0 + dj] * (du - dj) + gy[i0 + di, j0 + dj] * (dv - di)

    fu, fv = _fade(du), _fade(dv)
    nx0 = corner(0, 0) + fu * (corner(0, 1) - corner(0, 0))
    nx1 = corner(1, 0) + fu * (corner(1, 1) - corner(1, 0))
    return (nx0 + fv * (nx1 - nx0)) * math.sqrt(2.0)


def perlin_noise(shape, cycles=PERLIN_CYCLES, octaves=PERLIN_OCTAVES,
                 persistence=PERLIN_PERSISTENCE, rng=None) -> np.ndarray:
    """Fractal Perlin noise, roughly in [-1, 1], octave frequency doubling."""
    rng = np.random.default_rng(rng)
    out = np.zeros(shape)
    amplitude, total, freq = 1.0, 0.0, float(cycles)
    for _ in range(octaves):
        out += amplitude * _gradient_noise(shape, freq, rng)
        total += amplitude
        amplitude *= persistence
        freq *= 2.0
    return out / total


def generate_class_field(spec: ScenarioSpec, rng_seed) -> np.ndarray:
    """Spatially clustered per-cell class ids matching the occupancy ratios.

    Perlin noise is thresholded at the occupancy-ratio quantiles of its own
    empirical distribution, so realized class fractions track the requested
    ratios while staying contiguous in space.
    """
    h, w = spec.height_cells, spec.width_cells
    if h < 8 or w < 8:
        raise ConfigError(f"map must be at least 8x8 cells, got {w}x{h}")
    rng = np.random.default_rng(rng_seed)
    noise = perlin_noise((h, w), rng=rng)
    cum = np.cumsum(spec.occupancy_ratios)[:-1]
    thresholds = np.quantile(noise, cum)
    return np.digitize(noise, thresholds, right=True).astype(np.uint8)


def _midpoint_displacement(min_size: int, rng: np.random.Generator) -> np.ndarray:
    """Diamond-square heightfield on the smallest enclosing (2^n + 1)^2 grid.

    Displacement amplitude halves per subdivision level; output is raw
    (unscaled) and roughly in [-2, 2].
    """
    n = max(1, int(math.ceil(math.log2(max(2, min_size - 1)))))
    size = (1 << n) + 1
    g = np.zeros((size, size))
    g[0, 0], g[0, -1], g[-1, 0], g[-1, -1] = rng.uniform(-1.0, 1.0, size=4)
    amplitude = 1.0
    step = size - 1
    while step > 1:
        half = step // 2
        # Diamond: center of each square from its 4 corners.
        c = g[0::step, 0::step]
        mid = 0.25 * (c[:-1, :-1] + c[:-1, 1:] + c[1:, :-1] + c[1:, 1:])
        g[half::step, half::step] = mid + rng.uniform(-amplitude, amplitude, mid.shape)
        # Square: edge midpoints from their set diamond/corner neighbours.
        for (r0, c0) in ((0, half), (half, 0)):
            rows = np.arange(r0, size, step)
            cols = np.arange(c0, size, step)
            R, C = np.meshgrid(rows, cols, indexing="ij")
            acc = np.zeros(R.shape)
            cnt = np.zeros(R.shape)
            for dr, dc in ((-half, 0), (half, 0), (0, -half), (0, half)):
                nr, nc = R + dr, C + dc
                ok = (nr >= 0) & (nr < size) & (nc >= 0) & (nc < size)
                acc[ok] += g[nr[ok], nc[ok]]
                cnt[ok] += 1.0
            g[R, C] = acc / cnt + rng.uniform(-amplitude, amplitude, R.shape)
        amplitude *= 0.5
        step = half
    return g


def _crater_profile(r: np.ndarray, radius: float, depth: float) -> np.ndarray:
    """Parabolic depression inside the rim plus a Gaussian rim bump."""
    bowl = np.where(r < radius, depth * (r * r / (radius * radius) - 1.0), 0.0)
    rim_width = radius / 4.0
    rim = 0.25 * depth * np.exp(-0.5 * ((r - radius) / rim_width) ** 2)
    return bowl + rim


def generate_elevation(spec: ScenarioSpec, rng_seed) -> np.ndarray:
    """Fractal elevation raster in meters, with optional crater features.

    The fractal surface is rescaled so its peak-to-peak amplitude equals
    roughness * width_m * 0.1 and recentered around zero; craters are then
    added at seeded uniform centers.
    """
    h, w = spec.height_cells, spec.width_cells
    rng = np.random.default_rng(rng_seed)
    base = _midpoint_displacement(max(h, w), rng)[:h, :w]
    target = spec.roughness * spec.width_m * 0.1
    ptp = float(base.max() - base.min())
    if target > 0.0 and ptp > 0.0:
        elev = (base - 0.5 * float(base.max() + base.min())) * (target / ptp)
    else:
        elev = np.zeros((h, w))
    if spec.crater_count > 0:
        xs = (np.arange(w) + 0.5) * spec.resolution
        ys = (np.arange(h) + 0.5) * spec.resolution
        Y, X = np.meshgrid(ys, xs, indexing="ij")
        for _ in range(spec.crater_count):
            cx = rng.uniform(0.0, spec.width_m)
            cy = rng.uniform(0.0, spec.height_m)
            r = np.hypot(X - cx, Y - cy)
            elev = elev + _crater_profile(r, spec.crater_radius_m, spec.crater_depth_m)
    return elev


def _horn_gradients(elevation: np.ndarray, resolution: float) -> tuple[np.ndarray, np.ndarray]:
    """Horn-kernel surface gradients (dz/dx, dz/dy); borders replicate interior."""
    z = np.asarray(elevation, dtype=float)
    if z.ndim != 2 or z.shape[0] < 3 or z.shape[1] < 3:
        raise DataError("elevation raster must be at least 3x3")
    d = 8.0 * resolution
    p = ((z[:-2, 2:] + 2.0 * z[1:-1, 2:] + z[2:, 2:])
         - (z[:-2, :-2] + 2.0 * z[1:-1, :-2] + z[2:, :-2])) / d
    q = ((z[2:, :-2] + 2.0 * z[2:, 1:-1] + z[2:, 2:])
         - (z[:-2, :-2] + 2.0 * z[:-2, 1:-1] + z[:-2, 2:])) / d
    return np.pad(p, 1, mode="edge"), np.pad(q, 1, mode="edge")


def compute_slope_horn(elevation: np.ndarray, resolution: float) -> np.ndarray:
    """Per-cell inclination in radians from the Horn gradient kernel."""
    p, q = _horn_gradients(elevation, resolution)
    return np.arctan(np.hypot(p, q))


def realize_traversability(class_raster: np.ndarray, slope: np.ndarray,
                           class_set, rng_seed) -> np.ndarray:
    """Ground-truth traversability: latent function of slope plus noise."""
    cls = np.asarray(class_raster)
    if cls.shape != np.asarray(slope).shape:
        raise DataError("class and slope rasters must share dimensions")
    ids = {c.class_id for c in class_set}
    present = np.unique(cls)
    if not set(int(i) for i in present) <= ids:
        raise DataError(f"class raster contains ids {present} not covered by the class set")
    lam0 = np.array([c.lt_lambda0 for c in class_set])[cls]
    gain = np.array([c.lt_slope_gain for c in class_set])[cls]
    sigma = np.array([c.noise_sigma for c in class_set])[cls]
    rng = np.random.default_rng(rng_seed)
    eps = rng.standard_normal(cls.shape) * sigma
    return np.clip(lam0 - gain * slope + eps, 0.0, 1.0)


def assign_colors(class_raster: np.ndarray, elevation: np.ndarray,
                  spec: ScenarioSpec) -> np.ndarray:
    """Per-cell color: class base color under blended Lambertian hillshading."""
    p, q = _horn_gradients(elevation, spec.resolution)
    inv_norm = 1.0 / np.sqrt(p * p + q * q + 1.0)
    nx, ny, nz = -p * inv_norm, -q * inv_norm, inv_norm
    elev_rad = math.radians(spec.sun_elevation_deg)
    az_rad = math.radians(SUN_AZIMUTH_DEG)
    lx = math.cos(elev_rad) * math.cos(az_rad)
    ly = math.cos(elev_rad) * math.sin(az_rad)
    lz = math.sin(elev_rad)
    lambert = np.clip(nx * lx + ny * ly + nz * lz, 0.0, None)
    shade = (1.0 - spec.shading_strength) + spec.shading_strength * lambert
    base = np.array([c.base_color for c in spec.class_set])[np.asarray(class_raster)]
    return np.clip(base * shade[..., None], 0.0, 1.0)


_MAX_FEASIBILITY_RETRIES = 100


def generate_map(spec: ScenarioSpec) -> GridMap:
    """Compose class, elevation, slope, traversability and color rasters.

    Each sub-stage draws from an independent child stream of spec.seed. If
    the start or goal cell realizes a traversability at or below
    lambda_stuck, the whole placement is re-seeded (bounded retries) so the
    declared coordinates stay fixed.
    """
    si = spec.cell_index(*spec.start)
    gi = spec.cell_index(*spec.goal)
    for attempt in range(_MAX_FEASIBILITY_RETRIES):
        cls_seed, elev_seed, lam_seed = np.random.SeedSequence([spec.seed, attempt]).spawn(3)
        cls = generate_class_field(spec, cls_seed)
        elev = generate_elevation(spec, elev_seed)
        slope = compute_slope_horn(elev, spec.resolution)
        lam = realize_traversability(cls, slope, spec.class_set, lam_seed)
        if lam[si[1], si[0]] > spec.lambda_stuck and lam[gi[1], gi[0]] > spec.lambda_stuck:
            colors = assign_colors(cls, elev, spec)
            return GridMap(
                resolution=spec.resolution,
                width=spec.width_cells,
                height=spec.height_cells,
                colors=colors,
                elevation=elev,
                slope=slope,
                class_id=cls,
                lambda_true=lam,
            )
    raise GenerationError(
        f"start/goal still stuck after {_MAX_FEASIBILITY_RETRIES} map regenerations"
    )


def color_features(colors: np.ndarray) -> np.ndarray:
    """Appearance features per cell: RGB plus 3x3 mean and variance per channel.

    Returns an (H, W, 9) array; window statistics use edge-replicated padding
    and the population variance.
    """
    c = np.asarray(colors, dtype=float)
    padded = np.pad(c, ((1, 1), (1, 1), (0, 0)), mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(0, 1))
    mean = windows.mean(axis=(-2, -1))
    var = windows.var(axis=(-2, -1))
    return np.concatenate([c, mean, var], axis=-1)


N_COLOR_FEATURES = 9

_TRAIN_MAP_STREAM = 101
_GP_SUBSAMPLE_STREAM = 202


def train_map_seed(base_seed: int, index: int) -> int:
    """Seed for the index-th training map, disjoint from evaluation seeds.

    Evaluation instances use base_seed + i directly; training maps hash
    through a separate namespace so the two families never collide.
    """
    ss = np.random.SeedSequence([base_seed, _TRAIN_MAP_STREAM, index])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class TrainingSet:
    """Labeled data for the classifier and the per-class slope regressors."""

    features: np.ndarray  # (N, 9)
    labels: np.ndarray    # (N,) uint8
    n_classes: int
    gp_pairs: tuple[tuple[np.ndarray, np.ndarray], ...]  # per class (psi, lambda)
    map_seeds: tuple[int, ...] = field(default=())


def build_training_set(n_maps: int, spec_template: ScenarioSpec, seed: int,
                       gp_cap: int = 512) -> TrainingSet:
    """Generate training maps and emit classifier records plus GP pairs.

    Classifier records are one per cell (color features, class label); GP
    pairs are per-class (slope, traversability) samples subsampled to at
    most gp_cap points per class.
    """
    if n_maps < 1:
        raise ConfigError("n_maps must be >= 1")
    n_classes = len(spec_template.class_set)
    feats, labels = [], []
    psis = [[] for _ in range(n_classes)]
    lams = [[] for _ in range(n_classes)]
    seeds = []
    for i in range(n_maps):
        map_seed = train_map_seed(seed, i)
        seeds.append(map_seed)
        gmap = generate_map(replace(spec_template, seed=map_seed))
        feats.append(color_features(gmap.colors).reshape(-1, N_COLOR_FEATURES))
        labels.append(gmap.class_id.ravel())
        for c in range(n_classes):
            mask = gmap.class_id == c
            psis[c].append(gmap.slope[mask])
            lams[c].append(gmap.lambda_true[mask])
    pairs = []
    for c in range(n_classes):
        psi = np.concatenate(psis[c]) if psis[c] else np.empty(0)
        lam = np.concatenate(lams[c]) if lams[c] else np.empty(0)
        if psi.size > gp_cap:
            rng = np.random.default_rng(np.random.SeedSequence([seed, _GP_SUBSAMPLE_STREAM, c]))
            keep = rng.choice(psi.size, size=gp_cap, replace=False)
            keep.sort()
            psi, lam = psi[keep], lam[keep]
        pairs.append((psi, lam))
    return TrainingSet(
        features=np.concatenate(feats, axis=0),
        labels=np.concatenate(labels, axis=0),
        n_classes=n_classes,
        gp_pairs=tuple(pairs),
        map_seeds=tuple(seeds),
    )
