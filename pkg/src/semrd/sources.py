"""Semantic source constructors: the linear-Gaussian benchmark, its discretization,
synthetic labeled data, and sample-file ingestion."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DiscreteSemanticSource, DistortionSpec, build_source, make_distortion_spec, squared_error_distortion
from .exceptions import DegenerateGrid, NotPositiveDefinite, ParseError, ShapeError

BOUND_SIGMAS = 4.0
DEFAULT_MC_SAMPLES = 10**6


def _cholesky(matrix, name):
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotPositiveDefinite(f"{name} must be square, got shape {m.shape}")
    if not np.allclose(m, m.T, atol=1e-12):
        raise NotPositiveDefinite(f"{name} is not symmetric")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"{name} is not positive definite") from exc


@dataclass(frozen=True, eq=False)
class GaussianSourceSpec:
    """X ~ N(0, k_x) and S = h X + W with W ~ N(0, k_w) independent of X."""

    k_x: np.ndarray
    h: np.ndarray
    k_w: np.ndarray
    seed: int = 0

    def __post_init__(self):
        k_x = np.array(self.k_x, dtype=float)
        h = np.atleast_2d(np.array(self.h, dtype=float))
        k_w = np.array(self.k_w, dtype=float)
        _cholesky(k_x, "k_x")
        _cholesky(k_w, "k_w")
        if h.shape != (k_w.shape[0], k_x.shape[0]):
            raise ShapeError(f"h must have shape {(k_w.shape[0], k_x.shape[0])}, got {h.shape}")
        object.__setattr__(self, "k_x", k_x)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "k_w", k_w)

    @property
    def x_dim(self) -> int:
        return self.k_x.shape[0]

    @property
    def s_dim(self) -> int:
        return self.k_w.shape[0]

    @property
    def s_covariance(self) -> np.ndarray:
        return self.h @ self.k_x @ self.h.T + self.k_w

    def to_dict(self) -> dict:
        return {"k_x": self.k_x.tolist(), "h": self.h.tolist(), "k_w": self.k_w.tolist(), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianSourceSpec":
        return cls(d["k_x"], d["h"], d["k_w"], int(d.get("seed", 0)))


def gaussian_benchmark(seed: int = 0) -> GaussianSourceSpec:
    """The three-dimensional observation / two-dimensional state benchmark source."""
    k_x = [[11.0, 0.0, 0.5], [0.0, 3.0, -2.0], [0.5, -2.0, 2.35]]
    h = [[0.0701, 0.305, 0.457], [-0.0305, -0.220, 0.671]]
    k_w = [[0.71, -0.305], [-0.305, 0.220]]
    return GaussianSourceSpec(k_x, h, k_w, seed)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Observation samples, their attached semantic samples, and a latent bank.

    Parameters
    ----------
    observations : (N1, p) array
    semantic : (N1, N2, q) array
        ``semantic[n]`` holds the N2 semantic samples drawn given ``observations[n]``.
    latent : (M, k) array or None
        Latent vectors fed to a generator; None when the set only carries data.
    """

    observations: np.ndarray
    semantic: np.ndarray
    latent: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        x = np.asarray(self.observations, dtype=float)
        s = np.asarray(self.semantic, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if s.ndim == 2:
            s = s[:, None, :]
        if x.ndim != 2 or s.ndim != 3:
            raise ShapeError("observations must be (N1, p) and semantic (N1, N2, q)")
        if x.shape[0] < 1 or s.shape[1] < 1:
            raise ShapeError("need N1 >= 1 and N2 >= 1")
        if s.shape[0] != x.shape[0]:
            raise ShapeError(f"{x.shape[0]} observations but {s.shape[0]} semantic groups")
        object.__setattr__(self, "observations", x)
        object.__setattr__(self, "semantic", s)
        if self.latent is not None:
            z = np.asarray(self.latent, dtype=float)
            if z.ndim != 2 or z.shape[0] < 1:
                raise ShapeError("latent bank must be (M, k) with M >= 1")
            object.__setattr__(self, "latent", z)

    @property
    def n1(self) -> int:
        return self.observations.shape[0]

    @property
    def n2(self) -> int:
        return self.semantic.shape[1]

    @property
    def m(self) -> int:
        return 0 if self.latent is None else self.latent.shape[0]

    @property
    def x_dim(self) -> int:
        return self.observations.shape[1]

    @property
    def s_dim(self) -> int:
        return self.semantic.shape[2]

    def semantic_mean(self) -> np.ndarray:
        return self.semantic.mean(axis=1)

    def semantic_spread(self) -> np.ndarray:
        """Per-observation mean squared distance of the semantic samples to their mean."""
        centered = self.semantic - self.semantic_mean()[:, None, :]
        return np.sum(centered**2, axis=2).mean(axis=1)

    def with_latent(self, m: int, dim: int, seed: int | None = None) -> "SampleSet":
        rng = np.random.default_rng(self.seed if seed is None else seed)
        return SampleSet(self.observations, self.semantic, rng.standard_normal((m, dim)), self.seed)

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.observations[idx], self.semantic[idx], self.latent, self.seed)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Observations with class labels in 0..K-1; the label is a deterministic function of x."""

    observations: np.ndarray
    labels: np.ndarray
    class_count: int
    deterministic: bool = True

    def __post_init__(self):
        x = np.asarray(self.observations, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.labels)
        if y.ndim != 1 or y.shape[0] != x.shape[0] or x.shape[0] < 1:
            raise ShapeError("need N >= 1 observations and one label per observation")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.round(y)):
                raise ShapeError("labels must be integers")
            y = y.astype(int)
        if np.any(y < 0) or np.any(y >= self.class_count):
            raise ShapeError(f"labels must lie in 0..{self.class_count - 1}")
        object.__setattr__(self, "observations", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    def one_hot(self) -> np.ndarray:
        return np.eye(self.class_count)[self.labels]

    def to_samples(self, latent=None, seed=None) -> SampleSet:
        """One-hot labels as a single semantic sample per observation."""
        return SampleSet(self.observations, self.one_hot()[:, None, :], latent, seed)


def sample_gaussian(
    spec: GaussianSourceSpec,
    n1: int,
    n2: int,
    m: int | None = None,
    latent_dim: int = 10,
    seed: int | None = None,
) -> SampleSet:
    """Draw N1 observations and N2 semantic samples per observation.

    When ``m`` is given a standard-normal latent bank of shape (m, latent_dim)
    is attached.  The result is a pure function of (spec, seed, sizes).
    """
    if n1 < 1 or n2 < 1:
        raise ValueError("n1 and n2 must be >= 1")
    seed = spec.seed if seed is None else seed
    x_rng, s_rng, z_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    x = x_rng.standard_normal((n1, spec.x_dim)) @ _cholesky(spec.k_x, "k_x").T
    noise = s_rng.standard_normal((n1, n2, spec.s_dim)) @ _cholesky(spec.k_w, "k_w").T
    s = (x @ spec.h.T)[:, None, :] + noise
    latent = None if m is None else z_rng.standard_normal((m, latent_dim))
    return SampleSet(x, s, latent, seed)


@dataclass(frozen=True)
class DiscretizationGrid:
    """Uniform per-dimension quantizers for X and S; values outside the bounds fall in the edge cells."""

    x_levels: tuple[int, ...]
    s_levels: tuple[int, ...]
    x_bounds: tuple[tuple[float, float], ...]
    s_bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        for levels, bounds, name in [(self.x_levels, self.x_bounds, "x"), (self.s_levels, self.s_bounds, "s")]:
            if len(levels) != len(bounds):
                raise ValueError(f"{name}: one level count per bounded dimension required")
            if any(n < 2 for n in levels):
                raise ValueError(f"{name}: at least 2 levels per dimension")
            if any(not (np.isfinite(lo) and np.isfinite(hi) and lo < hi) for lo, hi in bounds):
                raise ValueError(f"{name}: bounds must be finite with lo < hi")

    @classmethod
    def around(cls, spec: GaussianSourceSpec, x_levels, s_levels, sigmas: float = BOUND_SIGMAS) -> "DiscretizationGrid":
        """Grid spanning +-``sigmas`` marginal standard deviations per coordinate."""
        sx = np.sqrt(np.diag(spec.k_x))
        ss = np.sqrt(np.diag(spec.s_covariance))
        xl = (x_levels,) * spec.x_dim if np.isscalar(x_levels) else tuple(x_levels)
        sl = (s_levels,) * spec.s_dim if np.isscalar(s_levels) else tuple(s_levels)
        return cls(
            tuple(int(n) for n in xl),
            tuple(int(n) for n in sl),
            tuple((-sigmas * v, sigmas * v) for v in sx),
            tuple((-sigmas * v, sigmas * v) for v in ss),
        )

    @property
    def x_size(self) -> int:
        return int(np.prod(self.x_levels))

    @property
    def s_size(self) -> int:
        return int(np.prod(self.s_levels))

    def x_centers(self) -> np.ndarray:
        return _centers(self.x_levels, self.x_bounds)

    def s_centers(self) -> np.ndarray:
        return _centers(self.s_levels, self.s_bounds)

    def x_cells(self, x) -> np.ndarray:
        return _cells(x, self.x_levels, self.x_bounds)

    def s_cells(self, s) -> np.ndarray:
        return _cells(s, self.s_levels, self.s_bounds)


def _centers(levels, bounds):
    axes = [lo + (np.arange(n) + 0.5) * (hi - lo) / n for n, (lo, hi) in zip(levels, bounds)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def _cells(v, levels, bounds):
    v = np.atleast_2d(v)
    idx = []
    for j, (n, (lo, hi)) in enumerate(zip(levels, bounds)):
        idx.append(np.clip(np.floor((v[:, j] - lo) / (hi - lo) * n).astype(int), 0, n - 1))
    return np.ravel_multi_index(idx, levels)


@dataclass(frozen=True, eq=False)
class DiscretizedSource:
    """A discretized Gaussian source plus the representatives of its cells.

    ``x_points[i]`` is the center of the i-th live observation cell (cells with
    zero mass are dropped); ``s_points`` covers every semantic cell.
    """

    source: DiscreteSemanticSource
    x_points: np.ndarray
    s_points: np.ndarray
    grid: DiscretizationGrid
    x_cell_ids: np.ndarray = field(repr=False)

    def distortion_spec(self, x_hat_points=None, s_hat_points=None) -> DistortionSpec:
        """Squared-error distortions; reproduction alphabets default to the full source grids."""
        xh = self.grid.x_centers() if x_hat_points is None else np.atleast_2d(x_hat_points)
        sh = self.s_points if s_hat_points is None else np.atleast_2d(s_hat_points)
        return make_distortion_spec(
            self.source,
            squared_error_distortion(self.x_points, xh),
            squared_error_distortion(self.s_points, sh),
        )


def discretize_gaussian(
    spec: GaussianSourceSpec,
    grid: DiscretizationGrid,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed: int | None = None,
) -> DiscretizedSource:
    """Monte-Carlo joint histogram of (X, S) over the grid cells.

    Raises
    ------
    DegenerateGrid
        If every draw lands in a single joint cell.
    """
    if len(grid.x_levels) != spec.x_dim or len(grid.s_levels) != spec.s_dim:
        raise ShapeError("grid dimensions do not match the source")
    draws = sample_gaussian(spec, mc_samples, 1, seed=seed)
    xi = grid.x_cells(draws.observations)
    si = grid.s_cells(draws.semantic[:, 0, :])
    counts = np.bincount(xi * grid.s_size + si, minlength=grid.x_size * grid.s_size).reshape(grid.x_size, grid.s_size)
    if np.count_nonzero(counts) <= 1:
        raise DegenerateGrid("all Monte-Carlo mass fell in one cell")
    live = np.flatnonzero(counts.sum(axis=1) > 0)
    return DiscretizedSource(
        source=build_source(counts[live] / mc_samples),
        x_points=grid.x_centers()[live],
        s_points=grid.s_centers(),
        grid=grid,
        x_cell_ids=live,
    )


def synth_labeled(k_classes: int, means, cov, n: int, seed: int = 0) -> LabeledDataset:
    """Balanced Gaussian mixture with one component per class, shuffled."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    if means.shape[0] != k_classes:
        raise ShapeError(f"need {k_classes} means, got {means.shape[0]}")
    if len({tuple(m) for m in means}) != k_classes:
        raise ValueError("class means must be distinct")
    chol = _cholesky(np.atleast_2d(cov), "cov")
    if chol.shape[0] != means.shape[1]:
        raise ShapeError("covariance and means disagree on dimension")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % k_classes
    rng.shuffle(labels)
    x = means[labels] + rng.standard_normal((n, means.shape[1])) @ chol.T
    return LabeledDataset(x, labels, k_classes)


# -- sample files ---------------------------------------------------------------

def _header(p, q, labeled):
    cols = [f"x{i}" for i in range(p)]
    return cols + (["label"] if labeled else [f"s{j}" for j in range(q)])


def _rows(data):
    if isinstance(data, LabeledDataset):
        return _header(data.observations.shape[1], 0, True), [
            [*x.tolist(), int(y)] for x, y in zip(data.observations, data.labels)
        ]
    # a group of N2 semantic samples becomes N2 consecutive rows sharing x
    rows = [[*x.tolist(), *s.tolist()] for x, group in zip(data.observations, data.semantic) for s in group]
    return _header(data.x_dim, data.s_dim, False), rows


def write_samples(path, data: SampleSet | LabeledDataset, fmt: str | None = None) -> int:
    """Write a sample set or labeled dataset; returns the row count."""
    path = Path(path)
    fmt = fmt or _format_of(path)
    header, rows = _rows(data)
    if fmt == "csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows([[repr(v) if isinstance(v, float) else v for v in r] for r in rows])
    elif fmt == "jsonl":
        with path.open("w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps(dict(zip(header, r))) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return len(rows)


def _format_of(path: Path) -> str:
    suffix = path.suffix.lower().lstrip(".")
    if suffix not in ("csv", "jsonl"):
        raise ValueError(f"cannot infer sample format from {path.name!r}; pass fmt")
    return suffix


def _parse_header(cols, line):
    xs = [c for c in cols if c.startswith("x")]
    rest = cols[len(xs):]
    if not xs or cols[: len(xs)] != [f"x{i}" for i in range(len(xs))]:
        raise ParseError("header must start with x0..x{p-1}", line)
    if rest == ["label"]:
        return len(xs), 0, True
    if rest and rest == [f"s{j}" for j in range(len(rest))]:
        return len(xs), len(rest), False
    raise ParseError("header must end with s0..s{q-1} or a single label column", line)


def _number(text, line):
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise ParseError(f"not a number: {text!r}", line) from None
    if not np.isfinite(v):
        raise ParseError(f"non-finite value {text!r}", line)
    return v


def _read_records(path: Path, fmt: str):
    """Yield (line number, header, values) with the header parsed from the first record."""
    if fmt == "csv":
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ParseError("empty file", 1) from None
            for row in reader:
                if not row:
                    continue
                yield reader.line_num, header, row
    else:
        header = None
        with path.open(encoding="utf-8") as fh:
            for ln, text in enumerate(fh, start=1):
                if not text.strip():
                    continue
                try:
                    rec = json.loads(text)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON: {exc.msg}", ln) from None
                if not isinstance(rec, dict):
                    raise ParseError("each line must be a JSON object", ln)
                if header is None:
                    header = list(rec)
                if list(rec) != header:
                    raise ParseError("keys differ from the first record", ln)
                yield ln, header, [rec[k] for k in header]


def load_samples(path, fmt: str | None = None) -> SampleSet | LabeledDataset:
    """Parse a csv or jsonl sample file.

    Consecutive rows sharing the same x are grouped into one observation with
    several semantic samples; every group must have the same size.

    Raises
    ------
    ParseError
        With the offending line number.
    ShapeError
        On empty files or unequal semantic group sizes.
    """
    path = Path(path)
    fmt = fmt or _format_of(path)
    layout = None
    xs, ys = [], []
    for ln, header, row in _read_records(path, fmt):
        if layout is None:
            layout = _parse_header(header, 1)
        p, q, labeled = layout
        width = p + (1 if labeled else q)
        if len(row) != width:
            raise ParseError(f"expected {width} fields, got {len(row)}", ln)
        vals = [_number(v, ln) for v in row]
        if labeled and vals[-1] != int(vals[-1]):
            raise ParseError(f"label must be an integer, got {row[-1]!r}", ln)
        xs.append(vals[:p])
        ys.append(vals[p:])
    if layout is None or not xs:
        raise ShapeError(f"{path.name} holds no samples")
    x = np.array(xs)
    y = np.array(ys)
    if layout[2]:
        labels = y[:, 0].astype(int)
        return LabeledDataset(x, labels, int(labels.max()) + 1)
    starts = np.flatnonzero(np.r_[True, np.any(x[1:] != x[:-1], axis=1)])
    sizes = np.diff(np.r_[starts, len(x)])
    if np.any(sizes != sizes[0]):
        raise ShapeError("semantic groups have unequal sizes")
    return SampleSet(x[starts], y.reshape(len(starts), sizes[0], -1))
