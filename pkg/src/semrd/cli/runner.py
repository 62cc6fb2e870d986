"""Execute a validated run configuration and write points, mirror and manifest."""

from __future__ import annotations

import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np
import scipy
import sklearn
import yaml

from .. import __version__
from ..ba import BAConfig, ba_solve, rate_bounds
from ..core import (
    LN2,
    DiscreteSemanticSource,
    DistortionSpec,
    RDPoint,
    build_source,
    cross_entropy_distortion,
    hamming_distortion,
    make_distortion_spec,
    squared_error_distortion,
)
from ..dual import DualParams
from ..exceptions import ConfigError, ParseError, SemRDError, ShapeError
from ..neural import CascadeConfig, GenerativeNetwork, NeuralDistortions, TrainConfig, estimate_point, train_cascade, train_nesrd
from ..oracle import OracleConfig, brute_force_srdf
from ..sources import (
    DiscretizationGrid,
    GaussianSourceSpec,
    LabeledDataset,
    SampleSet,
    discretize_gaussian,
    gaussian_benchmark,
    load_samples,
    sample_gaussian,
    synth_labeled,
    write_samples,
)
from .bisect import bisect_to_target
from .config import config_hash, load_config, slope_grid
from .points import point_row, write_points

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
# evaluation samples use a seed disjoint from the training draw
EVAL_SEED_OFFSET = 1_000_003
MANIFEST_VERSION = 1


def _failed(method, a1, a2, exc) -> RDPoint:
    nan = math.nan
    return RDPoint(
        method=method, alpha1=a1, alpha2=a2, d_o=nan, d_s=nan, rate_nats=nan,
        iterations=0, converged=False, info={"error": f"{type(exc).__name__}: {exc}"},
    )


def _pool_map(fn, jobs, workers):
    """Ordered map; results come back in job order whatever the completion order."""
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(fn, jobs))
    return [fn(job) for job in jobs]


def _timed(fn, method, a1, a2):
    start = time.perf_counter()
    try:
        point = fn()
    except (SemRDError, FloatingPointError) as exc:
        point = _failed(method, a1, a2, exc)
    return point, time.perf_counter() - start


# -- sources ------------------------------------------------------------------------------


@dataclass
class Problem:
    """A discrete source with distortions; ``discretized`` is set for Gaussian sources."""

    source: DiscreteSemanticSource
    spec: DistortionSpec
    discretized: object = None


def _fixture_record(name: str) -> dict:
    try:
        text = resources.files("semrd").joinpath("data", f"{name}.json").read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"no shipped fixture named {name!r}", field="source.fixture") from exc
    return json.loads(text)


def _read_structured(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read source file {path}: {exc}", field="source.file") from exc
    return yaml.safe_load(text)


def _gaussian_spec(value, field, seed) -> GaussianSourceSpec:
    if value == "benchmark":
        return gaussian_benchmark(seed)
    if isinstance(value, dict) and {"k_x", "h", "k_w"} <= value.keys():
        try:
            return GaussianSourceSpec(
                np.asarray(value["k_x"], float), np.asarray(value["h"], float), np.asarray(value["k_w"], float), seed
            )
        except (SemRDError, ValueError) as exc:
            raise ConfigError(f"invalid Gaussian source: {exc}", field=field) from exc
    raise ConfigError("Gaussian source must be 'benchmark' or a mapping with k_x, h, k_w", field=field)


def _axis_matrix(name, points_x, reproductions, field):
    if isinstance(name, list):
        return np.asarray(name, dtype=float)
    if name in (None, "hamming"):
        return hamming_distortion(len(points_x), len(reproductions))
    if name == "squared-error":
        return squared_error_distortion(points_x, reproductions)
    raise ConfigError(f"{name!r} is not available for this axis of a discrete source", field=field)


def _discrete_problem(record: dict, cfg: dict, field: str) -> Problem:
    if "joint" not in record:
        raise ConfigError("a discrete source needs a 'joint' table", field=field)
    try:
        src = build_source(record["joint"])
    except SemRDError as exc:
        raise ConfigError(f"invalid joint table: {exc}", field=field) from exc
    dist = cfg["distortion"]
    obs = dist["observation"] if dist["observation"] is not None else record.get("d_o")
    sem = dist["semantic"] if dist["semantic"] is not None else record.get("d_s")
    x_values = np.asarray(dist["x_values"] if dist["x_values"] is not None else np.arange(src.x_size), float)
    s_values = np.asarray(dist["s_values"] if dist["s_values"] is not None else np.arange(src.s_size), float)
    d_o = _axis_matrix(obs, x_values, x_values, "distortion.observation")
    if sem == "cross-entropy":
        reps = dist["semantic_reproductions"]
        if reps is None:
            raise ConfigError("cross-entropy needs distortion.semantic_reproductions", field="distortion.semantic_reproductions")
        d_s = cross_entropy_distortion(np.eye(src.s_size), reps)
    else:
        d_s = _axis_matrix(sem, s_values, s_values, "distortion.semantic")
    try:
        return Problem(src, make_distortion_spec(src, d_o, d_s))
    except SemRDError as exc:
        raise ConfigError(f"invalid distortion matrices: {exc}", field="distortion") from exc


def _check_squared(cfg):
    for axis in ("observation", "semantic"):
        if cfg["distortion"][axis] not in (None, "squared-error"):
            raise ConfigError("Gaussian sources use squared-error distortions", field=f"distortion.{axis}")


def _grid_for(spec: GaussianSourceSpec, cfg: dict) -> DiscretizationGrid:
    disc = cfg["discretization"]
    s_levels = disc["levels"] if disc["s_levels"] is None else disc["s_levels"]
    try:
        return DiscretizationGrid.around(spec, disc["levels"], s_levels, disc["sigmas"])
    except ValueError as exc:
        raise ConfigError(f"invalid discretization: {exc}", field="discretization") from exc


def discrete_problem(cfg: dict) -> Problem:
    """The discrete problem a ba/sweep/oracle run works on."""
    kind, value = next(iter(cfg["source"].items()))
    if kind == "fixture":
        return _discrete_problem(_fixture_record(value), cfg, "source.fixture")
    if kind == "joint":
        return _discrete_problem({"joint": value}, cfg, "source.joint")
    if kind == "file":
        record = _read_structured(Path(value))
        if isinstance(record, dict) and "joint" in record:
            return _discrete_problem(record, cfg, "source.file")
        kind, value = "gaussian", record
    if kind == "gaussian":
        _check_squared(cfg)
        spec = _gaussian_spec(value, "source.gaussian", cfg["seed"])
        disc = discretize_gaussian(spec, _grid_for(spec, cfg), cfg["discretization"]["mc_samples"], seed=cfg["seed"])
        return Problem(disc.source, disc.distortion_spec(), disc)
    raise ConfigError(f"source kind {kind!r} does not define a discrete problem", field=f"source.{kind}")


def _gaussian_source(cfg) -> GaussianSourceSpec:
    kind, value = next(iter(cfg["source"].items()))
    if kind == "file":
        value = _read_structured(Path(value))
    elif kind != "gaussian":
        raise ConfigError("this mode needs a Gaussian source", field="source")
    return _gaussian_spec(value, f"source.{kind}", cfg["seed"])


def _quantizer(spec, cfg):
    grid = _grid_for(spec, cfg)

    def quantize(samples: SampleSet) -> SampleSet:
        x = grid.x_centers()[grid.x_cells(samples.observations)]
        flat = samples.semantic.reshape(-1, samples.s_dim)
        s = grid.s_centers()[grid.s_cells(flat)].reshape(samples.semantic.shape)
        return SampleSet(x, s, samples.latent, samples.seed)

    return quantize


def _sample_discrete(cfg, n1, n2, m, latent_dim, seed) -> SampleSet:
    kind, value = next(iter(cfg["source"].items()))
    record = _fixture_record(value) if kind == "fixture" else {"joint": value}
    src = build_source(record["joint"])
    dist = cfg["distortion"]
    x_values = np.asarray(dist["x_values"] if dist["x_values"] is not None else np.arange(src.x_size), float)
    s_values = np.asarray(dist["s_values"] if dist["s_values"] is not None else np.arange(src.s_size), float)
    x_rng, s_rng, z_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    xi = x_rng.choice(src.x_size, size=n1, p=src.px)
    cdf = np.cumsum(src.ps_given_x[xi], axis=1)
    si = (s_rng.random((n1, n2, 1)) > cdf[:, None, :]).sum(axis=2).clip(max=src.s_size - 1)
    return SampleSet(x_values[xi][:, None], s_values[si][..., None], z_rng.standard_normal((m, latent_dim)), seed)


def nesrd_samples(cfg: dict) -> tuple[SampleSet, SampleSet]:
    """Training and held-out evaluation sample sets for mode nesrd."""
    nc = cfg["nesrd"]
    latent_dim = nc["layers"][0]
    seed, eval_seed = cfg["seed"], cfg["seed"] + EVAL_SEED_OFFSET
    kind, value = next(iter(cfg["source"].items()))
    if kind in ("fixture", "joint"):
        for axis in ("observation", "semantic"):
            if cfg["distortion"][axis] not in (None, "squared-error"):
                raise ConfigError("mode nesrd uses squared-error distortions on discrete sources", field=f"distortion.{axis}")
        train = _sample_discrete(cfg, nc["n1"], nc["n2"], nc["m"], latent_dim, seed)
        held = _sample_discrete(cfg, nc["eval_n1"], nc["n2"], nc["m"], latent_dim, eval_seed)
        return train, held
    if kind == "file" and Path(value).suffix.lower() in (".csv", ".jsonl"):
        data = load_samples(value)
        if isinstance(data, LabeledDataset):
            data = data.to_samples()
        rng = np.random.default_rng(seed)
        perm = rng.permutation(data.n1)
        n_eval = max(1, data.n1 // 5)
        bank = lambda s: np.random.default_rng(s).standard_normal((nc["m"], latent_dim))  # noqa: E731
        train = SampleSet(data.observations[perm[n_eval:]], data.semantic[perm[n_eval:]], bank(seed), seed)
        held = SampleSet(data.observations[perm[:n_eval]], data.semantic[perm[:n_eval]], bank(eval_seed), eval_seed)
        return train, held
    _check_squared(cfg)
    spec = _gaussian_source(cfg)
    train = sample_gaussian(spec, nc["n1"], nc["n2"], m=nc["m"], latent_dim=latent_dim, seed=seed)
    held = sample_gaussian(spec, nc["eval_n1"], nc["n2"], m=nc["m"], latent_dim=latent_dim, seed=eval_seed)
    if nc["quantize"]:
        quantize = _quantizer(spec, cfg)
        train, held = quantize(train), quantize(held)
    return train, held


def labeled_dataset(cfg: dict) -> LabeledDataset:
    kind, value = next(iter(cfg["source"].items()))
    if kind == "labeled":
        if not isinstance(value, dict) or set(value) - {"classes", "means", "cov", "n"} or len(value) != 4:
            raise ConfigError("labeled source needs exactly classes, means, cov, n", field="source.labeled")
        try:
            return synth_labeled(int(value["classes"]), value["means"], value["cov"], int(value["n"]), seed=cfg["seed"])
        except (SemRDError, ValueError) as exc:
            raise ConfigError(f"invalid labeled source: {exc}", field="source.labeled") from exc
    if kind == "file":
        data = load_samples(value)
        if isinstance(data, LabeledDataset):
            return data
    raise ConfigError("mode cascade needs a labeled source", field="source")


# -- per-point jobs (top level so worker processes can import them) -------------------------


def _ba_job(job):
    src, spec, cfg, (a1, a2) = job
    return _timed(lambda: ba_solve(src, spec, cfg.with_slopes(a1, a2))[0], "ba", a1, a2)


def _target_job(job):
    src, spec, cfg, target = job
    return _timed(lambda: bisect_to_target(src, spec, target, cfg), "ba", 0.0, 0.0)


def _oracle_job(job):
    src, spec, cfg, target = job
    return _timed(lambda: brute_force_srdf(src, spec, target[0], target[1], cfg), "oracle", 0.0, 0.0)


def _bounds_job(job):
    src, spec, cfg, point = job
    if not math.isfinite(point.rate_nats):
        return math.nan, math.nan
    try:
        r_o, r_s = rate_bounds(src, spec, point.d_o, point.d_s, cfg)
    except SemRDError:
        return math.nan, math.nan
    return r_o / LN2, r_s / LN2


def _nesrd_job(job):
    train, held, nc, seed, (a1, a2) = job
    params = DualParams(a1, a2)

    def run():
        net = GenerativeNetwork(tuple(nc["layers"]), train.s_dim, seed=seed)
        tcfg = TrainConfig(
            learning_rate=nc["learning_rate"], epochs=nc["epochs"], batch_n1=nc["batch_n1"],
            batch_m=nc["batch_m"], momentum=nc["momentum"], seed=seed,
        )
        result = train_nesrd(train, params, tcfg, net, NeuralDistortions())
        return estimate_point(result.network, held, params)

    return _timed(run, "nesrd", a1, a2)


def cascade_config(cfg: dict) -> CascadeConfig:
    cc = dict(cfg["cascade"])
    train = TrainConfig(
        learning_rate=cc.pop("learning_rate"), epochs=cc.pop("epochs"), batch_n1=cc.pop("batch_n1"),
        batch_m=cc.pop("batch_m"), momentum=cc.pop("momentum"), seed=cfg["seed"],
    )
    cc["generator_hidden"] = tuple(cc["generator_hidden"])
    cc["classifier_hidden"] = tuple(cc["classifier_hidden"])
    return CascadeConfig(train=train, seed=cfg["seed"], **cc)


def _cascade_job(job):
    data, ccfg, (a1, a2) = job
    return _timed(lambda: train_cascade(data, DualParams(a1, a2), ccfg).point, "cascade", a1, a2)


# -- modes ------------------------------------------------------------------------------------


def _run_jobs(job_fn, jobs, workers):
    results = _pool_map(job_fn, jobs, workers)
    return [r[0] for r in results], [r[1] for r in results]


def run_discrete(cfg: dict, workers: int):
    """Modes ba, sweep and oracle."""
    problem = discrete_problem(cfg)
    src, spec = problem.source, problem.spec
    bcfg = BAConfig(max_iters=cfg["ba"]["max_iters"], tol=cfg["ba"]["tol"])
    points, seconds, extras = [], [], []
    grid = slope_grid(cfg)
    if cfg["mode"] == "oracle":
        ocfg = OracleConfig(restarts=cfg["oracle"]["restarts"], max_steps=cfg["oracle"]["max_steps"], tol=cfg["oracle"]["tol"], seed=cfg["seed"])
        targets = [tuple(t) for t in cfg["targets"]]
        pts, secs = _run_jobs(_oracle_job, [(src, spec, ocfg, t) for t in targets], workers)
        points += pts
        seconds += secs
        extras += [{"target_d_o": float(t[0]), "target_d_s": float(t[1])} for t in targets]
    else:
        if grid is not None:
            pts, secs = _run_jobs(_ba_job, [(src, spec, bcfg, g) for g in grid], workers)
            points += pts
            seconds += secs
            extras += [{} for _ in pts]
        if cfg["mode"] == "ba" and cfg["targets"]:
            targets = [tuple(float(v) for v in t) for t in cfg["targets"]]
            pts, secs = _run_jobs(_target_job, [(src, spec, bcfg, t) for t in targets], workers)
            points += pts
            seconds += secs
            extras += [{"target_d_o": t[0], "target_d_s": t[1]} for t in targets]
    if cfg["bounds"] and cfg["mode"] != "oracle":
        bounds = _pool_map(_bounds_job, [(src, spec, bcfg, p) for p in points], workers)
        for extra, (r_o, r_s) in zip(extras, bounds):
            extra.update(r_o_bits=r_o, r_s_bits=r_s)
    settings = {"ba": cfg["ba"], "x_size": src.x_size, "s_size": src.s_size, "pair_shape": list(spec.pair_shape)}
    return points, seconds, extras, settings


def run_nesrd(cfg: dict, workers: int):
    train, held = nesrd_samples(cfg)
    nc = cfg["nesrd"]
    jobs = [(train, held, nc, cfg["seed"], g) for g in slope_grid(cfg)]
    results = _pool_map(_nesrd_job, jobs, workers)
    settings = {
        "nesrd": dict(nc, latent_dim=nc["layers"][0]),
        "train_n1": train.n1, "eval_n1": held.n1, "n2": train.n2, "m": train.m,
    }
    return [r[0] for r in results], [r[1] for r in results], [{} for _ in results], settings


def run_cascade(cfg: dict, workers: int):
    data = labeled_dataset(cfg)
    ccfg = cascade_config(cfg)
    results = _pool_map(_cascade_job, [(data, ccfg, g) for g in slope_grid(cfg)], workers)
    settings = {"cascade": cfg["cascade"], "n": data.n, "classes": data.class_count}
    return [r[0] for r in results], [r[1] for r in results], [{} for _ in results], settings


def run_generate(cfg: dict, out_dir: Path):
    spec = _gaussian_source(cfg)
    gen = cfg["generate"]
    samples = sample_gaussian(spec, gen["n1"], gen["n2"], seed=cfg["seed"])
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"samples.{gen['format']}"
    rows = write_samples(path, samples, gen["format"])
    return {"samples_file": path.name, "sample_rows": rows, "generate": gen}


def _manifest(cfg, seed_used, workers, settings, seconds, total, rows, failed, files):
    return {
        "version": MANIFEST_VERSION,
        "mode": cfg["mode"],
        "config_hash": config_hash(cfg),
        "seed": seed_used,
        "workers": workers,
        "versions": {
            "semrd": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__,
        },
        "settings": settings,
        "wall_seconds": {"total": total, "points": seconds},
        "rows": rows,
        "failed_rows": failed,
        "files": files,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


@dataclass
class RunOutcome:
    exit_code: int
    rows: list
    out_dir: Path | None
    message: str = ""


def execute(cfg: dict) -> RunOutcome:
    """Run a validated config; returns the exit code, the rows and the output directory."""
    start = time.perf_counter()
    out_dir = Path(cfg["output"]["dir"])
    workers = cfg["workers"]
    mode = cfg["mode"]
    if mode == "gaussian-gen":
        settings = run_generate(cfg, out_dir)
        points, seconds, extras = [], [], []
    elif mode in ("ba", "sweep", "oracle"):
        points, seconds, extras, settings = run_discrete(cfg, workers)
    elif mode == "nesrd":
        points, seconds, extras, settings = run_nesrd(cfg, workers)
    else:
        points, seconds, extras, settings = run_cascade(cfg, workers)
    rows = []
    for point, extra in zip(points, extras):
        extra = dict(extra)
        if cfg["capacity_bits"] is not None:
            cap = float(cfg["capacity_bits"])
            extra["capacity_bits"] = cap
            extra["achievable"] = bool(point.rate_bits <= cap) if math.isfinite(point.rate_nats) else None
        rows.append(point_row(point, **extra))
    files = [p.name for p in write_points(out_dir, rows, cfg["output"]["format"])] if mode != "gaussian-gen" else []
    failed = [i for i, r in enumerate(rows) if r["error"]]
    manifest = _manifest(cfg, cfg["seed"], workers, settings, seconds, time.perf_counter() - start, len(rows), failed, files)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str) + "\n", encoding="utf-8")
    code = EXIT_PARTIAL if failed else EXIT_OK
    message = f"{len(rows)} rows, {len(failed)} failed" if mode != "gaussian-gen" else f"wrote {settings['samples_file']}"
    return RunOutcome(code, rows, out_dir, message)


def run(config_path, seed: int | None = None) -> RunOutcome:
    """Load, validate and execute; configuration problems give exit code 1."""
    try:
        cfg = load_config(config_path, seed=seed)
        return execute(cfg)
    except ConfigError as exc:
        return RunOutcome(EXIT_CONFIG, [], None, f"config error: {exc}")
    except (ParseError, ShapeError) as exc:
        return RunOutcome(EXIT_CONFIG, [], None, f"source error: {exc}")
