"""End-to-end experiment runner: target -> samples -> trajectories -> fits -> embeddings.

Everything a run produces lands in its output directory.  Files are staged in
a hidden subdirectory and moved into place only when every stage succeeds, so
a failed run leaves nothing behind.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import platform
import shutil
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import metadata
from pathlib import Path

import numpy as np

from . import store
from .bespoke import SCHEDULE_COLUMNS, FitSchedule, fit_bespoke_schedule
from .errors import ConfigError, IcdeError
from .estimators import Constant, HistogramPrior, KdeConfig, PowerLaw, Silverman, de_trajectory
from .inpca import Embedding, inpca_embed, meta_inpca, pairwise_distances
from .prob import (
    Grid,
    Trajectory,
    default_variance_grid,
    gaussian_submanifold,
    hellinger_geodesic,
    make_gaussian_target,
    make_uniform_target,
    sample,
    uniform_ignorance,
)
from .probe import ProviderSpec, SerializationConfig, icl_trajectory
from .randpdf import GpConfig, generate_random_pdf

log = logging.getLogger(__name__)

PLOT_KINDS = ("trajectory-chart", "schedule-chart", "spectrum")
GUIDE_SERIES = ("Ignorance", "Truth", "Geodesic", "Gaussian submanifold")


@dataclass(frozen=True)
class EstimatorSpec:
    """One trajectory source: ``kde``, ``histogram`` or ``provider``."""

    label: str
    kind: str
    shape: float = 2.0
    schedule: dict = field(default_factory=lambda: {"kind": "power-law", "C": 1.0, "exponent": -0.2, "unit": "domain"})
    alpha: float = 1.0
    provider: dict | None = None
    fit_bespoke: bool = True

    def __post_init__(self):
        if self.kind not in ("kde", "histogram", "provider"):
            raise ConfigError(f"unknown estimator kind {self.kind!r}")
        if self.kind == "provider" and not self.provider:
            raise ConfigError(f"estimator {self.label!r} needs a provider spec")

    def classical_config(self):
        if self.kind == "histogram":
            return HistogramPrior(self.alpha)
        sched = dict(self.schedule)
        kind = sched.pop("kind", "power-law")
        try:
            if kind == "power-law":
                schedule = PowerLaw(**sched)
            elif kind == "silverman":
                schedule = Silverman()
            elif kind == "constant":
                schedule = Constant(**sched)
            else:
                raise ConfigError(f"unknown bandwidth schedule {kind!r}")
        except TypeError as exc:
            raise ConfigError(f"bad schedule parameters for {self.label!r}: {exc}") from None
        return KdeConfig(float(self.shape), schedule)


@dataclass(frozen=True)
class EmbeddingSpec:
    metric: str = "hellinger-squared"
    guides: bool = True
    dims: int = 2
    geodesic_points: int = 32
    submanifold_points: int = 64


@dataclass(frozen=True)
class ExperimentConfig:
    target: dict
    estimators: tuple
    num_samples: int = 200
    sample_seed: int = 0
    context_lengths: tuple = tuple(range(201))
    num_digits: int = 2
    embedding: EmbeddingSpec = EmbeddingSpec()
    bespoke: bool = True
    output_dir: str = "runs/experiment"
    preset: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "context_lengths", tuple(int(n) for n in self.context_lengths))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if not self.estimators:
            raise ConfigError("at least one estimator is required")
        if self.context_lengths and max(self.context_lengths) > self.num_samples:
            raise ConfigError("context lengths exceed the sample count")
        if any(b <= a for a, b in zip(self.context_lengths, self.context_lengths[1:])):
            raise ConfigError("context lengths must be strictly increasing")
        if self.target.get("kind") not in ("gaussian", "uniform", "gp-random", "from-file"):
            raise ConfigError(f"unknown target kind {self.target.get('kind')!r}")
        labels = [e.label for e in self.estimators]
        if len(set(labels)) != len(labels):
            raise ConfigError("estimator labels must be unique")
        if set(labels) & set(GUIDE_SERIES):
            raise ConfigError(f"estimator labels may not reuse guide names {GUIDE_SERIES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimators"] = [asdict(e) for e in self.estimators]
        d["context_lengths"] = list(self.context_lengths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        try:
            d["estimators"] = tuple(EstimatorSpec(**e) for e in d["estimators"])
            if "embedding" in d:
                d["embedding"] = EmbeddingSpec(**d["embedding"])
            return cls(**d)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from None

    def dumps(self) -> str:
        return store.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        import json

        return cls.from_dict(json.loads(text))


def _kde_spec(label="gaussian-kde", shape=2.0, schedule=None):
    sched = schedule or {"kind": "power-law", "C": 1.0, "exponent": -0.2, "unit": "domain"}
    return EstimatorSpec(label, "kde", shape=shape, schedule=sched)


# target parameters are read off the figures, not printed anywhere
PRESET_TARGETS = {
    "narrow-gaussian": {"kind": "gaussian", "mean": 50.0, "sigma": 3.0},
    "wide-gaussian": {"kind": "gaussian", "mean": 50.0, "sigma": 20.0},
    "narrow-uniform": {"kind": "uniform", "lo": 45.0, "hi": 55.0},
    "wide-uniform": {"kind": "uniform", "lo": 20.0, "hi": 80.0},
    "gp-random": {"kind": "gp-random", "correlation_length": 0.1, "precision": 2, "seed": 0},
}
PRESETS = tuple(PRESET_TARGETS) + ("silverman", "full-sweep")


def preset_config(name: str, output_dir: str = "runs/experiment", **overrides) -> ExperimentConfig:
    """Named scenario; ``full-sweep`` and ``silverman`` use the narrow Gaussian target.

    ``full-sweep`` adds an in-context estimator backed by the offline kernel mock.
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    target = PRESET_TARGETS.get(name, PRESET_TARGETS["narrow-gaussian"])
    kde = _kde_spec(schedule={"kind": "silverman"}) if name == "silverman" else _kde_spec()
    estimators = (kde, EstimatorSpec("histogram", "histogram", alpha=1.0))
    if name == "full-sweep":
        mock = {"kind": "mock", "preset": "kernel-mock", "params": [5.0, 2.0]}
        estimators += (EstimatorSpec("icl-mock", "provider", provider=mock),)
    cfg = ExperimentConfig(dict(target), estimators, output_dir=output_dir, preset=name)
    return replace(cfg, **overrides) if overrides else cfg


def build_target(spec: dict, grid: Grid):
    kind = spec["kind"]
    try:
        if kind == "gaussian":
            return make_gaussian_target(float(spec["mean"]), float(spec["sigma"]), grid)
        if kind == "uniform":
            return make_uniform_target(float(spec["lo"]), float(spec["hi"]), grid)
        if kind == "gp-random":
            cfg = GpConfig(float(spec["correlation_length"]), int(spec.get("precision", 2)),
                           int(spec.get("seed", 0)))
            return generate_random_pdf(cfg, grid)
        if kind == "from-file":
            pdf = store.pdf_from_dict(store.read_json(spec["path"]))
            if pdf.grid != grid:
                raise ConfigError("target file grid does not match the experiment grid")
            return pdf
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad target spec {spec!r}: {exc}") from None
    raise ConfigError(f"unknown target kind {kind!r}")


@dataclass
class RunManifest:
    config: dict
    artifacts: list
    versions: dict
    seeds: dict
    timings: dict = field(default_factory=dict)
    output_dir: str = ""

    def to_dict(self) -> dict:
        # timings vary run to run; they live in timings.json instead
        # output location is not content; runs in different directories share a manifest
        config = {k: v for k, v in self.config.items() if k != "output_dir"}
        return {"config": config, "artifacts": self.artifacts,
                "versions": self.versions, "seeds": self.seeds}


class StageError(IcdeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy"):
        out[pkg] = metadata.version(pkg)
    try:
        out["icdetraj"] = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        out["icdetraj"] = "unknown"
    return out


def guide_curves(truth, embedding: EmbeddingSpec):
    grid = truth.grid
    ignorance = uniform_ignorance(grid)
    geodesic = hellinger_geodesic(ignorance, truth, embedding.geodesic_points)
    variances = default_variance_grid(embedding.submanifold_points)
    return {
        "Ignorance": [ignorance],
        "Truth": [truth],
        "Geodesic": geodesic,
        "Gaussian submanifold": gaussian_submanifold(grid, variances),
    }


def joint_embedding(trajectories, truth, spec: EmbeddingSpec) -> tuple[Embedding, list[dict]]:
    """Embed all trajectory points (and the guide curves, when enabled) together."""
    pdfs, points = [], []
    for t in trajectories:
        for n, p in t:
            pdfs.append(p)
            points.append({"series": t.label, "n": n})
    if spec.guides:
        for series, curve in guide_curves(truth, spec).items():
            for i, p in enumerate(curve):
                pdfs.append(p)
                points.append({"series": series, "n": i})
    labels = [f"{pt['series']}@{pt['n']}" for pt in points]
    emb = inpca_embed(pairwise_distances(pdfs, spec.metric), labels)
    return emb, points


def _aligned(trajectory: Trajectory, ns) -> Trajectory:
    keep = [(n, p) for n, p in trajectory if n in ns]
    return Trajectory(tuple(n for n, _ in keep), tuple(p for _, p in keep), trajectory.label)


def _schedules_csv(schedules: dict[str, FitSchedule]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("series",) + SCHEDULE_COLUMNS)
    for label, sch in schedules.items():
        rows = list(csv.reader(io.StringIO(sch.to_csv())))[1:]
        for row in rows:
            w.writerow([label] + row)
    return buf.getvalue()


def _embedding_json(emb: Embedding, points) -> dict:
    return {
        "labels": list(emb.point_labels),
        "points": points,
        "eigenvalues": [float(v) for v in emb.eigenvalues],
        "explained": [float(v) for v in emb.explained],
        "coords": [[float(v) for v in row] for row in emb.coords],
    }


def run_experiment(config: ExperimentConfig) -> RunManifest:
    """Run every stage and write artifacts plus ``manifest.json`` into ``config.output_dir``."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    staging = out / f".staging-{os.getpid()}"
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir()
    timings: dict[str, float] = {}
    stage = "setup"

    def begin(name):
        nonlocal stage
        stage = name
        timings[name] = time.perf_counter()

    def end(name):
        timings[name] = round(time.perf_counter() - timings[name], 6)

    try:
        grid = Grid(config.num_digits)
        ser = SerializationConfig(num_digits=config.num_digits)

        begin("target")
        truth = build_target(config.target, grid)
        store.write_json(staging / "target.json", store.pdf_to_dict(truth, spec=config.target))
        end("target")

        begin("samples")
        samples = sample(truth, config.num_samples, config.sample_seed)
        store.write_json(staging / "samples.json", store.samples_to_dict(samples))
        end("samples")

        begin("trajectories")
        trajectories = []
        for est in config.estimators:
            if est.kind == "provider":
                provider = ProviderSpec.from_dict(est.provider).build(ser)
                traj = icl_trajectory(provider, samples, config.context_lengths, ser, label=est.label)
            else:
                traj = de_trajectory(est.classical_config(), samples, config.context_lengths, grid, est.label)
            trajectories.append(traj)
        store.write_trajectories(staging / "trajectories.json", trajectories)
        end("trajectories")

        schedules: dict[str, FitSchedule] = {}
        imitations: list[Trajectory] = []
        if config.bespoke:
            begin("bespoke")
            for est, traj in zip(config.estimators, trajectories):
                if not est.fit_bespoke:
                    continue
                sch, imit = fit_bespoke_schedule(traj, samples)
                schedules[est.label] = sch
                imitations.append(imit)
            (staging / "schedules.csv").write_text(_schedules_csv(schedules), encoding="utf-8")
            store.write_trajectories(staging / "imitations.json", imitations)
            end("bespoke")

        begin("embedding")
        emb, points = joint_embedding(trajectories, truth, config.embedding)
        (staging / "embedding.csv").write_text(emb.to_csv(config.embedding.dims), encoding="utf-8")
        store.write_json(staging / "embedding.json", _embedding_json(emb, points))
        if imitations:
            fitted = [t for est, t in zip(config.estimators, trajectories) if est.fit_bespoke]
            ns = set(imitations[0].context_lengths)
            meta_set = [_aligned(t, ns) for t in fitted] + imitations
            memb = meta_inpca(meta_set)
            (staging / "meta_embedding.csv").write_text(memb.to_csv(), encoding="utf-8")
            store.write_json(staging / "meta_embedding.json",
                             _embedding_json(memb, [{"series": t.label, "n": None} for t in meta_set]))
        end("embedding")

        begin("plot-data")
        for kind in PLOT_KINDS:
            if kind == "schedule-chart" and not schedules:
                continue
            emit_plot_data(staging, kind)
        end("plot-data")
    except Exception as exc:
        shutil.rmtree(staging, ignore_errors=True)
        if isinstance(exc, (ConfigError, StageError)):
            raise
        raise StageError(stage, exc) from exc

    artifacts = []
    for path in sorted(staging.iterdir()):
        final = out / path.name
        os.replace(path, final)
        artifacts.append({"path": path.name, "sha256": store.sha256_file(final), "bytes": final.stat().st_size})
    staging.rmdir()

    seeds = {"sample_seed": config.sample_seed}
    if config.target["kind"] == "gp-random":
        seeds["target_seed"] = int(config.target.get("seed", 0))
    manifest = RunManifest(config.to_dict(), artifacts, _versions(), seeds, timings, str(out))
    store.write_json(out / "manifest.json", manifest.to_dict())
    store.write_json(out / "timings.json", timings)
    log.info("run complete: %d artifacts in %s", len(artifacts), out)
    return manifest


def load_manifest(run_dir) -> RunManifest:
    run_dir = Path(run_dir)
    d = store.read_json(run_dir / "manifest.json")
    return RunManifest(d["config"], d["artifacts"], d["versions"], d["seeds"], output_dir=str(run_dir))


def _require(run_dir: Path, name: str) -> Path:
    path = run_dir / name
    if not path.exists():
        raise FileNotFoundError(f"missing artifact {path}")
    return path


def emit_plot_data(run, kind: str) -> Path:
    """Write ``plot_<kind>.csv`` (long format) next to the run's artifacts.

    ``run`` is a run directory or a :class:`RunManifest`.
    """
    run_dir = Path(run.output_dir) if isinstance(run, RunManifest) else Path(run)
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if kind == "trajectory-chart":
        emb = store.read_json(_require(run_dir, "embedding.json"))
        dims = min(2, len(emb["coords"][0]))
        w.writerow(["series", "index", "n"] + [f"coord_{k + 1}" for k in range(dims)])
        counters: dict[str, int] = {}
        for pt, row in zip(emb["points"], emb["coords"]):
            idx = counters.get(pt["series"], 0)
            counters[pt["series"]] = idx + 1
            w.writerow([pt["series"], idx, pt["n"]] + [repr(float(v)) for v in row[:dims]])
    elif kind == "spectrum":
        emb = store.read_json(_require(run_dir, "embedding.json"))
        w.writerow(["dimension", "cumulative_explained"])
        for k, v in enumerate(emb["explained"], 1):
            w.writerow([k, repr(float(v))])
    else:
        text = _require(run_dir, "schedules.csv").read_text(encoding="utf-8")
        rows = list(csv.DictReader(io.StringIO(text)))
        cols = ["series", "n", "h", "sigma_h", "s", "sigma_s"]
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] for c in cols])
    path = run_dir / f"plot_{kind}.csv"
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def capture_session(provider: ProviderSpec, samples, context_lengths, path, config: SerializationConfig = SerializationConfig(), *, label="icl") -> tuple[Trajectory, int]:
    """Run an ICL trajectory against ``provider`` and record every answer to ``path`` (JSONL).

    Returns the trajectory and the number of recorded lines.
    """
    from .probe import JsonlRecorder

    built = provider.build(config) if isinstance(provider, ProviderSpec) else provider
    path = Path(path)
    try:
        with JsonlRecorder(path) as rec:
            traj = icl_trajectory(built, samples, context_lengths, config, label=label, on_response=rec)
    except Exception:
        path.unlink(missing_ok=True)
        raise
    return traj, rec.lines


def replay_session(path, samples, context_lengths, config: SerializationConfig = SerializationConfig(), *, label="icl") -> Trajectory:
    provider = ProviderSpec("replay", path=str(path)).build(config)
    return icl_trajectory(provider, samples, context_lengths, config, label=label)


def max_offcurve(trajectory: Trajectory, curve) -> float:
    """Largest distance from any trajectory point to the nearest point of ``curve``."""
    from .prob import distance_to_curve

    return float(np.max([distance_to_curve(p, curve) for p in trajectory.pdfs]))
