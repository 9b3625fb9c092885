"""Batch pipeline: harvest, select, condense, cluster, validate, persist."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import multiprocessing as mp
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import cluster as clu
from .envelope import ALL_EVENTS, DEFAULT_EVENTS, EnvelopeProfile, assemble_features, component_profiles
from .signal import Band, Recording, band_grid, filter_array, read_recording, reject_noisy_channels, \
    reject_outlier_epochs, segment
from .spoc import Component
from .sweep import SweepSpace, harvest, read_harvest, select_components, write_harvest
from .validate import ClusterReport, cluster_report, functional_summary

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


class PipelineError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    recording: str = ""
    target: str = ""
    output: str = "oscmine-out"
    seed: int = 0
    workers: int = 1
    training_event: str = "go-cue"
    # sweep space; None means the full default
    t0_values: list[float] = field(default_factory=lambda: [-1.0, -0.75, -0.5])
    n_bands: int = 45
    f0_range: list[float] = field(default_factory=lambda: [1.0, 95.0])
    df_range: list[float] = field(default_factory=lambda: [2.0, 10.0])
    max_rank: int = 8
    n_alphas: int = 15
    alpha_range: list[float] = field(default_factory=lambda: [1e-8, 1e-3])
    n_folds: int = 5
    dt: float = 1.0
    # preprocessing
    reject_channels: bool = True
    reject_epochs: bool = True
    # selection
    zauc_min: float = 0.6
    p_art_max: float = 1e-5
    # clustering
    cluster_events: list[str] = field(default_factory=lambda: list(DEFAULT_EVENTS))
    stat_scale: float = 1.0
    n_samples: int = 2000
    n_reps: int = 12
    s_hom: float = 0.2
    # validation
    validation_events: list[str] = field(default_factory=lambda: list(ALL_EVENTS))
    scatter_events: list[str] = field(default_factory=lambda: ["get-ready", "hit4"])

    def __post_init__(self):
        if not (0 <= self.zauc_min <= 1 and 0 <= self.p_art_max <= 1):
            raise ValueError("selection thresholds must lie in [0, 1]")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def space(self) -> SweepSpace:
        bands = band_grid(self.n_bands, self.f0_range, self.df_range)
        if self.n_alphas == 1:
            alphas = (float(self.alpha_range[0]),)
        else:
            alphas = tuple(np.logspace(np.log10(self.alpha_range[0]), np.log10(self.alpha_range[1]),
                                       self.n_alphas))
        return SweepSpace(tuple(float(t) for t in self.t0_values), tuple(bands),
                          tuple(range(1, self.max_rank + 1)), alphas, self.n_folds, self.dt,
                          self.training_event)

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self, keys: Sequence[str]) -> str:
        d = {k: getattr(self, k) for k in keys}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


SECTIONS = {
    "input": {"recording", "target", "training_event"},
    "output": {"output"},
    "run": {"seed", "workers"},
}


def load_config(path: str | Path, **overrides) -> PipelineConfig:
    """Read a TOML config. Sections are flattened; ``[output] directory`` and
    ``[input]`` paths are resolved relative to the config file."""
    path = Path(path)
    raw = tomllib.loads(path.read_text())
    flat: dict = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    if "directory" in flat:
        flat["output"] = flat.pop("directory")
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(flat) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key in ("recording", "target", "output"):
        if key in flat and not Path(flat[key]).is_absolute():
            flat[key] = str((path.parent / flat[key]))
    flat.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**flat)


def read_target(path: str | Path) -> np.ndarray:
    """Two-column CSV ``trial_index,z``; rows are sorted by trial index."""
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append((int(r["trial_index"]), float(r["z"])))
    if not rows:
        raise ValueError(f"{path}: no target values")
    rows.sort()
    idx = [i for i, _ in rows]
    if idx != list(range(len(rows))):
        raise ValueError(f"{path}: trial indices must be 0..n-1 without gaps")
    return np.array([v for _, v in rows])


# --- persistence helpers ---------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(v) for v in r])


def write_profiles(path: Path, ids: Sequence[int], profiles: Sequence[EnvelopeProfile]) -> None:
    rows = []
    n = 0
    for cid, p in zip(ids, profiles):
        for ev, v in p.values.items():
            n = len(v)
            rows.append([cid, ev, *v])
    _write_csv(path, ["component_id", "event"] + [f"s{i}" for i in range(n)], rows)


def read_profiles(path: Path, fs: float) -> dict[int, EnvelopeProfile]:
    out: dict[int, dict] = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        next(rd)
        for r in rd:
            out.setdefault(int(r[0]), {})[r[1]] = np.array(r[2:], dtype=float)
    return {k: EnvelopeProfile(v, fs) for k, v in out.items()}


# --- stages --------------------------------------------------------------------


def _profile_job(args):
    band, W, recording, events = args
    filtered = filter_array(recording.data, band, recording.fs)
    out = []
    for start in range(0, W.shape[1], 16):
        out.extend(component_profiles(W[:, start:start + 16], filtered, recording, events))
    return out


_SHARED: dict = {}


def _profile_worker(i):
    band, W, events = _SHARED["jobs"][i]
    return _profile_job((band, W, _SHARED["recording"], events))


def compute_profiles(recording: Recording, components: Sequence[Component], events: Sequence[str],
                     workers: int = 1) -> list[EnvelopeProfile]:
    """Event-locked log-envelope profiles, filtering once per distinct band."""
    groups: dict[Band, list[int]] = {}
    for i, c in enumerate(components):
        groups.setdefault(c.config.band, []).append(i)
    keys = list(groups)
    jobs = [(b, np.column_stack([components[i].w for i in groups[b]]), list(events)) for b in keys]
    if workers > 1 and len(jobs) > 1:
        _SHARED.update(recording=recording, jobs=jobs)
        try:
            with ProcessPoolExecutor(workers, mp_context=mp.get_context("fork")) as ex:
                results = list(ex.map(_profile_worker, range(len(jobs))))
        finally:
            _SHARED.clear()
    else:
        results = [_profile_job((b, W, recording, ev)) for b, W, ev in jobs]
    out: list[EnvelopeProfile | None] = [None] * len(components)
    for b, res in zip(keys, results):
        for i, p in zip(groups[b], res):
            out[i] = p
    return out


@dataclass
class StageContext:
    cfg: PipelineConfig
    out: Path
    resume: bool
    timings: dict = field(default_factory=dict)

    def done(self, stage: str, keys: Sequence[str]) -> bool:
        marker = self.out / stage / ".done"
        if not (self.resume and marker.exists()):
            return False
        return json.loads(marker.read_text()).get("fingerprint") == self.cfg.fingerprint(keys)

    def mark(self, stage: str, keys: Sequence[str]) -> None:
        marker = self.out / stage / ".done"
        marker.parent.mkdir(parents=True, exist_ok=True)
        marker.write_text(json.dumps({"fingerprint": self.cfg.fingerprint(keys)}))


HARVEST_KEYS = ["recording", "target", "training_event", "t0_values", "n_bands", "f0_range",
                "df_range", "max_rank", "n_alphas", "alpha_range", "n_folds", "dt",
                "reject_channels", "reject_epochs"]
FEATURE_KEYS = HARVEST_KEYS + ["zauc_min", "p_art_max", "cluster_events", "validation_events",
                               "stat_scale"]
CLUSTER_KEYS = FEATURE_KEYS + ["seed", "n_samples", "n_reps", "s_hom"]


def _preprocess(cfg: PipelineConfig, recording: Recording, z: np.ndarray):
    info = {"n_channels_in": recording.n_channels, "rejected_channels": [],
            "n_trials": int(z.size), "rejected_trials": 0}
    t_lo = min(cfg.t0_values)
    t_hi = max(cfg.t0_values) + cfg.dt
    ep = segment(recording, cfg.training_event, t_lo, t_hi - t_lo)
    if cfg.reject_channels and ep.n_epochs >= 5 and recording.n_channels >= 2:
        keep = reject_noisy_channels(recording, ep)
        if not keep.all():
            info["rejected_channels"] = [c for c, k in zip(recording.channel_names, keep) if not k]
            recording = recording.pick_channels(keep)
            ep = segment(recording, cfg.training_event, t_lo, t_hi - t_lo)
    trial_keep = None
    if cfg.reject_epochs and ep.n_epochs >= 5:
        trial_keep = np.zeros(z.size, dtype=bool)
        trial_keep[ep.event_index[reject_outlier_epochs(ep)]] = True
        info["rejected_trials"] = int(z.size - trial_keep.sum())
    info["n_channels"] = recording.n_channels
    return recording, trial_keep, info


def run_pipeline(cfg: PipelineConfig, resume: bool = False) -> dict:
    """Run every stage and return the manifest; raises PipelineError on bad input."""
    rec_path, z_path = Path(cfg.recording), Path(cfg.target)
    if not cfg.recording or not cfg.target:
        raise PipelineError("config must name a recording and a target file")
    try:
        recording = read_recording(rec_path)
        z = read_target(z_path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise PipelineError(f"cannot read inputs: {exc}") from exc
    n_train = recording.event_samples(cfg.training_event).size
    if n_train != z.size:
        raise PipelineError(f"target has {z.size} rows but recording has {n_train} "
                            f"{cfg.training_event!r} events")

    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    ctx = StageContext(cfg, out, resume)
    space = cfg.space()

    t = time.perf_counter()
    recording, trial_keep, pre_info = _preprocess(cfg, recording, z)
    ctx.timings["preprocess"] = time.perf_counter() - t

    # 1. harvest
    t = time.perf_counter()
    if ctx.done("harvest", HARVEST_KEYS):
        harvested = read_harvest(out / "harvest", recording.n_channels)
    else:
        harvested = harvest(recording, z, space, workers=cfg.workers, trial_keep=trial_keep)
        write_harvest(harvested, out / "harvest")
        ctx.mark("harvest", HARVEST_KEYS)
    ctx.timings["harvest"] = time.perf_counter() - t
    comps = harvested.components

    # 2. denoise
    ids = {id(c): i for i, c in enumerate(comps)}
    selected, frac = select_components(comps, cfg.zauc_min, cfg.p_art_max)
    sel_ids = [ids[id(c)] for c in selected]
    _write_csv(out / "selection.csv", ["component_id"], [[i] for i in sel_ids])

    # 3. envelope features
    t = time.perf_counter()
    events = [e for e in dict.fromkeys(list(cfg.validation_events) + list(cfg.cluster_events))
              if recording.event_samples(e).size]
    missing = [e for e in cfg.cluster_events if e not in events]
    if missing:
        raise PipelineError(f"recording lacks clustering events {missing}")
    feat_dir = out / "features"
    if ctx.done("features", FEATURE_KEYS):
        prof_map = read_profiles(feat_dir / "profiles.csv", recording.fs)
        profiles = [prof_map[i] for i in sel_ids]
        E = np.loadtxt(feat_dir / "features.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1:] \
            if sel_ids else np.zeros((0, 12))
    else:
        profiles = compute_profiles(recording, selected, events, cfg.workers)
        write_profiles(feat_dir / "profiles.csv", sel_ids, profiles)
        if len(selected) > 10:
            E, _ = assemble_features(profiles, cfg.cluster_events, stat_scale=cfg.stat_scale)
        else:
            E = np.zeros((len(selected), 12))
        _write_csv(feat_dir / "features.csv",
                   ["component_id"] + [f"kpca{i + 1}" for i in range(10)] + ["mu", "sigma"],
                   [[cid, *row] for cid, row in zip(sel_ids, E)])
        ctx.mark("features", FEATURE_KEYS)
    ctx.timings["features"] = time.perf_counter() - t

    # 4. clustering
    t = time.perf_counter()
    runs = clu.clustering_runs(E, cfg.n_samples, cfg.n_reps, cfg.seed, cfg.s_hom,
                               workers=cfg.workers) if len(selected) else []
    run_rows, assign_rows = [], []
    for r, res in enumerate(runs):
        run_rows.append([r, res.epsilon, res.n_hom, res.n_clusters, res.outlier_fraction,
                         res.labels.size, res.diagnostic or ""])
        sil = res.silhouettes if res.silhouettes is not None else np.full(res.labels.size, np.nan)
        for local, (sid, lab, core, s) in enumerate(zip(res.sample_ids, res.labels,
                                                        res.core_flags, sil)):
            assign_rows.append([r, int(sid), sel_ids[sid], int(lab), int(bool(core)), s])
    _write_csv(out / "clustering" / "runs.csv",
               ["run_id", "epsilon", "n_hom", "n_clusters", "outlier_fraction", "n_samples",
                "diagnostic"], run_rows)
    _write_csv(out / "clustering" / "assignments.csv",
               ["run_id", "sample_id", "component_id", "label", "core", "silhouette"], assign_rows)
    ctx.timings["clustering"] = time.perf_counter() - t

    # 5. validation
    t = time.perf_counter()
    val_events = [e for e in cfg.validation_events if e in events]
    reports: list[ClusterReport] = []
    if selected:
        patterns = np.array([c.a for c in selected])
        f0 = np.array([c.config.f0 for c in selected])
        zs = np.array([c.z_auc for c in selected])
        pa = np.array([c.p_art for c in selected])
        for r, res in enumerate(runs):
            sid = res.sample_ids
            sil_full = np.full(len(selected), np.nan)
            if res.silhouettes is not None:
                sil_full[sid] = res.silhouettes
            for k in range(res.n_clusters):
                members = sid[res.labels == k]
                reports.append(cluster_report(k, members, E, sil_full, [p.values for p in profiles],
                                              patterns, f0, val_events, recording.fs, zs, pa, r))
    write_reports(out / "validation", reports, val_events, cfg.scatter_events, sel_ids)
    ctx.timings["validation"] = time.perf_counter() - t

    manifest = {
        "config": cfg.to_dict(),
        "preprocessing": pre_info,
        "counts": {
            "omega": space.size,
            "omega_harvested": len(comps),
            "skipped_trainings": len(harvested.skipped),
            "omega_sel": len(selected),
            "selection_fraction": frac,
            "runs": [{"run_id": r, "n_samples": int(res.labels.size), "n_clusters": res.n_clusters,
                      "n_hom": int(res.n_hom), "epsilon": res.epsilon,
                      "n_outliers": int((res.labels < 0).sum()),
                      "cluster_sizes": [int((res.labels == k).sum()) for k in range(res.n_clusters)]}
                     for r, res in enumerate(runs)],
        },
        "events": events,
        "timings": ctx.timings,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True, default=_json_default))
    return manifest


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o))


REPORT_FIELDS = ["run_id", "cluster_id", "size", "representative", "mean_silhouette",
                 "min_silhouette", "ic_mse", "icph", "f0_std", "mean_z_auc", "mean_p_art"]


def write_reports(directory: Path, reports: Sequence[ClusterReport], events: Sequence[str],
                  scatter_events: Sequence[str], sel_ids: Sequence[int]) -> None:
    rows = []
    for r in reports:
        rows.append([r.run_id, r.cluster_id, r.size, sel_ids[r.representative], r.mean_silhouette,
                     r.min_silhouette, r.ic_mse, r.icph, r.f0_std, r.mean_z_auc, r.mean_p_art]
                    + [r.delta_phi_max[e] for e in events])
    _write_csv(directory / "cluster_reports.csv",
               REPORT_FIELDS + [f"dphi_{e}" for e in events], rows)
    func_rows, _ = functional_summary(reports, events)
    _write_csv(directory / "functional.csv", ["run_id", "cluster_id", "event", "delta_phi_max"],
               func_rows)
    ex, ey = scatter_events
    scat = [[r.run_id, r.cluster_id, r.delta_phi_max[ex], r.delta_phi_max[ey]]
            for r in reports if ex in r.delta_phi_max and ey in r.delta_phi_max]
    _write_csv(directory / "scatter.csv", ["run_id", "cluster_id", f"dphi_{ex}", f"dphi_{ey}"], scat)


# --- plot data -------------------------------------------------------------------


def emit_plots(directory: str | Path, run_id: int = 0, render: bool = False) -> list[Path]:
    """Envelope-panel CSVs (one per cluster and event) and ERD/ERS scatter data.

    Panel schema: ``time`` column, one ``c<component_id>`` column per member,
    then ``mean``. Scatter schema: ``cluster_id, x, y`` with the event names
    in the header.
    """
    d = Path(directory)
    try:
        manifest = json.loads((d / MANIFEST).read_text())
        with open(d / "clustering" / "assignments.csv", newline="") as fh:
            assign = [r for r in csv.DictReader(fh) if int(r["run_id"]) == run_id]
        fs = float(json.loads(Path(_header_path(manifest["config"]["recording"])).read_text())["fs"])
        profiles = read_profiles(d / "features" / "profiles.csv", fs)
        with open(d / "validation" / "scatter.csv", newline="") as fh:
            scatter = list(csv.reader(fh))
    except (OSError, KeyError, ValueError) as exc:
        raise PipelineError(f"missing pipeline artifacts in {d}: {exc}") from exc
    plot_dir = d / "plots"
    plot_dir.mkdir(exist_ok=True)
    written = []
    clusters: dict[int, list[int]] = {}
    for r in assign:
        if int(r["label"]) >= 0:
            clusters.setdefault(int(r["label"]), []).append(int(r["component_id"]))
    events = manifest["events"]
    val_events = [e for e in manifest["config"]["validation_events"] if e in events]
    t_axis = None
    for k in sorted(clusters):
        for ev in val_events:
            series = np.array([profiles[c].values[ev] for c in clusters[k]])
            t_axis = profiles[clusters[k][0]].times
            path = plot_dir / f"run{run_id}_cluster{k}_{ev}.csv"
            _write_csv(path, ["time"] + [f"c{c}" for c in clusters[k]] + ["mean"],
                       np.column_stack([t_axis, series.T, series.mean(axis=0)]))
            written.append(path)
    head, body = scatter[0], [row for row in scatter[1:] if int(row[0]) == run_id]
    path = plot_dir / f"run{run_id}_erd_ers_scatter.csv"
    _write_csv(path, ["cluster_id", head[2], head[3]], [row[1:] for row in body])
    written.append(path)
    if render and clusters:
        written.extend(_render(plot_dir, run_id, clusters, profiles, val_events, body, head))
    return written


def _header_path(recording: str) -> str:
    return recording if recording.endswith(".oschdr.json") else recording + ".oschdr.json"


def _render(plot_dir, run_id, clusters, profiles, events, scatter_rows, head) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    fig, axes = plt.subplots(len(clusters), len(events), figsize=(2.2 * len(events), 1.8 * len(clusters)),
                             squeeze=False, sharex=True)
    for row, k in enumerate(sorted(clusters)):
        for col, ev in enumerate(events):
            ax = axes[row, col]
            series = np.array([profiles[c].values[ev] for c in clusters[k]])
            t = profiles[clusters[k][0]].times
            ax.plot(t, series.T, color="0.7", lw=0.5)
            ax.plot(t, series.mean(axis=0), color="k", lw=1.2)
            ax.axvline(0, color="r", lw=0.5)
            if row == 0:
                ax.set_title(ev, fontsize=8)
            if col == 0:
                ax.set_ylabel(f"cluster {k}", fontsize=8)
    fig.tight_layout()
    p = plot_dir / f"run{run_id}_envelopes.png"
    fig.savefig(p, dpi=100)
    plt.close(fig)
    paths.append(p)
    if scatter_rows:
        fig, ax = plt.subplots(figsize=(4, 4))
        xy = np.array([[float(r[2]), float(r[3])] for r in scatter_rows])
        ax.scatter(xy[:, 0], xy[:, 1])
        ax.axhline(0, color="0.5", lw=0.5)
        ax.axvline(0, color="0.5", lw=0.5)
        ax.set_xlabel(head[2])
        ax.set_ylabel(head[3])
        p = plot_dir / f"run{run_id}_erd_ers_scatter.png"
        fig.savefig(p, dpi=100)
        plt.close(fig)
        paths.append(p)
    return paths
