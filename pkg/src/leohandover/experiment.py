"""Multi-frame scenario runner, Monte-Carlo sweeps and CSV emission."""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, orbits
from .channel import build_channel_stats
from .config import ExperimentConfig
from .metrics import ScheduleMask
from .optimizer import FrameSolution, solve_frame

log = logging.getLogger(__name__)

FRAME_COLUMNS = ("trial", "frame", "scheme", "status", "power_w", "ho_power_w", "ho_events",
                 "min_rate", "solve_ms")
AGG_COLUMNS = ("param", "value", "scheme", "mean_power_w", "feasibility_rate",
               "mean_ho_events", "n_feasible")


@dataclass
class FrameRow:
    trial: int
    frame: int
    scheme: str
    status: str
    power_w: float | None = None
    ho_power_w: float | None = None
    ho_events: int | None = None
    min_rate: float | None = None
    solve_ms: float | None = None
    rates: tuple = ()
    iterations: tuple = (0, 0)
    sat_ids: tuple = ()

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


@dataclass
class AggregateRow:
    param: str
    value: str
    scheme: str
    mean_power_w: float | None
    feasibility_rate: float
    mean_ho_events: float | None
    n_feasible: int


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)


def trial_seed(master: int, trial: int) -> int:
    """Independent per-trial seed derived from the master seed."""
    return int(np.random.SeedSequence(master, spawn_key=(trial,)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# one trial


def _scenario_geometry(cfg: ExperimentConfig, rng: np.random.Generator):
    spec = cfg.constellation()
    elements = orbits.build_walker_delta(spec)
    lat, lon = math.radians(cfg.center_lat_deg), math.radians(cfg.center_lon_deg)
    center = orbits.geodetic_to_ecef(lat, lon, spec.earth_radius)
    users = orbits.place_users(cfg.num_users, lat, lon, cfg.user_radius_m, rng, spec.earth_radius)
    epoch = float(rng.uniform(0.0, spec.period))
    return elements, center, users, epoch


def build_frames(cfg: ExperimentConfig, rng: np.random.Generator):
    """Frame snapshots at the midpoint of each frame (may raise CoverageError)."""
    elements, center, users, epoch = _scenario_geometry(cfg, rng)
    frames = []
    for k in range(1, cfg.num_frames + 1):
        t = epoch + (k - 0.5) * cfg.frame_duration_s
        pos, vel = orbits.propagate(elements, t)
        ss = orbits.select_serving_set(pos, center, cfg.num_sats,
                                       math.radians(cfg.min_elevation_deg))
        frames.append(orbits.frame_geometry(k, ss, pos, vel, users, center, t,
                                            elements.spec.earth_radius))
    return frames


def _solve_scheme(scheme: str, frame, stats, prev: ScheduleMask | None, cfg: ExperimentConfig,
                  algo, rng: np.random.Generator) -> FrameSolution:
    if scheme == "proposed":
        return solve_frame(stats, prev, algo)
    rule, kind = scheme.split("_")
    mask = baselines.make_schedule(rule, frame, stats, cfg.u_max, rng, prev,
                                   fill=(kind == "coop"))
    if kind == "coop":
        return baselines.coop_fixed_schedule(stats, mask, prev, algo)
    return baselines.noncoop_mrt(stats, mask, prev, algo)


def run_scenario(cfg: ExperimentConfig, seed: int, trial: int = 0,
                 record_timing: bool = False, observer=None) -> list[FrameRow]:
    """All schemes over ``num_frames`` frames of one Monte-Carlo trial.

    ``observer(scheme, stats, prev_mask, solution)``, if given, sees every
    solved frame (solution is ``None`` when the scheme raised).
    """
    ss = np.random.SeedSequence(seed)
    geo_seq, chan_seq, sched_seq = ss.spawn(3)
    rows = []
    try:
        frames = build_frames(cfg, np.random.default_rng(geo_seq))
    except (orbits.CoverageError, orbits.ParameterError) as exc:
        for scheme in cfg.schemes:
            for k in range(1, cfg.num_frames + 1):
                rows.append(FrameRow(trial, k, scheme, f"error:{type(exc).__name__}"))
        return rows
    chan_rng = np.random.default_rng(chan_seq)
    stats = [
        build_channel_stats(f, chan_rng, carrier_freq=cfg.carrier_freq_hz, Nh=cfg.upa_h,
                            Nv=cfg.upa_v,
                            rician_k_range_db=(cfg.rician_k_min_db, cfg.rician_k_max_db),
                            noise_var=cfg.noise_var_w, rx_gain_db=cfg.rx_gain_db)
        for f in frames
    ]
    algo = cfg.algo()
    sched_seqs = dict(zip(cfg.schemes, sched_seq.spawn(len(cfg.schemes))))
    for scheme in cfg.schemes:
        rng = np.random.default_rng(sched_seqs[scheme])
        prev = None
        for frame, st in zip(frames, stats):
            t0 = time.perf_counter()
            try:
                sol = _solve_scheme(scheme, frame, st, prev, cfg, algo, rng)
                err = None
            except Exception as exc:  # recorded, the run continues
                log.warning("trial %d frame %d %s: %s", trial, frame.frame_index, scheme, exc)
                sol, err = None, exc
            ms = (time.perf_counter() - t0) * 1e3 if record_timing else None
            if observer is not None:
                observer(scheme, st, prev, sol)
            row = FrameRow(trial, frame.frame_index, scheme, "", solve_ms=ms,
                           sat_ids=tuple(frame.serving_set))
            if sol is not None and sol.feasible:
                row.status = "feasible"
                row.power_w = sol.power.total
                row.ho_power_w = sol.power.handover_power
                row.ho_events = sol.power.handover_event_count
                row.min_rate = float(np.min(sol.rates))
                row.rates = tuple(float(r) for r in sol.rates)
                row.iterations = tuple(sol.iterations)
                prev = sol.mask
            else:
                row.status = "infeasible" if err is None else f"error:{type(err).__name__}"
                # service interruption: no link survives into the next frame
                prev = ScheduleMask.carry_over(
                    np.zeros((frame.num_sats, frame.num_users), dtype=int),
                    frame.serving_set, None)
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# aggregation and sweeps


def trial_summary(rows: list[FrameRow]) -> dict:
    """Per (trial, scheme): feasible iff every frame is; mean per-frame power and events."""
    groups = {}
    for r in rows:
        groups.setdefault((r.trial, r.scheme), []).append(r)
    out = {}
    for key, rs in groups.items():
        ok = all(r.feasible for r in rs)
        out[key] = {
            "feasible": ok,
            "power": float(np.mean([r.power_w for r in rs])) if ok else None,
            "ho_events": float(np.mean([r.ho_events for r in rs])) if ok else None,
        }
    return out


def aggregate(rows: list[FrameRow], schemes, param: str = "", value: str = "") -> list[AggregateRow]:
    """Feasibility rate over trials; power and events averaged over feasible trials only."""
    summ = trial_summary(rows)
    out = []
    for scheme in schemes:
        trials = [v for (t, s), v in sorted(summ.items()) if s == scheme]
        feas = [v for v in trials if v["feasible"]]
        n = len(trials)
        out.append(AggregateRow(
            param, value, scheme,
            float(np.mean([v["power"] for v in feas])) if feas else None,
            len(feas) / n if n else 0.0,
            float(np.mean([v["ho_events"] for v in feas])) if feas else None,
            len(feas),
        ))
    return out


def _run_trial(args):
    cfg, trial, record_timing = args
    return run_scenario(cfg, trial_seed(cfg.seed, trial), trial, record_timing)


def run_trials(cfg: ExperimentConfig, n_trials: int | None = None, jobs: int = 1,
               record_timing: bool = False) -> list[FrameRow]:
    n = cfg.n_trials if n_trials is None else n_trials
    tasks = [(cfg, t, record_timing) for t in range(n)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_run_trial, tasks))
    else:
        parts = [_run_trial(a) for a in tasks]
    return [r for p in parts for r in p]


def simulate(cfg: ExperimentConfig, jobs: int = 1, record_timing: bool = False) -> ExperimentResult:
    rows = run_trials(cfg, jobs=jobs, record_timing=record_timing)
    return ExperimentResult(rows, aggregate(rows, cfg.schemes))


def sweep(cfg: ExperimentConfig, param: str, values, n_trials: int | None = None,
          jobs: int = 1, record_timing: bool = False) -> ExperimentResult:
    """One aggregate row per (value, scheme); trials share seeds across values.

    In the frame rows of value number ``j`` the trial column is offset by
    ``j * n_trials`` so every row keeps a unique (trial, frame, scheme) key.
    """
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    n = cfg.n_trials if n_trials is None else n_trials
    result = ExperimentResult()
    for j, v in enumerate(values):
        c = cfg.with_param(param, v)
        rows = run_trials(c, n, jobs, record_timing)
        result.aggregates.extend(aggregate(rows, c.schemes, param, str(v)))
        for r in rows:
            r.trial += j * n
        result.rows.extend(rows)
    return result


# ---------------------------------------------------------------------------
# CSV


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def emit_csv(result: ExperimentResult, out_dir) -> tuple[Path, Path]:
    """Write ``frames.csv`` and ``aggregate.csv`` into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        fpath = out / "frames.csv"
        apath = out / "aggregate.csv"
        with fpath.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FRAME_COLUMNS)
            for r in result.rows:
                w.writerow([_fmt(getattr(r, c)) for c in FRAME_COLUMNS])
        with apath.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(AGG_COLUMNS)
            for a in result.aggregates:
                w.writerow([_fmt(getattr(a, c)) for c in AGG_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write CSV output to {out}: {exc.strerror}") from exc
    return fpath, apath


def read_frames_csv(path) -> list[FrameRow]:
    """Parse ``frames.csv`` back into rows (for re-aggregation)."""
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            def num(key, cast=float):
                return cast(rec[key]) if rec[key] != "" else None
            rows.append(FrameRow(
                trial=int(rec["trial"]), frame=int(rec["frame"]), scheme=rec["scheme"],
                status=rec["status"], power_w=num("power_w"), ho_power_w=num("ho_power_w"),
                ho_events=num("ho_events", int), min_rate=num("min_rate"),
                solve_ms=num("solve_ms"),
            ))
    return rows
