"""Run a one-variable sweep of simulation and model side by side."""

import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor

from ..engine import run
from ..errors import ConfigError
from ..model import ModelDomainError, multichain_effective_rate, params_from_config, predict, \
    predict_improved
from ..rng import mix64
from ..topology import CLIQUE, DRAGONFLY, build_topology, place_validators
from .series import ResultSeries, SeriesPoint

log = logging.getLogger(__name__)

VARIABLES = ("tau0", "n", "n_f", "rs", "nu_d", "c")
_ALIASES = {"chains": "c", "τ0": "tau0", "tau_0": "tau0", "r_s": "rs", "nf": "n_f"}


def canonical_variable(name):
    name = _ALIASES.get(name, name)
    if name not in VARIABLES:
        raise ConfigError(f"sweep variable must be one of {VARIABLES}, got {name!r}")
    return name


def point_seed(base_seed, index, rep=0):
    """Seed for sweep point ``index``; the first point keeps the base seed."""
    if index == 0 and rep == 0:
        return int(base_seed)
    return mix64((int(base_seed) + 0x9E37 * (index + 1) + 0x7F4A * rep) & 0xFFFFFFFFFFFFFFFF) >> 1


def apply_value(cfg, variable, value):
    if variable == "tau0":
        return cfg.with_(tau0=float(value))
    if variable == "n":
        return cfg.with_(n=int(value))
    if variable == "n_f":
        return cfg.with_(n_f=int(value))
    if variable == "rs":
        return cfg.with_(rs=float(value))
    if variable == "c":
        return cfg.with_(chains=int(value))
    if variable == "nu_d":
        if cfg.topology != DRAGONFLY:
            raise ConfigError("nu_d sweeps need a Dragonfly base (or an adjust hook)")
        return cfg.with_(topo_params=(int(value),))
    raise ConfigError(f"unknown sweep variable {variable!r}")


def model_params(cfg):
    """Model parameters for ``cfg``, including the busiest edge switch's load."""
    p = params_from_config(cfg, rs=multichain_effective_rate(cfg.rs, cfg.chains))
    if cfg.topology != CLIQUE:
        g = build_topology(cfg.topology, cfg.topo_params)
        p = p.with_(k_T=place_validators(g, cfg.n).k_max)
    return p


def evaluate_model(cfg):
    """(model, improved, q, tau0_star) with None where a value does not apply."""
    try:
        p = model_params(cfg)
        pr = predict(p)
    except (ModelDomainError, ConfigError) as exc:
        log.debug("model skipped for %s: %s", cfg, exc)
        return None, None, None, None
    imp = predict_improved(p)
    return pr.expected_time, (imp.expected_time if imp else None), pr.q, pr.tau0_star


def _run_point(job):
    cfg, reps, backend = job
    times_total = 0.0
    count = 0
    for rep in range(reps):
        c = cfg if rep == 0 else cfg.with_(seed=point_seed(cfg.seed, 0, rep))
        res = run(c, backend=backend)
        k = res.count - c.warmup * c.chains
        times_total += res.mean * k
        count += k
    return times_total / count, count


def run_sweep(base, variable, values, *, replications=1, adjust=None, workers=1,
              backend="auto", label="", with_model=True, common_seed=False):
    """Simulate and model ``base`` at each value of ``variable``.

    Point ``i`` runs with ``point_seed(base.seed, i)``, so results do not depend on
    ``workers``. With ``common_seed`` every point reuses the base seed (common random
    numbers), which smooths differences between neighbouring points.
    ``adjust(cfg, value)`` may rewrite other fields per point (used by presets that
    scale n with the topology). Invalid points are skipped and listed in
    ``series.warnings``.
    """
    variable = canonical_variable(variable)
    series = ResultSeries(variable, label)
    jobs, kept = [], []
    for i, v in enumerate(values):
        try:
            cfg = apply_value(base, variable, v)
            if adjust is not None:
                cfg = adjust(cfg, v)
            seed = base.seed if common_seed else point_seed(base.seed, i)
            cfg = cfg.with_(seed=seed).validate()
        except ConfigError as exc:
            msg = f"skipped {variable}={v}: {exc}"
            log.warning(msg)
            series.warnings.append(msg)
            continue
        jobs.append((cfg, replications, backend))
        kept.append((v, cfg))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            sims = list(ex.map(_run_point, jobs))
    else:
        sims = [_run_point(j) for j in jobs]
    for (v, cfg), (mean, count) in zip(kept, sims):
        m, mi, q, ts = evaluate_model(cfg) if with_model else (None, None, None, None)
        series.points.append(SeriesPoint(
            value=v, sim_mean=mean, sim_n=count, model=m, model_improved=mi, q=q,
            tau0_star=ts, protocol=cfg.protocol, topology=cfg.topology, n=cfg.n,
            n_f=cfg.n_f, tau0=cfg.tau0, rs=cfg.rs, chains=cfg.chains, seed=cfg.seed))
    return series


def tail_slope(series, window=None):
    """Least-squares slope of the simulated mean against the swept value.

    ``window=(lo, hi)`` restricts the fit; ``None`` ends are open.
    """
    lo, hi = window if window is not None else (None, None)
    pts = [(p.value, p.sim_mean) for p in series.points
           if (lo is None or p.value >= lo) and (hi is None or p.value <= hi)]
    if len(pts) < 3:
        raise ValueError(f"tail_slope needs at least 3 points in the window, got {len(pts)}")
    xs, ys = zip(*pts)
    return statistics.linear_regression(xs, ys).slope


def sim_argmin(series, rel_tol=0.0):
    """Smallest swept value whose mean is within ``rel_tol`` of the minimum.

    A nonzero tolerance keeps a flat noisy plateau from pushing the answer to
    its far end.
    """
    if not series.points:
        raise ValueError("empty series")
    best = min(p.sim_mean for p in series.points)
    for p in sorted(series.points, key=lambda p: p.value):
        if p.sim_mean <= best * (1.0 + rel_tol):
            return p.value


def find_crossover(series_h, series_i):
    """Switch rate where E T_H - E T_I changes sign, by linear interpolation.

    Returns None when the grid holds no sign change.
    """
    a = {p.value: p.sim_mean for p in series_h.points}
    b = {p.value: p.sim_mean for p in series_i.points}
    grid = sorted(set(a) & set(b))
    if len(grid) != len(a) or len(grid) != len(b):
        raise ValueError("series must share the same grid")
    diffs = [a[x] - b[x] for x in grid]
    for (x0, d0), (x1, d1) in zip(zip(grid, diffs), zip(grid[1:], diffs[1:])):
        if d0 == 0:
            return float(x0)
        if (d0 < 0) != (d1 < 0) or d1 == 0:
            return x0 + (x1 - x0) * d0 / (d0 - d1)
    return None


def ratio_series(num, den, label=""):
    """Pointwise sim and model ratio of two series on the same grid."""
    d = {p.value: p for p in den.points}
    out = ResultSeries(num.variable, label)
    for p in num.points:
        q = d.get(p.value)
        if q is None:
            continue
        model = p.model / q.model if p.model and q.model else None
        out.points.append(SeriesPoint(
            value=p.value, sim_mean=p.sim_mean / q.sim_mean, sim_n=min(p.sim_n, q.sim_n),
            model=model, model_improved=None, q=None, tau0_star=None,
            protocol=p.protocol, topology=f"{p.topology}/{q.topology}", n=p.n, n_f=p.n_f,
            tau0=p.tau0, rs=p.rs, chains=p.chains, seed=p.seed))
    return out


def relative_gap(a, b):
    return abs(a - b) / abs(b) if b else math.inf
