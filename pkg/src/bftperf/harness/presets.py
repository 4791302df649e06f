"""Figure presets.

Each preset pins the parameters its figure caption states (``caption``) and
fills the rest from documented choices (``chosen``). Service is exponential
with sigma = 1/rate and rv = 1/3 unless a preset says otherwise.
"""

import json
import re
from dataclasses import dataclass, field

from ..config import SimConfig
from ..errors import ConfigError
from ..model import tau0_star
from ..protocols import HOTSTUFF, IBFT
from ..topology import DRAGONFLY, FOLDED_CLOS

DEFAULTS = {"service": "exponential", "sigma": "1/rate", "rv": "1/3"}


@dataclass(frozen=True)
class Preset:
    name: str
    title: str
    variable: str
    values: tuple
    curves: tuple                # (label, SimConfig) pairs
    caption: dict                # parameters the figure caption states
    chosen: dict = field(default_factory=dict)
    adjust: object = None        # optional per-point config hook
    kind: str = "sweep"          # "sweep", "crossover" or "ratio"

    def config_log(self):
        """Header lines naming every parameter this preset runs with."""
        lines = [f"# preset {self.name}: {self.title}"]
        lines += [f"# caption {k}={v}" for k, v in self.caption.items()]
        lines += [f"# default {k}={v}" for k, v in DEFAULTS.items()]
        lines += [f"# chosen {k}={v}" for k, v in self.chosen.items()]
        lines.append(f"# sweep {self.variable}={list(self.values)}")
        for label, cfg in self.curves:
            lines.append(f"# curve {label}: {json.dumps(cfg.to_dict(), sort_keys=True)}")
        return lines


def _star(cfg):
    from .sweep import model_params
    return tau0_star(model_params(cfg))


def _tau_grid(cfg, lo=0.4, hi=3.0, count=14):
    """Evenly spaced timer values around the model's recommended timer."""
    ts = _star(cfg)
    return tuple(round(ts * (lo + (hi - lo) * i / (count - 1)), 3) for i in range(count))


def ratio_n(nu_d, k=2):
    """Validators for k per Dragonfly switch; nu_d(nu_d+1) switches."""
    return k * nu_d * (nu_d + 1)


def fc_for_ratio(nu_d, k=2):
    """Folded-Clos with the same switch count and three times k per edge switch."""
    n = ratio_n(nu_d, k)
    nu_e = n // (3 * k)
    return nu_e, max(1, nu_e // 2)


def ratio_adjust(cfg, nu_d):
    """Scale n and the topology with nu_d for the ratio experiment."""
    nu_d = int(nu_d)
    if nu_d * (nu_d + 1) % 3:
        raise ConfigError(f"nu_d={nu_d}: nu_d(nu_d+1) not divisible by 3")
    n = ratio_n(nu_d)
    if cfg.topology == DRAGONFLY:
        return cfg.with_(n=n, topo_params=(nu_d,))
    return cfg.with_(n=n, topo_params=fc_for_ratio(nu_d))


def _cfg(**kw):
    return SimConfig(**kw)


def _both(base, **kw):
    return ((HOTSTUFF, base.with_(protocol=HOTSTUFF, **kw)), (IBFT, base.with_(protocol=IBFT, **kw)))


def _build():
    P = {}
    t_inf = 1e6

    c = _cfg(protocol=HOTSTUFF, n=16)
    P["fig1a"] = Preset(
        "fig1a", "HotStuff on a clique with a growing number of crashed validators", "tau0",
        tuple(range(100, 1001, 50)),
        tuple((f"n_f={k}", c.with_(n_f=k)) for k in range(0, 6)),
        caption={"protocol": "hotstuff", "topology": "clique", "n": 16},
        chosen={"n_f": "0..5", "tau0_grid": "100..1000 step 50"})

    c = _cfg(topology=DRAGONFLY, topo_params=(5,), rs=9.0, tau0=t_inf, instances=300)
    P["fig1b"] = Preset(
        "fig1b", "HotStuff vs IBFT on Dragonfly over n", "n",
        (30, 60, 90, 120, 150), _both(c),
        caption={"topology": "dragonfly", "nu_d": 5, "rs": 9.0},
        chosen={"n_f": 0, "tau0": t_inf, "n_grid": "30..150 step 30", "instances": 300})

    c = _cfg(topology=DRAGONFLY, topo_params=(3,), n=31, tau0=t_inf)
    P["fig1c"] = Preset(
        "fig1c", "HotStuff vs IBFT on Dragonfly over switch rate", "rs",
        (0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0, 5.0, 9.0), _both(c),
        caption={"topology": "dragonfly", "nu_d": 3, "n": 31},
        chosen={"n_f": 0, "tau0": t_inf}, kind="crossover")

    for name, n in (("fig4a", 16), ("fig4b", 32)):
        c = _cfg(protocol=HOTSTUFF, n=n)
        grid = tuple(range(150, 501, 25)) if n == 16 else tuple(range(250, 1001, 50))
        P[name] = Preset(
            name, f"HotStuff clique timer sweep, n={n}", "tau0", grid,
            tuple((f"n_f={k}", c.with_(n_f=k)) for k in (0, 2)),
            caption={"protocol": "hotstuff", "topology": "clique", "n": n, "n_f": "0,2"},
            chosen={"tau0_grid": f"{grid[0]}..{grid[-1]}"})

    for name, n in (("fig5a", 16), ("fig5b", 32)):
        c = _cfg(protocol=IBFT, n=n, leader_policy="rotation")
        grid = tuple(range(60, 601, 30)) if n == 16 else tuple(range(120, 1201, 60))
        P[name] = Preset(
            name, f"IBFT clique timer sweep, n={n}", "tau0", grid,
            tuple((f"n_f={k}", c.with_(n_f=k)) for k in (0, 2)),
            caption={"protocol": "ibft", "topology": "clique", "n": n, "n_f": "0,2",
                     "leaders": "rotation"},
            chosen={"tau0_grid": f"{grid[0]}..{grid[-1]}"})

    c = _cfg(protocol=HOTSTUFF, topology=FOLDED_CLOS, topo_params=(8, 4), n=31, tau0=t_inf)
    P["fig7a"] = Preset(
        "fig7a", "HotStuff on Folded-Clos over switch rate", "rs",
        (0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 9.0), (("hotstuff", c),),
        caption={"protocol": "hotstuff", "topology": "folded_clos", "nu_e": 8, "nu_12": 4,
                 "n": 31},
        chosen={"n_f": 0, "tau0": t_inf})

    c = _cfg(protocol=HOTSTUFF, topology=FOLDED_CLOS, topo_params=(10, 5), rs=9.0, tau0=t_inf)
    P["fig7b"] = Preset(
        "fig7b", "HotStuff on Folded-Clos over n", "n",
        (10, 20, 30, 40, 60, 80, 100), (("hotstuff", c),),
        caption={"protocol": "hotstuff", "topology": "folded_clos", "nu_e": 10, "nu_12": 5,
                 "rs": 9.0},
        chosen={"n_f": 0, "tau0": t_inf})

    fc = _cfg(protocol=IBFT, topology=FOLDED_CLOS, topo_params=(8, 4), n=31, tau0=t_inf)
    df = _cfg(protocol=IBFT, topology=DRAGONFLY, topo_params=(3,), n=31, tau0=t_inf)
    P["fig8a"] = Preset(
        "fig8a", "IBFT on Folded-Clos and Dragonfly over switch rate", "rs",
        (0.5, 1.0, 2.0, 3.0, 5.0, 9.0), (("folded_clos", fc), ("dragonfly", df)),
        caption={"protocol": "ibft", "n": 31},
        chosen={"folded_clos": "(8,4)", "dragonfly": "(3)", "n_f": 0, "tau0": t_inf})

    fc = _cfg(protocol=IBFT, topology=FOLDED_CLOS, topo_params=(8, 4), rs=9.0, tau0=t_inf)
    df = _cfg(protocol=IBFT, topology=DRAGONFLY, topo_params=(4,), rs=9.0, tau0=t_inf)
    P["fig8b"] = Preset(
        "fig8b", "IBFT on Folded-Clos and Dragonfly over n", "n",
        (16, 32, 48, 64, 80), (("folded_clos", fc), ("dragonfly", df)),
        caption={"protocol": "ibft", "rs": 9.0},
        chosen={"folded_clos": "(8,4)", "dragonfly": "(4)", "n_f": 0, "tau0": t_inf})

    c = _cfg(protocol=HOTSTUFF, topology=DRAGONFLY, topo_params=(4,), n=40, n_f=2,
             leader_policy="random")
    P["fig9a"] = Preset(
        "fig9a", "HotStuff with crashes on Dragonfly, timer sweep", "tau0", _tau_grid(c),
        (("dragonfly", c), ("folded_clos", c.with_(topology=FOLDED_CLOS, topo_params=(8, 4)))),
        caption={"protocol": "hotstuff", "topology": "dragonfly", "nu_d": 4, "n": 40},
        chosen={"n_f": 2, "rs": 9.0, "tau0_grid": "0.4..3.0 x tau0*",
                "also": "folded_clos(8,4)"})

    c = _cfg(protocol=IBFT, topology=FOLDED_CLOS, topo_params=(8, 4), n=40, n_f=2, rs=IBFT_FAULT_RS,
             leader_policy="random")
    P["fig9b"] = Preset(
        "fig9b", "IBFT with crashes on Folded-Clos, timer sweep", "tau0", IBFT_FAULT_GRID,
        (("folded_clos", c),),
        caption={"protocol": "ibft", "topology": "folded_clos", "nu_e": 8, "nu_12": 4, "n": 40},
        chosen={"n_f": 2, "rs": IBFT_FAULT_RS})

    c = _cfg(protocol=IBFT, topology=DRAGONFLY, topo_params=(4,), n=40, n_f=2, rs=IBFT_FAULT_RS,
             leader_policy="random")
    P["fig9c"] = Preset(
        "fig9c", "IBFT with crashes on Dragonfly, timer sweep", "tau0", IBFT_FAULT_GRID,
        (("dragonfly", c),),
        caption={"protocol": "ibft", "topology": "dragonfly", "nu_d": 4, "n": 40},
        chosen={"n_f": 2, "rs": IBFT_FAULT_RS})

    fc = _cfg(topology=FOLDED_CLOS, topo_params=(8, 4), n=31, tau0=t_inf)
    df = _cfg(topology=DRAGONFLY, topo_params=(4,), n=40, tau0=t_inf)
    grid = (0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.7, 2.0)
    P["fig10a"] = Preset(
        "fig10a", "Switch rate where IBFT overtakes HotStuff", "rs", grid,
        tuple((f"{t}/{lab}", cfg) for t, cfg in (("folded_clos", fc), ("dragonfly", df))
              for lab, cfg in _both(cfg)),
        caption={"comparison": "hotstuff vs ibft"},
        chosen={"folded_clos": "(8,4) n=31", "dragonfly": "(4) n=40", "n_f": 0}, kind="crossover")

    fc = _cfg(protocol=IBFT, topology=FOLDED_CLOS, topo_params=(4, 2), rs=1.0, tau0=t_inf,
              instances=300)
    df = _cfg(protocol=IBFT, topology=DRAGONFLY, topo_params=(3,), rs=1.0, tau0=t_inf,
              instances=300)
    P["fig10b"] = Preset(
        "fig10b", "IBFT Folded-Clos over Dragonfly time ratio", "nu_d", (2, 3, 5, 6),
        (("folded_clos", fc), ("dragonfly", df)),
        caption={"k": 2, "nu_d": "nu_d(nu_d+1) divisible by 3"},
        chosen={"rs": 1.0, "n": "2 nu_d (nu_d+1)", "folded_clos": "(n/6, n/12)"},
        adjust=ratio_adjust, kind="ratio")

    c = _cfg(protocol=HOTSTUFF, topology=FOLDED_CLOS, topo_params=(8, 4), n=31, tau0=t_inf)
    P["fig12"] = Preset(
        "fig12", "Simple and improved HotStuff models on Folded-Clos", "rs",
        (0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 9.0), (("hotstuff", c),),
        caption={"protocol": "hotstuff", "topology": "folded_clos", "nu_e": 8, "nu_12": 4},
        chosen={"n": 31, "n_f": 0, "tau0": t_inf})

    c = _cfg(protocol=IBFT, topology=FOLDED_CLOS, topo_params=(8, 4), n=31, tau0=t_inf)
    P["fig14"] = Preset(
        "fig14", "Multiple chains sharing a Folded-Clos", "c", (1, 2, 3),
        tuple((f"rs={rs:g}", c.with_(rs=rs)) for rs in (1.0, 3.0, 9.0)),
        caption={"protocol": "ibft", "topology": "folded_clos", "nu_e": 8, "nu_12": 4,
                 "model_rate": "rs/c"},
        chosen={"n": 31, "rs": "1,3,9", "validator_rate": "rv*c"})
    return P


# Switch-bound regime the crash-aware IBFT topology model is written for.
IBFT_FAULT_RS = 1.0
IBFT_FAULT_GRID = tuple(float(x) for x in range(200, 3001, 200))


_PRESETS = None


def preset_names():
    return sorted(_presets(), key=lambda s: [int(t) if t.isdigit() else t
                                             for t in re.split(r"(\d+)", s)])


def _presets():
    global _PRESETS
    if _PRESETS is None:
        _PRESETS = _build()
    return _PRESETS


def get_preset(name):
    try:
        return _presets()[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(preset_names())}") from None


def run_preset(name, *, instances=None, seed=None, replications=1, workers=1, backend="auto"):
    """Run every curve of a preset; returns ``(preset, [ResultSeries, ...])``."""
    from .sweep import run_sweep
    pr = get_preset(name)
    out = []
    for label, cfg in pr.curves:
        if instances is not None:
            cfg = cfg.with_(instances=instances)
        if seed is not None:
            cfg = cfg.with_(seed=seed)
        out.append(run_sweep(cfg, pr.variable, pr.values, replications=replications,
                             adjust=pr.adjust, workers=workers, backend=backend, label=label))
    return pr, out


__all__ = ["Preset", "DEFAULTS", "get_preset", "preset_names", "run_preset", "ratio_adjust",
           "ratio_n", "fc_for_ratio", "IBFT_FAULT_RS", "IBFT_FAULT_GRID"]
