"""Simulation configuration."""

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError
from .protocols import HOTSTUFF, IBFT, PROTOCOLS, fault_bound
from .topology import CLIQUE, FOLDED_CLOS, TopologyError, build_topology, canonical_kind

DISTRIBUTIONS = ("exponential", "deterministic")

DEFAULT_RV = 1.0 / 3.0
DEFAULT_INSTANCES = 1000


@dataclass
class SimConfig:
    protocol: str = HOTSTUFF
    topology: str = CLIQUE
    topo_params: tuple = ()
    n: int = 16
    n_f: int = 0
    tau0: float = 1e6
    rv: float = DEFAULT_RV
    rs: float = 9.0
    validator_dist: str = "exponential"
    switch_dist: str = "exponential"
    seed: int = 1
    instances: int = DEFAULT_INSTANCES
    chains: int = 1
    horizon: float | None = None   # max time without a completed instance
    leader_policy: str | None = None
    warmup: int = 0                # leading instances excluded from the mean

    def __post_init__(self):
        self.protocol = str(self.protocol).lower()
        self.topology = canonical_kind(self.topology)
        self.topo_params = tuple(int(p) for p in (self.topo_params or ()))

    @property
    def f(self):
        return fault_bound(self.n)

    @property
    def effective_horizon(self):
        if self.horizon is not None:
            return float(self.horizon)
        # room for ~12 consecutive lost rounds plus generous slack
        return 4096.0 * self.tau0 + 1e6

    def validate(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.n < 4:
            raise ConfigError("n must be >= 4")
        if not 0 <= self.n_f <= self.f:
            raise ConfigError(f"n_f={self.n_f} outside [0, f={self.f}]")
        if self.instances < 1:
            raise ConfigError("instances must be >= 1")
        if not 0 <= self.warmup < self.instances:
            raise ConfigError("warmup must be in [0, instances)")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if not self.tau0 > 0:
            raise ConfigError("tau0 must be > 0")
        if not (self.rv > 0 and self.rs > 0):
            raise ConfigError("service rates must be > 0")
        for d in (self.validator_dist, self.switch_dist):
            if d not in DISTRIBUTIONS:
                raise ConfigError(f"distribution must be one of {DISTRIBUTIONS}, got {d!r}")
        if self.leader_policy not in (None, "default", "rotation", "random"):
            raise ConfigError(f"unknown leader policy {self.leader_policy!r}")
        try:
            build_topology(self.topology, self.topo_params)
        except TopologyError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def with_(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        d = asdict(self)
        d["topo_params"] = list(self.topo_params)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def topology_label(cfg):
    if cfg.topology == CLIQUE:
        return "Clique"
    name = "FoldedClos" if cfg.topology == FOLDED_CLOS else "Dragonfly"
    return f"{name}({','.join(str(p) for p in cfg.topo_params)})"


__all__ = ["SimConfig", "DISTRIBUTIONS", "DEFAULT_RV", "DEFAULT_INSTANCES",
           "topology_label", "IBFT", "HOTSTUFF"]
