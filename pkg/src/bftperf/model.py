"""Closed-form consensus-time model for IBFT and HotStuff.

All times are in the same unit as ``1/rv``. Every expected-time function
returns a ``Prediction`` whose ``expected_time`` is the sum of the
no-round-change time ``t3``, the timer tail and (IBFT only) the cost of
round-change messages.

Abbreviations used below:

    n_w  = n - n_f            working validators
    r    = n_f / n            probability that a leader has crashed
    q    = P(timeout | working leader), from a normal approximation
    k_T  = validators per edge switch (may be fractional)
    h_T  = mean switches on a minimal validator-to-validator path
"""

import math
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .protocols import HOTSTUFF, IBFT, PROTOCOLS, fault_bound
from .topology import (CLIQUE, DRAGONFLY, FOLDED_CLOS, average_hop_distance, build_topology,
                       canonical_kind, num_edge_switches, num_switches, place_validators)

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
Z_CLAMP = 40.0      # |z| beyond this is 0 or 1 in double precision anyway
N_SIGMA = 3.0       # allowance used for the recommended timer


class ModelDomainError(ConfigError):
    """Parameters outside the region where the model is defined (e.g. r >= 1/2)."""


def normal_cdf(x):
    """Standard normal CDF (erfc based, accurate to ~1e-16 absolute)."""
    return 0.5 * math.erfc(-x / SQRT2)


def normal_pdf(x):
    return INV_SQRT_2PI * math.exp(-0.5 * x * x)


def normal_sf(x):
    """1 - Phi(x) without cancellation for large x."""
    return 0.5 * math.erfc(x / SQRT2)


@dataclass(frozen=True)
class ModelParams:
    n: int
    n_f: int = 0
    tau0: float = math.inf
    rv: float = 1.0 / 3.0
    rs: float = 9.0
    sigma_v: float | None = None    # None -> exponential service, sigma = 1/rate
    sigma_s: float | None = None
    protocol: str = HOTSTUFF
    topology: str = CLIQUE
    topo_params: tuple = ()
    k_T: float | None = None        # None -> n / (edge switches)
    h_T: float | None = None        # None -> computed from round-robin placement

    def __post_init__(self):
        object.__setattr__(self, "protocol", str(self.protocol).lower())
        object.__setattr__(self, "topology", canonical_kind(self.topology))
        object.__setattr__(self, "topo_params", tuple(int(x) for x in (self.topo_params or ())))
        self.validate()

    def validate(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.n < 1 or self.n_f < 0 or self.n_f >= self.n:
            raise ConfigError(f"need 0 <= n_f < n, got n={self.n}, n_f={self.n_f}")
        if not (self.rv > 0 and self.rs > 0):
            raise ConfigError("service rates must be positive")
        for s in (self.sigma_v, self.sigma_s):
            if s is not None and s < 0:
                raise ConfigError("standard deviations must be non-negative")
        if not self.tau0 > 0:
            raise ConfigError("tau0 must be positive")
        if self.r >= 0.5:
            raise ModelDomainError(f"r = n_f/n = {self.r:.4g} >= 1/2: timer backoff series diverges")

    def with_(self, **kw):
        return replace(self, **kw)

    # derived quantities
    @property
    def f(self):
        return fault_bound(self.n)

    @property
    def n_w(self):
        return self.n - self.n_f

    @property
    def r(self):
        return self.n_f / self.n

    @property
    def sv(self):
        return 1.0 / self.rv if self.sigma_v is None else self.sigma_v

    @property
    def ss(self):
        return 1.0 / self.rs if self.sigma_s is None else self.sigma_s

    @property
    def is_clique(self):
        return self.topology == CLIQUE

    @property
    def nu_s(self):
        return num_switches(self.topology, self.topo_params)

    @property
    def nu_e(self):
        return num_edge_switches(self.topology, self.topo_params)

    @property
    def nu_d(self):
        if self.topology != DRAGONFLY:
            raise ConfigError("nu_d is only defined for Dragonfly")
        return self.topo_params[0]

    @property
    def k(self):
        if self.k_T is not None:
            return float(self.k_T)
        if self.is_clique:
            return 1.0
        return self.n / self.nu_e

    @property
    def h(self):
        if self.h_T is not None:
            return float(self.h_T)
        if self.is_clique:
            return 0.0
        return hop_distance(self.topology, self.topo_params, self.n)


_HOP_CACHE = {}


def hop_distance(kind, params, n):
    """h_T for ``n`` validators placed round-robin on the topology."""
    key = (canonical_kind(kind), tuple(params), n)
    if key not in _HOP_CACHE:
        g = build_topology(kind, params)
        _HOP_CACHE[key] = average_hop_distance(g, place_validators(g, n))
    return _HOP_CACHE[key]


@dataclass
class Prediction:
    expected_time: float
    t3: float                 # time when the first leader is working and no timeout fires
    tail: float = 0.0         # timer backoff contribution
    round_change: float = 0.0  # round-change message processing (IBFT)
    q: float = 0.0
    tau0_star: float = math.nan
    extra: dict = field(default_factory=dict)


# ----------------------------------------------------------- helpers

def exceed_prob(tau0, mean, sd):
    """P(Y > tau0) for Y ~ N(mean, sd^2), clamped to [0, 1]."""
    if math.isinf(tau0):
        return 0.0
    if sd <= 0:
        return 1.0 if tau0 < mean else (0.5 if tau0 == mean else 0.0)
    z = (tau0 - mean) / sd
    z = max(-Z_CLAMP, min(Z_CLAMP, z))
    return min(1.0, max(0.0, normal_sf(z)))


def tail_weight(r, q):
    """Expected timer time per instance, in units of tau0."""
    if r >= 0.5:
        raise ModelDomainError("r >= 1/2")
    return (r + (1.0 - r) * q) / (1.0 - 2.0 * r)


def round_change_weight(r, q):
    return r + (2.0 - r) * (1.0 - r) * q


def _tail(p, q):
    return 0.0 if math.isinf(p.tau0) and tail_weight(p.r, q) == 0 else tail_weight(p.r, q) * p.tau0


# ---------------------------------------------------------------- clique

def m_hotstuff(p):
    """Messages the HotStuff leader processes per view."""
    return 4 * p.n - 3 * p.n_f - p.f + 4


def m_ibft(p):
    """Messages an IBFT validator processes before it can commit."""
    return p.n_w + p.n - p.f


def t3_clique(p):
    if p.protocol == HOTSTUFF:
        return m_hotstuff(p) / p.rv
    return (2 * p.n_w + 1) / p.rv


def hotstuff_clique_moments(p):
    m = m_hotstuff(p)
    return m / p.rv, p.sv * math.sqrt(m)


def ibft_clique_moments(p):
    m = m_ibft(p)
    return m / p.rv, p.sv * math.sqrt(m * (2.0 + 1.0 / p.n_w))


def q_hotstuff_clique(p):
    return exceed_prob(p.tau0, *hotstuff_clique_moments(p))


def q_ibft_clique(p):
    return exceed_prob(p.tau0, *ibft_clique_moments(p))


def expected_time_clique(p, q=None):
    t3 = t3_clique(p)
    if p.protocol == HOTSTUFF:
        q = q_hotstuff_clique(p) if q is None else q
        rc = 0.0
    else:
        q = q_ibft_clique(p) if q is None else q
        rc = round_change_weight(p.r, q) * p.n_w / p.rv
    tail = _tail(p, q)
    return Prediction(t3 + tail + rc, t3, tail, rc, q, tau0_star(p))


# ------------------------------------------------------ HotStuff, topology

def t3_hotstuff_topology(p):
    """Barrier analysis without faults."""
    n, f, rv, rs = p.n, p.f, p.rv, p.rs
    return (4 * max((n - f - 1) / rv, (n - 2) / rs)
            + 3 * max((f + 2) / rv, n / rs)
            + 2 * (1 / rv + p.h / rs))


def hotstuff_topology_moments(p):
    """Mean and standard deviation of the fault-aware barrier sum."""
    n, f, nf, rv, rs, h = p.n, p.f, p.n_f, p.rv, p.rs, p.h
    mu = (4 * max((n - f - 1) / rv, (n - nf - 2) / rs)
          + 3 * max((f - nf + 2) / rv, n / rs)
          + 2 * (1 / rv + h / rs))
    sv2, ss2 = p.sv ** 2, p.ss ** 2
    var = (4 * max((n - f - 1) * sv2, (n - nf - 2) * ss2)
           + 3 * max((n - nf + 2) * sv2, n * ss2)
           + 2 * sv2 + 2 * h * ss2)
    return mu, math.sqrt(var)


def expected_time_hotstuff_topology(p, q=None):
    mu, sd = hotstuff_topology_moments(p)
    q = exceed_prob(p.tau0, mu, sd) if q is None else q
    tail = _tail(p, q)
    return Prediction(mu + tail, mu, tail, 0.0, q, mu + N_SIGMA * sd)


def g_max_gaussian(u1, v1, u2, v2):
    """Approximate E max(X, Y) for independent X ~ N(u1, v1), Y ~ N(u2, v2)."""
    if v1 < 0 or v2 < 0:
        raise ValueError("variances must be non-negative")
    s = math.sqrt(v1 + v2)
    if s == 0:
        return max(u1, u2)
    d = (u1 - u2) / s
    return u1 * normal_cdf(d) + u2 * normal_cdf(-d) + s * normal_pdf(d)


def t3_hotstuff_topology_improved(p):
    n, f, rv, rs = p.n, p.f, p.rv, p.rs
    sv2, ss2 = p.sv ** 2, p.ss ** 2
    return (4 * g_max_gaussian((n - f - 1) / rv, (n - f - 1) * sv2, (n - 2) / rs, (n - 2) * ss2)
            + 3 * g_max_gaussian((f + 2) / rv, (f + 2) * sv2, n / rs, n * ss2)
            + 2 / rv + 2 * p.h / rs)


# ---------------------------------------------------------- IBFT, topology

def _require_topology(p):
    if p.is_clique:
        raise ConfigError("operation needs a Folded-Clos or Dragonfly topology")


# An inter-group Dragonfly link carries k(nu_d-1) x k nu_d messages in each
# direction per broadcast, and the gateway switch relays both directions.
DF_LINK_FACTOR = 2


def n_ibft_topology(p, link_factor=DF_LINK_FACTOR):
    """Messages a bottleneck edge switch relays per broadcast (no faults).

    ``link_factor=1`` counts only one direction of the inter-group link.
    """
    _require_topology(p)
    k, n = p.k, p.n
    base = k * 2 * (n - 1) - k * (k - 1)
    if p.topology == DRAGONFLY:
        nd = p.nu_d
        base += link_factor * k * k * nd * (nd - 1)
    return base


def m_ibft_topology(p, link_factor=DF_LINK_FACTOR):
    """Messages the bottleneck switch relays per instance (no faults)."""
    return 2 * n_ibft_topology(p, link_factor) + (p.n - 1)


def n_ibft_topology_faults(p):
    """Per-broadcast relay count after factoring out crashed validators."""
    _require_topology(p)
    k, n, nw = p.k, p.n, p.n_w
    base = k * (n + nw - k - 1)
    if p.topology == DRAGONFLY:
        nd = p.nu_d
        base += DF_LINK_FACTOR * k * k * nd * (nd - 1) * (1 - p.r)
    return base


def t3_ibft_topology(p):
    return max((2 * p.n + 1) / p.rv, m_ibft_topology(p) / p.rs)


def ibft_topology_moments(p, literal=False):
    """Mean and sd of the crash-free work before a quorum on a topology.

    The validator count starts from the 2n+1 messages a validator handles per
    instance; ``literal=True`` starts it from the switch count m_T instead, which
    puts the recommended timer several times past the simulated optimum.
    """
    m_T = m_ibft_topology(p)
    m_v = (m_T if literal else 2 * p.n + 1) - p.f + p.n_f - 1
    m_s = m_T - p.k * (p.f - p.n_f) - (p.n - 1)
    c = 2.0 + 1.0 / p.n_w
    mean = max(m_v / p.rv, m_s / p.rs)
    var = max(m_v * c * p.sv ** 2, m_s * c * p.ss ** 2)
    return mean, math.sqrt(var)


def expected_time_ibft_topology(p, q=None):
    """Switch-bound IBFT with timer backoff and round changes."""
    n_T = n_ibft_topology_faults(p)
    mean, sd = ibft_topology_moments(p)
    q = exceed_prob(p.tau0, mean, sd) if q is None else q
    t3 = (2 * n_T + (p.n - 1)) / p.rs
    tail = _tail(p, q)
    rc = round_change_weight(p.r, q) * n_T / p.rv
    return Prediction(t3 + tail + rc, t3, tail, rc, q, mean + N_SIGMA * sd)


# ---------------------------------------------------------- comparisons

def crossover_switch_rate(p):
    """Switch rate at which IBFT and HotStuff times meet.

    Assumes HotStuff is validator-bound and IBFT switch-bound, with q ~ 0.
    """
    _require_topology(p)
    n, f, nf = p.n, p.f, p.n_f
    if nf == 0:
        return m_ibft_topology(p) * p.rv / (4 * n - f + 4)
    n_T = n_ibft_topology_faults(p)
    return ((2 + p.r) * n_T + (n - 1)) * p.rv / (4 * n - f - 3 * nf + 4)


def fc_over_df_ratio(k_D, nu_d, n):
    """Folded-Clos over Dragonfly IBFT time with equal switch counts.

    Returns ``(exact, approx)``; ``k_F = 3 k_D``.
    """
    if k_D <= 0 or nu_d < 2 or n < 2:
        raise ConfigError("need k_D > 0, nu_d >= 2, n >= 2")
    k_F = 3.0 * k_D
    num = 2 * k_F * (2 * (n - 1) - (k_F - 1)) + (n - 1)
    den = 2 * k_D * (2 * (n - 1) - (k_D - 1) + 2 * k_D * nu_d * (nu_d - 1)) + (n - 1)
    return num / den, 1.5 / (1.0 + 1.0 / (8.0 * k_D))


def multichain_effective_rate(rs, c):
    """Switch rate seen by one of ``c`` chains sharing the network."""
    if c < 1:
        raise ConfigError("chain count must be >= 1")
    return rs / c


# ------------------------------------------------------------- dispatch

def tau0_star(p):
    """Recommended initial timer: mean work plus three standard deviations."""
    if p.is_clique:
        mean, sd = hotstuff_clique_moments(p) if p.protocol == HOTSTUFF else ibft_clique_moments(p)
    elif p.protocol == HOTSTUFF:
        mean, sd = hotstuff_topology_moments(p)
    else:
        mean, sd = ibft_topology_moments(p)
    return mean + N_SIGMA * sd


def predict(p, q=None):
    """Model prediction for any protocol/topology combination."""
    if p.is_clique:
        return expected_time_clique(p, q)
    if p.protocol == HOTSTUFF:
        return expected_time_hotstuff_topology(p, q)
    if p.n_f == 0:
        # without crashes the compute/switch maximum applies; only q adds to it
        base = expected_time_ibft_topology(p, q)
        t3 = t3_ibft_topology(p)
        return Prediction(t3 + base.tail + base.round_change, t3, base.tail, base.round_change,
                          base.q, base.tau0_star)
    return expected_time_ibft_topology(p, q)


def predict_improved(p, q=None):
    """HotStuff topology prediction with the Gaussian-max barriers; None elsewhere."""
    if p.is_clique or p.protocol != HOTSTUFF:
        return None
    base = expected_time_hotstuff_topology(p, q)
    t3 = t3_hotstuff_topology_improved(p)
    return Prediction(t3 + base.tail, t3, base.tail, 0.0, base.q, base.tau0_star)


def params_from_config(cfg, sigma_v=None, sigma_s=None, rs=None):
    """ModelParams matching a SimConfig (deterministic service gives sigma 0)."""
    if sigma_v is None and cfg.validator_dist == "deterministic":
        sigma_v = 0.0
    if sigma_s is None and cfg.switch_dist == "deterministic":
        sigma_s = 0.0
    return ModelParams(n=cfg.n, n_f=cfg.n_f, tau0=cfg.tau0, rv=cfg.rv,
                       rs=cfg.rs if rs is None else rs, sigma_v=sigma_v, sigma_s=sigma_s,
                       protocol=cfg.protocol, topology=cfg.topology, topo_params=cfg.topo_params)


__all__ = [
    "ModelParams", "Prediction", "ModelDomainError", "normal_cdf", "normal_pdf", "normal_sf",
    "t3_clique", "q_hotstuff_clique", "q_ibft_clique", "expected_time_clique", "tau0_star",
    "t3_hotstuff_topology", "t3_ibft_topology", "crossover_switch_rate", "fc_over_df_ratio",
    "expected_time_hotstuff_topology", "expected_time_ibft_topology", "g_max_gaussian",
    "t3_hotstuff_topology_improved", "multichain_effective_rate", "predict", "predict_improved",
    "params_from_config", "hop_distance", "m_hotstuff", "m_ibft", "m_ibft_topology",
    "n_ibft_topology", "n_ibft_topology_faults", "FOLDED_CLOS", "IBFT",
]
