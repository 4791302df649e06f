"""Discrete-event core: clock, event queue, FIFO single-server stations.

``run`` executes one closed-loop simulation. It uses the compiled kernel
(``bftperf._kernel``) when it was built and falls back to the pure-Python
engine below otherwise; both consume the same ``RunSetup`` and produce
bit-identical results for a given seed.
"""

import heapq
import logging
import os
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

from . import protocols as P
from .errors import LivelockError, PastEventError, SimulationError
from .rng import CRASH_STREAM, RngStream
from .topology import CLIQUE, average_hop_distance, build_topology, place_validators, routing_table

log = logging.getLogger(__name__)

try:  # compiled core
    from . import _kernel
except ImportError:  # pragma: no cover - depends on the build
    _kernel = None

HAVE_KERNEL = _kernel is not None


class EventKind(IntEnum):
    MESSAGE_ARRIVAL = 0
    SERVICE_COMPLETION = 1
    TIMER_EXPIRY = 2


@dataclass(order=True)
class Event:
    time: float
    seq: int = field(default=0, compare=True)
    kind: int = field(default=EventKind.SERVICE_COMPLETION, compare=False)
    target: int = field(default=0, compare=False)
    payload: object = field(default=None, compare=False)


class EventQueue:
    """Binary heap ordered by (time, insertion sequence)."""

    def __init__(self):
        self._heap = []
        self._seq = 0
        self.clock = 0.0

    def __len__(self):
        return len(self._heap)

    def push(self, time, kind, target, payload=None):
        if time < self.clock:
            raise PastEventError(f"past event at t={time} (clock={self.clock})")
        self._seq += 1
        heapq.heappush(self._heap, (time, self._seq, kind, target, payload))
        return self._seq

    def schedule(self, event):
        event.seq = self.push(event.time, event.kind, event.target, event.payload)
        return event

    def pop(self):
        time, seq, kind, target, payload = heapq.heappop(self._heap)
        self.clock = time
        return Event(time, seq, kind, target, payload)

    def peek_time(self):
        return self._heap[0][0] if self._heap else None


VALIDATOR = "validator"
SWITCH = "switch"


class Station:
    __slots__ = ("id", "role", "rate", "dist", "queue", "busy", "rng", "crashed", "served")

    def __init__(self, sid, role, rate, dist="exponential", rng=None, crashed=False):
        self.id = sid
        self.role = role
        self.rate = rate
        self.dist = dist
        self.queue = deque()
        self.busy = False
        self.rng = rng
        self.crashed = crashed
        self.served = 0


def sample_service_time(station, rng=None):
    """One service time: Exp(rate), or exactly 1/rate when deterministic."""
    rate = station.rate
    if not rate > 0:
        raise P.ConfigError(f"station {station.id}: service rate must be > 0")
    if station.dist == "deterministic":
        return 1.0 / rate
    return (rng or station.rng).exponential(rate)


@dataclass
class RunSetup:
    """Plain-data view of a config shared by both backends."""
    protocol: int          # 0 IBFT, 1 HotStuff
    n: int
    chains: int
    instances: int
    tau0: float
    rv: float              # per-validator station rate (already scaled by chains)
    rs: float
    v_det: bool
    s_det: bool
    seed: int
    leader_random: bool
    horizon: float
    crashed: list
    clique: bool
    num_switches: int
    edge_of: list
    hop_offsets: list
    hops: list
    h_T: float = 0.0


def prepare(cfg):
    cfg.validate()
    graph = build_topology(cfg.topology, cfg.topo_params)
    placement = place_validators(graph, cfg.n)
    crashed = P.inject_crashes(cfg.n, cfg.n_f, RngStream(cfg.seed, CRASH_STREAM))
    policy = cfg.leader_policy
    if policy in (None, "default"):
        policy = "rotation" if cfg.protocol == P.IBFT else "random"
    if graph.kind == CLIQUE:
        offsets, hops, h = [0], [], 0.0
    else:
        offsets, hops = routing_table(graph)
        h = average_hop_distance(graph, placement)
    return RunSetup(
        protocol=0 if cfg.protocol == P.IBFT else 1,
        n=cfg.n,
        chains=cfg.chains,
        instances=cfg.instances,
        tau0=float(cfg.tau0),
        rv=float(cfg.rv) * cfg.chains,
        rs=float(cfg.rs),
        v_det=cfg.validator_dist == "deterministic",
        s_det=cfg.switch_dist == "deterministic",
        seed=int(cfg.seed) & 0xFFFFFFFFFFFFFFFF,
        leader_random=policy == "random",
        horizon=cfg.effective_horizon,
        crashed=sorted(crashed),
        clique=graph.kind == CLIQUE,
        num_switches=graph.num_switches,
        edge_of=list(placement.edge_of),
        hop_offsets=offsets,
        hops=hops,
        h_T=h,
    )


@dataclass
class RunResult:
    times: list                 # per-instance consensus times, chain-major
    mean: float
    instances: int
    chains: int
    end_time: float
    events: int
    processed: list             # messages served per validator
    divergent: int = 0          # commits that disagree with the first commit of an instance
    subquorum: int = 0          # commits backed by fewer than the required votes
    committed: list = field(default_factory=list)   # per chain, per validator block ids
    crashed: list = field(default_factory=list)
    backend: str = "python"
    trace: list | None = None
    h_T: float = 0.0

    @property
    def count(self):
        return len(self.times)


class PyEngine:
    """Reference implementation of the simulation loop."""

    def __init__(self, setup, trace=False):
        self.s = setup
        n = setup.n
        self.n = n
        self.events = EventQueue()
        crashed = set(setup.crashed)
        self.stations = [Station(v, VALIDATOR, setup.rv,
                                 "deterministic" if setup.v_det else "exponential",
                                 RngStream(setup.seed, v), v in crashed) for v in range(n)]
        self.stations += [Station(n + k, SWITCH, setup.rs,
                                  "deterministic" if setup.s_det else "exponential",
                                  RngStream(setup.seed, n + k)) for k in range(setup.num_switches)]
        proto = P.IBFT if setup.protocol == 0 else P.HOTSTUFF
        self.start, self.handle, self.on_timer = P.HANDLERS[proto]
        policy = "random" if setup.leader_random else "rotation"
        self.states = [[P.ValidatorState(v, proto, n, setup.tau0, setup.seed, c, policy, v in crashed)
                        for v in range(n)] for c in range(setup.chains)]
        self.timer_gen = [[0] * n for _ in range(setup.chains)]
        self.need = P.quorum(n) if proto == P.IBFT else n - P.fault_bound(n)
        self.decided = [[] for _ in range(setup.chains)]
        self.times = [[] for _ in range(setup.chains)]
        self.last_done = [0.0] * setup.chains
        self.divergent = 0
        self.subquorum = 0
        self.trace = [] if trace else None
        self.edge_of = setup.edge_of
        self.S = setup.num_switches

    @property
    def clock(self):
        return self.events.clock

    # -- stations
    def deliver(self, msg, sid):
        st = self.stations[sid]
        if st.crashed:
            return
        st.queue.append(msg)
        if not st.busy:
            self._begin(st)

    def _begin(self, st):
        st.busy = True
        self.events.push(self.events.clock + sample_service_time(st), EventKind.SERVICE_COMPLETION, st.id)

    def _send(self, msg):
        u, w = msg.sender, msg.dest
        if w == u or self.s.clique:
            self.deliver(msg, w)
        else:
            msg.dest_switch = self.edge_of[w]
            self.deliver(msg, self.n + self.edge_of[u])

    def _broadcast(self, msg):
        u, n = msg.sender, self.n
        self._send(msg.copy_to(u))
        for i in range(1, n):
            self._send(msg.copy_to((u + i) % n))

    def _apply(self, st, acts):
        for a in acts:
            op = a[0]
            if op == "broadcast":
                self._broadcast(a[1])
            elif op == "send":
                self._send(a[1])
            elif op == "timer":
                gen = self.timer_gen[st.chain]
                gen[st.id] += 1
                self.events.push(self.events.clock + a[1], EventKind.TIMER_EXPIRY,
                                 st.chain * self.n + st.id, gen[st.id])
            elif op == "commit":
                self._commit(st, a[1], a[2], a[3])

    def _commit(self, st, inst, block, cert):
        c = st.chain
        if cert < self.need:
            self.subquorum += 1
        dec = self.decided[c]
        if inst < len(dec):
            if dec[inst] != block:
                self.divergent += 1
            return
        if inst != len(dec):
            raise SimulationError(f"chain {c}: instance {inst} committed out of order")
        dec.append(block)
        now = self.events.clock
        self.times[c].append(now - self.last_done[c])
        self.last_done[c] = now

    def _done(self):
        k = self.s.instances
        return all(len(t) >= k for t in self.times)

    # -- main loop
    def run(self):
        s = self.s
        n = self.n
        for c in range(s.chains):
            for v in range(n):
                st = self.states[c][v]
                if not st.crashed:
                    self._apply(st, self.start(st, 0))
        ev = self.events
        heap = ev._heap
        stations = self.stations
        offsets, hops, S = s.hop_offsets, s.hops, self.S
        horizon = s.horizon
        count = 0
        while not self._done():
            if not heap:
                raise LivelockError("event queue drained before all instances completed")
            time, _, kind, target, token = heapq.heappop(heap)
            if time - min(self.last_done) > horizon:
                raise LivelockError(f"no instance completed within horizon {horizon} (t={time})")
            ev.clock = time
            count += 1
            if kind == EventKind.SERVICE_COMPLETION:
                st = stations[target]
                msg = st.queue.popleft()
                st.served += 1
                st.busy = False
                if st.queue:
                    self._begin(st)
                if target < n:
                    if self.trace is not None:
                        self.trace.append((time, int(msg.kind), msg.sender, msg.dest,
                                           msg.instance, msg.round, msg.chain))
                    vs = self.states[msg.chain][target]
                    self._apply(vs, self.handle(vs, msg))
                else:
                    cur = target - n
                    if cur == msg.dest_switch:
                        self.deliver(msg, msg.dest)
                    else:
                        lo, hi = offsets[cur * S + msg.dest_switch], offsets[cur * S + msg.dest_switch + 1]
                        if hi - lo == 1:
                            nxt = hops[lo]
                        else:
                            nxt = hops[lo + stations[target].rng.randbelow(hi - lo)]
                        self.deliver(msg, n + nxt)
            elif kind == EventKind.TIMER_EXPIRY:
                c, v = divmod(target, n)
                if self.timer_gen[c][v] == token:
                    st = self.states[c][v]
                    self._apply(st, self.on_timer(st))
            else:
                raise SimulationError(f"unexpected event kind {kind}")
        return self._result(count)

    def _result(self, count):
        s = self.s
        times = [t for per in self.times for t in per[:s.instances]]
        return RunResult(
            times=times,
            mean=sum(times) / len(times),
            instances=s.instances,
            chains=s.chains,
            end_time=self.events.clock,
            events=count,
            processed=[st.served for st in self.stations[:self.n]],
            divergent=self.divergent,
            subquorum=self.subquorum,
            committed=[[list(st.committed) for st in per] for per in self.states],
            crashed=list(s.crashed),
            backend="python",
            trace=self.trace,
            h_T=s.h_T,
        )


def _want_kernel(backend):
    if backend == "python":
        return False
    if backend == "kernel":
        if _kernel is None:
            raise SimulationError("compiled kernel not available; build with `pip install -e .`")
        return True
    if os.environ.get("BFTPERF_BACKEND", "").lower() == "python":
        return False
    return _kernel is not None


def run(cfg, backend="auto", trace=False):
    """Simulate ``cfg.instances`` consensus instances; see ``RunResult``."""
    setup = prepare(cfg)
    if _want_kernel(backend):
        res = _kernel.run_kernel(setup, trace)
    else:
        res = PyEngine(setup, trace).run()
    if cfg.warmup:
        keep = [t for c in range(setup.chains)
                for t in res.times[c * setup.instances + cfg.warmup:(c + 1) * setup.instances]]
        res.mean = sum(keep) / len(keep)
    return res


def format_trace(trace):
    """Trace lines ``time kind sender dest instance round``."""
    names = P.KIND_NAMES
    return [f"{t:.9g} {names[k]} {s} {d} {i} {r}" for (t, k, s, d, i, r, _c) in trace]
