import statistics

import pytest

import bftperf.engine as E
from bftperf import SimConfig, run
from bftperf import protocols as P
from bftperf.errors import LivelockError, PastEventError
from bftperf.rng import RngStream

needs_kernel = pytest.mark.skipif(not E.HAVE_KERNEL, reason="compiled kernel not built")


# -- event queue

def test_queue_accepts_future_and_simultaneous():
    q = E.EventQueue()
    q.clock = 3.0
    q.push(5.0, E.EventKind.TIMER_EXPIRY, 0)
    q.push(3.0, E.EventKind.TIMER_EXPIRY, 1)
    assert len(q) == 2
    assert q.pop().time == 3.0
    assert q.pop().time == 5.0


def test_queue_rejects_past():
    q = E.EventQueue()
    q.clock = 3.0
    with pytest.raises(PastEventError, match="past event"):
        q.push(2.0, E.EventKind.TIMER_EXPIRY, 0)


def test_queue_ties_fifo():
    q = E.EventQueue()
    for tgt in range(5):
        q.push(1.0, E.EventKind.SERVICE_COMPLETION, tgt)
    assert [q.pop().target for _ in range(5)] == list(range(5))


# -- service times

def test_deterministic_service():
    st = E.Station(0, E.VALIDATOR, 1 / 3, "deterministic")
    assert E.sample_service_time(st) == pytest.approx(3.0)


def test_exponential_service_moments():
    st = E.Station(0, E.VALIDATOR, 1 / 3, "exponential", RngStream(2024, 0))
    xs = [E.sample_service_time(st) for _ in range(1_000_000)]
    assert 2.99 <= statistics.fmean(xs) <= 3.01
    assert statistics.pvariance(xs) == pytest.approx(9.0, rel=0.01)


# -- stations

def engine(**kw):
    cfg = SimConfig(**{"n": 4, "instances": 1, **kw})
    return E.PyEngine(E.prepare(cfg))


def test_idle_station_starts_service():
    eng = engine(validator_dist="deterministic")
    m = P.Message(P.MsgKind.PREPARE, 1, 0, 0, 0)
    eng.deliver(m, 0)
    assert len(eng.events) == 1
    assert eng.events.peek_time() == pytest.approx(3.0)


def test_busy_station_queues_without_new_event():
    eng = engine()
    m = P.Message(P.MsgKind.PREPARE, 1, 0, 0, 0)
    eng.deliver(m, 0)
    eng.deliver(m.copy_to(0), 0)
    assert len(eng.events) == 1
    assert len(eng.stations[0].queue) == 2


def test_crashed_station_drops():
    eng = engine(n=4, n_f=1)
    dead = next(s for s in eng.stations if s.crashed)
    eng.deliver(P.Message(P.MsgKind.PREPARE, 0, dead.id, 0, 0), dead.id)
    assert len(eng.events) == 0 and not dead.queue


# -- whole runs

def test_hotstuff_clique_mean():
    r = run(SimConfig(protocol="hotstuff", n=16, tau0=1e6, instances=2000))
    assert r.mean == pytest.approx(189.0, rel=0.05)


def test_ibft_deterministic_service_is_exact():
    # with constant service there is no idle time: 2n+1 services per instance
    r = run(SimConfig(protocol="ibft", n=16, tau0=1e6, instances=500,
                      validator_dist="deterministic"))
    assert r.mean == pytest.approx(99.0, rel=1e-3)


def test_same_seed_same_times():
    cfg = SimConfig(protocol="hotstuff", n=16, n_f=2, tau0=250.0, instances=200, seed=9)
    assert run(cfg).times == run(cfg).times


def test_different_seeds_differ():
    cfg = SimConfig(protocol="hotstuff", n=16, instances=50)
    assert run(cfg.with_(seed=1)).times != run(cfg.with_(seed=2)).times


@pytest.mark.parametrize("proto,per_instance", [("ibft", 16 * 33), ("hotstuff", 8 * 16)])
def test_message_counts(proto, per_instance):
    # IBFT: n(2n+1) services per instance; HotStuff: 4n leader copies, 3n votes, n NEW-VIEW
    k = 400
    r = run(SimConfig(protocol=proto, n=16, instances=k, validator_dist="deterministic"))
    assert sum(r.processed) / k == pytest.approx(per_instance, rel=0.01)


def test_crashed_leader_recovers():
    # HotStuff with crashes: runs through views whose leader is dead
    cfg = SimConfig(protocol="hotstuff", n=16, n_f=5, tau0=200.0, instances=100, seed=3)
    r = run(cfg)
    assert r.count == 100 and r.divergent == 0 and r.subquorum == 0
    assert max(r.times) > 200.0


def test_horizon_livelock():
    cfg = SimConfig(protocol="ibft", n=16, instances=10, tau0=1e6, horizon=10.0)
    with pytest.raises(LivelockError):
        run(cfg, backend="python")


def test_warmup_excluded():
    cfg = SimConfig(protocol="hotstuff", n=16, instances=50, warmup=10)
    r = run(cfg)
    assert r.mean == pytest.approx(statistics.fmean(r.times[10:50]))


def test_python_backend_selected_by_env(monkeypatch):
    monkeypatch.setenv("BFTPERF_BACKEND", "python")
    assert run(SimConfig(n=4, instances=3)).backend == "python"


PARITY = [
    dict(protocol="ibft", n=16, n_f=2, tau0=120.0),
    dict(protocol="hotstuff", n=16, n_f=2, tau0=250.0),
    dict(protocol="ibft", n=31, topology="fc", topo_params=(8, 4), rs=2.0),
    dict(protocol="hotstuff", n=24, n_f=3, topology="df", topo_params=(3,), tau0=400.0),
    dict(protocol="ibft", n=13, chains=3, topology="fc", topo_params=(4, 2), rs=1.0),
    dict(protocol="ibft", n=16, n_f=5, tau0=60.0, leader_policy="random"),
    dict(protocol="hotstuff", n=10, validator_dist="deterministic", switch_dist="deterministic",
         topology="df", topo_params=(2,)),
]


@needs_kernel
@pytest.mark.parametrize("kw", PARITY)
def test_kernel_matches_python(kw):
    cfg = SimConfig(instances=40, seed=17, **kw)
    a = run(cfg, backend="python", trace=True)
    b = run(cfg, backend="kernel", trace=True)
    assert b.backend == "kernel"
    assert a.times == b.times
    assert a.events == b.events
    assert a.processed == b.processed
    assert a.committed == b.committed
    assert a.trace == b.trace


def test_trace_format():
    r = run(SimConfig(n=4, instances=2), trace=True)
    lines = E.format_trace(r.trace)
    assert lines and len(lines[0].split()) == 6
