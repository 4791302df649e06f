"""IBFT and HotStuff validator state machines (crash faults only).

Handlers take a ``ValidatorState`` and a ``Message`` and return a list of
actions for the engine to apply in order:

    ("send", Message)         unicast; ``dest`` already set
    ("broadcast", Message)    expanded by the engine to a self-copy plus n-1 unicasts
    ("timer", duration)       (re)start the validator's single timer
    ("commit", instance, block, cert)

Votes are tallied per (instance, round, kind) as sets of distinct senders,
whether they arrive early or late; the advance step only reads the tallies
that matter for the validator's current position, which is equivalent to
buffering future messages and dropping stale ones. Service cost is paid once,
when the engine dequeues the message.

The compiled kernel reimplements exactly this logic; keep the two in step.
"""

from dataclasses import dataclass
from enum import IntEnum

from .errors import ConfigError, ProtocolError
from .rng import hash_index

IBFT = "ibft"
HOTSTUFF = "hotstuff"
PROTOCOLS = (IBFT, HOTSTUFF)

# Bounds shared with the compiled kernel (it uses fixed-size ring buffers).
MAX_ROUND = 64
LOOKAHEAD = 16


class MsgKind(IntEnum):
    PRE_PREPARE = 0
    PREPARE = 1
    COMMIT = 2
    ROUND_CHANGE = 3
    NEW_VIEW = 4
    HS_PREPARE = 5
    HS_PREPARE_VOTE = 6
    HS_PRECOMMIT = 7
    HS_PRECOMMIT_VOTE = 8
    HS_COMMIT = 9
    HS_COMMIT_VOTE = 10
    HS_DECIDE = 11


KIND_NAMES = {
    MsgKind.PRE_PREPARE: "PRE-PREPARE",
    MsgKind.PREPARE: "PREPARE",
    MsgKind.COMMIT: "COMMIT",
    MsgKind.ROUND_CHANGE: "ROUND-CHANGE",
    MsgKind.NEW_VIEW: "NEW-VIEW",
    MsgKind.HS_PREPARE: "PREPARE",
    MsgKind.HS_PREPARE_VOTE: "PREPARE-VOTE",
    MsgKind.HS_PRECOMMIT: "PRECOMMIT",
    MsgKind.HS_PRECOMMIT_VOTE: "PRECOMMIT-VOTE",
    MsgKind.HS_COMMIT: "COMMIT",
    MsgKind.HS_COMMIT_VOTE: "COMMIT-VOTE",
    MsgKind.HS_DECIDE: "DECIDE",
}

IBFT_KINDS = frozenset({MsgKind.PRE_PREPARE, MsgKind.PREPARE, MsgKind.COMMIT, MsgKind.ROUND_CHANGE})
HS_KINDS = frozenset(MsgKind) - IBFT_KINDS

# leader broadcasts in phase order, and the vote each one solicits
HS_LEADER_KINDS = (MsgKind.HS_PREPARE, MsgKind.HS_PRECOMMIT, MsgKind.HS_COMMIT, MsgKind.HS_DECIDE)
HS_VOTE_FOR = {
    MsgKind.HS_PREPARE: MsgKind.HS_PREPARE_VOTE,
    MsgKind.HS_PRECOMMIT: MsgKind.HS_PRECOMMIT_VOTE,
    MsgKind.HS_COMMIT: MsgKind.HS_COMMIT_VOTE,
}

# IBFT phases
WAIT_PP = 0
IN_PREPARE = 1
IN_COMMIT = 2

BROADCAST = -1


@dataclass(slots=True)
class Message:
    kind: int
    sender: int
    dest: int
    instance: int
    round: int
    block: int = -1
    lock_round: int = -1
    lock_block: int = -1
    cert: int = 0
    chain: int = 0
    dest_switch: int = -1

    def copy_to(self, dest):
        return Message(self.kind, self.sender, dest, self.instance, self.round,
                       self.block, self.lock_round, self.lock_block, self.cert,
                       self.chain, self.dest_switch)


def fault_bound(n):
    """Largest f with 3f+1 <= n."""
    return (n - 1) // 3


def quorum(n):
    return 2 * fault_bound(n) + 1


def fresh_block(instance, rnd):
    return instance * MAX_ROUND + rnd


def timer_duration(tau0, rnd):
    """tau0 doubled once per round already lost in this instance."""
    return tau0 * (1 << rnd)


def select_leader(protocol, instance, rnd, n, seed=0, chain=0, policy=None):
    """Leader of (instance, round/view).

    IBFT rotates ``(instance + round) mod n``; HotStuff draws uniformly,
    keyed on the run seed so reruns see the same sequence. ``policy``
    overrides the protocol default ("rotation" or "random").
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    if policy is None or policy == "default":
        policy = "rotation" if protocol == IBFT else "random"
    if policy == "rotation":
        return (instance + rnd + chain) % n
    if policy == "random":
        return hash_index(seed, chain, instance, rnd, n)
    raise ConfigError(f"unknown leader policy {policy!r}")


def inject_crashes(n, n_f, rng):
    """Choose ``n_f`` distinct fail-stop validators (partial Fisher-Yates)."""
    f = fault_bound(n)
    if n_f < 0 or n_f > f:
        raise ConfigError(f"n_f={n_f} outside [0, f={f}] for n={n}")
    pool = list(range(n))
    for i in range(n_f):
        j = i + rng.randbelow(n - i)
        pool[i], pool[j] = pool[j], pool[i]
    return frozenset(pool[:n_f])


class _Box:
    """Everything a validator has heard about one consensus instance."""

    __slots__ = ("votes", "best_lock", "leader_msgs", "commit_block", "led", "proposed")

    def __init__(self):
        self.votes = {}         # (round, kind) -> set of senders
        self.best_lock = {}     # round -> (lock_round, lock_block) from RC / NEW-VIEW
        self.leader_msgs = {}   # (round, kind) -> (block, cert)
        self.commit_block = {}  # round -> block carried by COMMIT votes (IBFT)
        self.led = set()        # (round, kind) this validator broadcast as leader
        self.proposed = {}      # round -> block this validator proposed as leader

    def count(self, rnd, kind):
        s = self.votes.get((rnd, kind))
        return len(s) if s else 0


class ValidatorState:
    __slots__ = ("id", "protocol", "n", "f", "quorum", "final_quorum", "tau0", "seed",
                 "chain", "leader_policy", "instance", "round", "phase", "stage",
                 "lock_round", "lock_block", "boxes", "committed", "crashed",
                 "timer_duration", "expiries")

    def __init__(self, vid, protocol, n, tau0, seed=0, chain=0, leader_policy=None, crashed=False):
        if protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {protocol!r}")
        self.id = vid
        self.protocol = protocol
        self.n = n
        self.f = fault_bound(n)
        self.quorum = 2 * self.f + 1
        self.final_quorum = n - self.f
        self.tau0 = tau0
        self.seed = seed
        self.chain = chain
        self.leader_policy = leader_policy
        self.instance = 0
        self.round = 0
        self.phase = WAIT_PP
        self.stage = 0
        self.lock_round = -1
        self.lock_block = -1
        self.boxes = {}
        self.committed = []
        self.crashed = crashed
        self.timer_duration = tau0
        self.expiries = 0

    def leader(self, instance, rnd):
        return select_leader(self.protocol, instance, rnd, self.n, self.seed, self.chain,
                             self.leader_policy)

    def box(self, instance):
        b = self.boxes.get(instance)
        if b is None:
            b = self.boxes[instance] = _Box()
        return b

    def _msg(self, kind, dest, rnd, block=-1, lock_round=-1, lock_block=-1, cert=0):
        return Message(kind, self.id, dest, self.instance, rnd, block, lock_round,
                       lock_block, cert, self.chain)

    def _timer(self, acts, rnd):
        self.timer_duration = timer_duration(self.tau0, rnd)
        acts.append(("timer", self.timer_duration))

    def _enter(self, instance):
        self.boxes.pop(self.instance, None)
        self.instance = instance
        self.round = 0
        self.phase = WAIT_PP
        self.stage = 0
        self.lock_round = -1
        self.lock_block = -1
        self.expiries = 0


def _record(st, msg):
    """Tally ``msg``; False if it is stale and should be ignored."""
    if msg.instance < st.instance:
        return False
    if msg.instance - st.instance >= LOOKAHEAD:
        raise ProtocolError(f"validator {st.id}: instance {msg.instance} beyond lookahead")
    if msg.round >= MAX_ROUND:
        raise ProtocolError(f"validator {st.id}: round {msg.round} beyond MAX_ROUND")
    box = st.box(msg.instance)
    k = msg.kind
    if k in (MsgKind.PRE_PREPARE, MsgKind.HS_PREPARE, MsgKind.HS_PRECOMMIT,
             MsgKind.HS_COMMIT, MsgKind.HS_DECIDE):
        box.leader_msgs.setdefault((msg.round, k), (msg.block, msg.cert))
        return True
    senders = box.votes.get((msg.round, k))
    if senders is None:
        senders = box.votes[(msg.round, k)] = set()
    if msg.sender in senders:
        return True
    senders.add(msg.sender)
    if k == MsgKind.COMMIT:
        box.commit_block.setdefault(msg.round, msg.block)
    elif k in (MsgKind.ROUND_CHANGE, MsgKind.NEW_VIEW):
        best = box.best_lock.get(msg.round, (-1, -1))
        if msg.lock_round > best[0]:
            box.best_lock[msg.round] = (msg.lock_round, msg.lock_block)
    return True


# ---------------------------------------------------------------- IBFT

def ibft_start(st, instance=0):
    """Enter ``instance``: start timer 1, propose if leader of round 0."""
    acts = []
    st._enter(instance)
    _ibft_entered(st, acts)
    _ibft_advance(st, acts)
    return acts


def _ibft_entered(st, acts):
    st._timer(acts, 0)
    if st.leader(st.instance, 0) == st.id:
        _ibft_propose(st, acts, 0)


def _ibft_propose(st, acts, rnd):
    box = st.box(st.instance)
    lr, lb = box.best_lock.get(rnd, (-1, -1)) if rnd > 0 else (-1, -1)
    block = lb if lr >= 0 else fresh_block(st.instance, rnd)
    box.proposed[rnd] = block
    acts.append(("broadcast", st._msg(MsgKind.PRE_PREPARE, BROADCAST, rnd, block)))


def ibft_handle(st, msg):
    if msg.kind not in IBFT_KINDS:
        raise ProtocolError(f"IBFT validator got {msg.kind!r}")
    acts = []
    if st.crashed:
        return acts
    if _record(st, msg) and msg.instance == st.instance:
        _ibft_advance(st, acts)
    return acts


def ibft_on_timer(st):
    """Timer expired before commit: move to the next round and ask for a leader change."""
    acts = []
    if st.crashed:
        return acts
    st.round += 1
    st.expiries += 1
    if st.round >= MAX_ROUND:
        raise ProtocolError(f"validator {st.id}: round {st.round} beyond MAX_ROUND")
    st.phase = WAIT_PP
    st._timer(acts, st.round)
    acts.append(("broadcast", st._msg(MsgKind.ROUND_CHANGE, BROADCAST, st.round,
                                      lock_round=st.lock_round, lock_block=st.lock_block)))
    _ibft_advance(st, acts)
    return acts


def _ibft_advance(st, acts):
    Q = st.quorum
    while True:
        box = st.box(st.instance)
        r = st.round
        # progress in the current round
        if st.phase == WAIT_PP:
            pp = box.leader_msgs.get((r, MsgKind.PRE_PREPARE))
            if pp is not None:
                st.phase = IN_PREPARE
                st._timer(acts, r)
                acts.append(("broadcast", st._msg(MsgKind.PREPARE, BROADCAST, r, pp[0])))
                continue
        elif st.phase == IN_PREPARE:
            if box.count(r, MsgKind.PREPARE) >= Q:
                block = box.leader_msgs[(r, MsgKind.PRE_PREPARE)][0]
                st.phase = IN_COMMIT
                st.lock_round, st.lock_block = r, block
                acts.append(("broadcast", st._msg(MsgKind.COMMIT, BROADCAST, r, block)))
                continue
        elif box.count(r, MsgKind.COMMIT) >= Q:
            _ibft_commit(st, acts, r, box)
            continue
        # a commit certificate from another round (catch-up after a partial round change)
        cert_round = -1
        for (rr, k), senders in box.votes.items():
            if k == MsgKind.COMMIT and rr != r and len(senders) >= Q and rr > cert_round:
                cert_round = rr
        if cert_round >= 0:
            _ibft_commit(st, acts, cert_round, box)
            continue
        # a later round already has a proposal: join it
        hi = -1
        for (rr, k) in box.leader_msgs:
            if k == MsgKind.PRE_PREPARE and rr > r and rr > hi:
                hi = rr
        if hi >= 0:
            st.round = hi
            st.phase = WAIT_PP
            continue
        # designated leader of a later (or the current) round holding a round-change quorum
        lead = -1
        for (rr, k), senders in box.votes.items():
            if (k == MsgKind.ROUND_CHANGE and rr >= r and rr > 0 and rr > lead
                    and len(senders) >= Q and rr not in box.proposed
                    and st.leader(st.instance, rr) == st.id):
                lead = rr
        if lead >= 0:
            st.round = lead
            st.phase = WAIT_PP
            st._timer(acts, lead)
            _ibft_propose(st, acts, lead)
            continue
        return


def _ibft_commit(st, acts, rnd, box):
    block = box.commit_block[rnd]
    acts.append(("commit", st.instance, block, box.count(rnd, MsgKind.COMMIT)))
    st.committed.append(block)
    st._enter(st.instance + 1)
    _ibft_entered(st, acts)


# ------------------------------------------------------------ HotStuff

def hotstuff_start(st, instance=0):
    """Enter ``instance``: NEW-VIEW to the view-0 leader and start the timer."""
    acts = []
    st._enter(instance)
    _hs_entered(st, acts)
    _hs_advance(st, acts)
    return acts


def _hs_entered(st, acts):
    box = st.box(st.instance)
    for (rr, k) in box.leader_msgs:
        if k == MsgKind.HS_DECIDE:
            return  # already decided; the advance step commits it
    st._timer(acts, 0)
    acts.append(("send", st._msg(MsgKind.NEW_VIEW, st.leader(st.instance, 0), 0)))


def hotstuff_handle(st, msg):
    if msg.kind not in HS_KINDS:
        raise ProtocolError(f"HotStuff validator got {msg.kind!r}")
    acts = []
    if st.crashed:
        return acts
    if _record(st, msg) and msg.instance == st.instance:
        _hs_advance(st, acts)
    return acts


def hotstuff_on_timer(st):
    """Timer expired: next view, doubled timer, NEW-VIEW for the same block."""
    acts = []
    if st.crashed:
        return acts
    st.round += 1
    st.expiries += 1
    if st.round >= MAX_ROUND:
        raise ProtocolError(f"validator {st.id}: view {st.round} beyond MAX_ROUND")
    st.stage = 0
    st._timer(acts, st.round)
    acts.append(("send", st._msg(MsgKind.NEW_VIEW, st.leader(st.instance, st.round), st.round,
                                 lock_round=st.lock_round, lock_block=st.lock_block)))
    _hs_advance(st, acts)
    return acts


def _hs_lead(st, acts, box, v):
    """Leader duties for view ``v``; True if a broadcast went out."""
    led = box.led
    if (v, MsgKind.HS_PREPARE) not in led:
        if box.count(v, MsgKind.NEW_VIEW) >= st.quorum:
            lr, lb = box.best_lock.get(v, (-1, -1))
            block = lb if lr >= 0 else fresh_block(st.instance, v)
            box.proposed[v] = block
            led.add((v, MsgKind.HS_PREPARE))
            acts.append(("broadcast", st._msg(MsgKind.HS_PREPARE, BROADCAST, v, block)))
            return True
        return False
    block = box.proposed[v]
    for kind, vote, need in ((MsgKind.HS_PRECOMMIT, MsgKind.HS_PREPARE_VOTE, st.quorum),
                             (MsgKind.HS_COMMIT, MsgKind.HS_PRECOMMIT_VOTE, st.quorum),
                             (MsgKind.HS_DECIDE, MsgKind.HS_COMMIT_VOTE, st.final_quorum)):
        if (v, kind) in led:
            continue
        got = box.count(v, vote)
        if got >= need:
            led.add((v, kind))
            acts.append(("broadcast", st._msg(kind, BROADCAST, v, block, cert=got)))
            return True
        return False
    return False


def _hs_advance(st, acts):
    while True:
        box = st.box(st.instance)
        v = st.round
        # a DECIDE for any view settles the instance
        dec = None
        for (rr, k), val in box.leader_msgs.items():
            if k == MsgKind.HS_DECIDE and (dec is None or rr > dec[0]):
                dec = (rr, val)
        if dec is not None:
            block, cert = dec[1]
            acts.append(("commit", st.instance, block, cert))
            st.committed.append(block)
            st._enter(st.instance + 1)
            _hs_entered(st, acts)
            continue
        # a leader already runs a later view: follow it
        hi = -1
        for (rr, k) in box.leader_msgs:
            if rr > v and rr > hi:
                hi = rr
        if hi >= 0:
            st.round = hi
            st.stage = 0
            st._timer(acts, hi)
            continue
        # replica votes for the current view, strictly in phase order
        if st.stage < 3:
            kind = HS_LEADER_KINDS[st.stage]
            got = box.leader_msgs.get((v, kind))
            if got is not None:
                st.stage += 1
                if kind == MsgKind.HS_PRECOMMIT:
                    st.lock_round, st.lock_block = v, got[0]
                acts.append(("send", st._msg(HS_VOTE_FOR[kind], st.leader(st.instance, v), v, got[0])))
                continue
        if st.leader(st.instance, v) == st.id and _hs_lead(st, acts, box, v):
            continue
        # NEW-VIEW quorum for a later view this validator leads
        lead = -1
        for (rr, k), senders in box.votes.items():
            if (k == MsgKind.NEW_VIEW and rr > v and rr > lead and len(senders) >= st.quorum
                    and st.leader(st.instance, rr) == st.id):
                lead = rr
        if lead >= 0:
            st.round = lead
            st.stage = 0
            st._timer(acts, lead)
            continue
        return


HANDLERS = {
    IBFT: (ibft_start, ibft_handle, ibft_on_timer),
    HOTSTUFF: (hotstuff_start, hotstuff_handle, hotstuff_on_timer),
}
