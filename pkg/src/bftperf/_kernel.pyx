# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation loop.

A line-by-line port of ``engine.PyEngine`` and the state machines in
``protocols``. Event sequence numbers, random draws and action order are
kept identical, so both backends return the same floats for a seed.
Per-instance tallies live in ring buffers of LOOKAHEAD slots x MAX_ROUND
rounds with sender bitsets.
"""

from libc.stdint cimport int32_t, int64_t, uint8_t, uint64_t
from libc.stdlib cimport calloc, free, malloc, realloc
from libc.string cimport memset
from libc.math cimport ldexp, log

from .errors import LivelockError, PastEventError, ProtocolError, SimulationError


cdef enum:
    W = 16          # LOOKAHEAD
    R = 64          # MAX_ROUND
    NSLOT = 4       # vote / leader kinds tracked per round
    MAX_KERNEL_N = 512

cdef enum:
    EV_ARRIVAL = 0
    EV_SERVICE = 1
    EV_TIMER = 2

cdef enum:
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

cdef enum:
    WAIT_PP = 0
    IN_PREPARE = 1
    IN_COMMIT = 2

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double TWO_M53 = 1.0 / 9007199254740992.0
cdef uint64_t LEADER_STREAM = 0x1EADE7


cdef inline uint64_t mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t stream_state(uint64_t seed, uint64_t sid) nogil:
    return mix64(seed ^ mix64((sid + 1) * GOLDEN))


cdef struct Msg:
    int32_t kind
    int32_t sender
    int32_t dest
    int32_t instance
    int32_t rnd
    int32_t lock_round
    int32_t cert
    int32_t chain
    int32_t dest_switch
    int32_t next
    int64_t block
    int64_t lock_block


cdef struct Ev:
    double time
    int64_t seq
    int64_t token
    int32_t kind
    int32_t target


cdef inline bint ev_less(Ev* a, Ev* b) nogil:
    if a.time < b.time:
        return True
    if a.time > b.time:
        return False
    return a.seq < b.seq


# vote slot per kind (IBFT: PREPARE, COMMIT, RC; HotStuff: NV and the three votes)
cdef int VSLOT[12]
cdef int LSLOT[12]
VSLOT[:] = [-1, 0, 1, 2, 0, -1, 1, -1, 2, -1, 3, -1]
LSLOT[:] = [0, -1, -1, -1, -1, 0, -1, 1, -1, 2, -1, 3]


cdef class Kernel:
    # setup
    cdef int n, S, chains, instances, proto, nw, f, Q, FQ, need
    cdef double tau0, rv, rs, horizon
    cdef bint v_det, s_det, leader_random, clique
    cdef uint64_t seed, leader_z
    cdef int32_t* edge_of
    cdef int32_t* offsets
    cdef int32_t* hops
    # stations
    cdef int NST
    cdef uint8_t* busy
    cdef uint8_t* st_crashed
    cdef uint64_t* rng
    cdef int32_t* qhead
    cdef int32_t* qtail
    cdef int64_t* served
    # messages
    cdef Msg* pool
    cdef int32_t pool_cap, free_head
    # events
    cdef Ev* heap
    cdef int64_t heap_len, heap_cap, seq
    cdef double clock
    # validator state, indexed by chain * n + v
    cdef int NV
    cdef int32_t* v_inst
    cdef int32_t* v_round
    cdef int32_t* v_phase
    cdef int32_t* v_stage
    cdef int32_t* v_lock_round
    cdef int64_t* v_lock_block
    cdef int64_t* timer_gen
    cdef uint8_t* v_crashed
    # per-instance boxes: slot = vi * W + instance % W
    cdef int32_t* slot_inst
    cdef int32_t* slot_maxr
    cdef int32_t* vcount       # [slot][R][NSLOT]
    cdef uint64_t* vbits       # [slot][R][NSLOT][nw]
    cdef int32_t* best_lr      # [slot][R]
    cdef int64_t* best_lb
    cdef uint8_t* lhas         # [slot][R][NSLOT]
    cdef int64_t* lblock
    cdef int32_t* lcert
    cdef uint8_t* cb_has       # [slot][R]
    cdef int64_t* cb_block
    cdef uint8_t* led          # [slot][R][NSLOT]
    cdef uint8_t* prop_has     # [slot][R]
    cdef int64_t* prop_block
    # outputs
    cdef list decided, times, committed, trace
    cdef double* last_done
    cdef int64_t* ndone
    cdef int64_t divergent, subquorum

    def __cinit__(self):
        self.pool = NULL
        self.heap = NULL

    def __dealloc__(self):
        free(self.edge_of); free(self.offsets); free(self.hops)
        free(self.busy); free(self.st_crashed); free(self.rng)
        free(self.qhead); free(self.qtail); free(self.served)
        free(self.pool); free(self.heap)
        free(self.v_inst); free(self.v_round); free(self.v_phase); free(self.v_stage)
        free(self.v_lock_round); free(self.v_lock_block); free(self.timer_gen); free(self.v_crashed)
        free(self.slot_inst); free(self.slot_maxr); free(self.vcount); free(self.vbits)
        free(self.best_lr); free(self.best_lb); free(self.lhas); free(self.lblock); free(self.lcert)
        free(self.cb_has); free(self.cb_block); free(self.led); free(self.prop_has)
        free(self.prop_block); free(self.last_done); free(self.ndone)

    def __init__(self, setup, bint trace):
        cdef int64_t i, noff, nh, NV, nslots
        cdef int n = setup.n
        if n > MAX_KERNEL_N:
            raise ValueError(f"kernel supports n <= {MAX_KERNEL_N}")
        self.n = n
        self.S = setup.num_switches
        self.chains = setup.chains
        self.instances = setup.instances
        self.proto = setup.protocol
        self.nw = (n + 63) // 64
        self.f = (n - 1) // 3
        self.Q = 2 * self.f + 1
        self.FQ = n - self.f
        self.need = self.Q if self.proto == 0 else self.FQ
        self.tau0 = setup.tau0
        self.rv = setup.rv
        self.rs = setup.rs
        self.horizon = setup.horizon
        self.v_det = setup.v_det
        self.s_det = setup.s_det
        self.leader_random = setup.leader_random
        self.clique = setup.clique
        self.seed = <uint64_t>setup.seed
        self.leader_z = stream_state(self.seed, LEADER_STREAM)

        self.edge_of = <int32_t*>calloc(max(n, 1), sizeof(int32_t))
        if not setup.clique:
            for i in range(n):
                self.edge_of[i] = setup.edge_of[i]
        noff = len(setup.hop_offsets)
        self.offsets = <int32_t*>calloc(max(noff, 1), sizeof(int32_t))
        for i in range(noff):
            self.offsets[i] = setup.hop_offsets[i]
        nh = len(setup.hops)
        self.hops = <int32_t*>calloc(max(nh, 1), sizeof(int32_t))
        for i in range(nh):
            self.hops[i] = setup.hops[i]

        self.NST = n + self.S
        self.busy = <uint8_t*>calloc(self.NST, 1)
        self.st_crashed = <uint8_t*>calloc(self.NST, 1)
        self.rng = <uint64_t*>calloc(self.NST, sizeof(uint64_t))
        self.qhead = <int32_t*>malloc(self.NST * sizeof(int32_t))
        self.qtail = <int32_t*>malloc(self.NST * sizeof(int32_t))
        self.served = <int64_t*>calloc(self.NST, sizeof(int64_t))
        for i in range(self.NST):
            self.rng[i] = stream_state(self.seed, <uint64_t>i)
            self.qhead[i] = -1
            self.qtail[i] = -1
        for v in setup.crashed:
            self.st_crashed[<int>v] = 1

        self.pool_cap = 1024
        self.pool = <Msg*>malloc(self.pool_cap * sizeof(Msg))
        for i in range(self.pool_cap):
            self.pool[i].next = i + 1 if i + 1 < self.pool_cap else -1
        self.free_head = 0

        self.heap_cap = 1024
        self.heap = <Ev*>malloc(self.heap_cap * sizeof(Ev))
        self.heap_len = 0
        self.seq = 0
        self.clock = 0.0

        self.NV = self.chains * n
        NV = self.NV

        self.v_inst = <int32_t*>calloc(NV, sizeof(int32_t))
        self.v_round = <int32_t*>calloc(NV, sizeof(int32_t))
        self.v_phase = <int32_t*>calloc(NV, sizeof(int32_t))
        self.v_stage = <int32_t*>calloc(NV, sizeof(int32_t))
        self.v_lock_round = <int32_t*>calloc(NV, sizeof(int32_t))
        self.v_lock_block = <int64_t*>calloc(NV, sizeof(int64_t))
        self.timer_gen = <int64_t*>calloc(NV, sizeof(int64_t))
        self.v_crashed = <uint8_t*>calloc(NV, 1)
        for i in range(NV):
            self.v_lock_round[i] = -1
            self.v_lock_block[i] = -1
            self.v_crashed[i] = self.st_crashed[i % n]

        nslots = NV * W
        self.slot_inst = <int32_t*>malloc(nslots * sizeof(int32_t))
        self.slot_maxr = <int32_t*>malloc(nslots * sizeof(int32_t))
        for i in range(nslots):
            self.slot_inst[i] = -1
            self.slot_maxr[i] = -1
        self.vcount = <int32_t*>calloc(nslots * R * NSLOT, sizeof(int32_t))
        self.vbits = <uint64_t*>calloc(nslots * R * NSLOT * self.nw, sizeof(uint64_t))
        self.best_lr = <int32_t*>calloc(nslots * R, sizeof(int32_t))
        self.best_lb = <int64_t*>calloc(nslots * R, sizeof(int64_t))
        self.lhas = <uint8_t*>calloc(nslots * R * NSLOT, 1)
        self.lblock = <int64_t*>calloc(nslots * R * NSLOT, sizeof(int64_t))
        self.lcert = <int32_t*>calloc(nslots * R * NSLOT, sizeof(int32_t))
        self.cb_has = <uint8_t*>calloc(nslots * R, 1)
        self.cb_block = <int64_t*>calloc(nslots * R, sizeof(int64_t))
        self.led = <uint8_t*>calloc(nslots * R * NSLOT, 1)
        self.prop_has = <uint8_t*>calloc(nslots * R, 1)
        self.prop_block = <int64_t*>calloc(nslots * R, sizeof(int64_t))
        if self.vbits == NULL or self.vcount == NULL or self.lblock == NULL:
            raise MemoryError()

        self.decided = [[] for _ in range(self.chains)]
        self.times = [[] for _ in range(self.chains)]
        self.committed = [[[] for _ in range(n)] for _ in range(self.chains)]
        self.trace = [] if trace else None
        self.last_done = <double*>calloc(self.chains, sizeof(double))
        self.ndone = <int64_t*>calloc(self.chains, sizeof(int64_t))
        self.divergent = 0
        self.subquorum = 0

    # ------------------------------------------------------------ events
    cdef int push(self, double time, int kind, int target, int64_t token) except -1:
        cdef int64_t i, parent
        cdef Ev e
        if time < self.clock:
            raise PastEventError(f"past event at t={time} (clock={self.clock})")
        if self.heap_len == self.heap_cap:
            self.heap_cap *= 2
            self.heap = <Ev*>realloc(self.heap, self.heap_cap * sizeof(Ev))
            if self.heap == NULL:
                raise MemoryError()
        self.seq += 1
        e.time = time
        e.seq = self.seq
        e.token = token
        e.kind = kind
        e.target = target
        i = self.heap_len
        self.heap_len += 1
        while i > 0:
            parent = (i - 1) >> 1
            if ev_less(&e, &self.heap[parent]):
                self.heap[i] = self.heap[parent]
                i = parent
            else:
                break
        self.heap[i] = e
        return 0

    cdef Ev pop(self):
        cdef Ev top = self.heap[0]
        cdef Ev last
        cdef int64_t i = 0, c, m = self.heap_len - 1
        self.heap_len = m
        if m > 0:
            last = self.heap[m]
            while True:
                c = 2 * i + 1
                if c >= m:
                    break
                if c + 1 < m and ev_less(&self.heap[c + 1], &self.heap[c]):
                    c += 1
                if ev_less(&self.heap[c], &last):
                    self.heap[i] = self.heap[c]
                    i = c
                else:
                    break
            self.heap[i] = last
        return top

    # ---------------------------------------------------------- messages
    cdef int32_t alloc_msg(self) except -1:
        cdef int32_t i, old
        if self.free_head < 0:
            old = self.pool_cap
            self.pool_cap *= 2
            self.pool = <Msg*>realloc(self.pool, self.pool_cap * sizeof(Msg))
            if self.pool == NULL:
                raise MemoryError()
            for i in range(old, self.pool_cap):
                self.pool[i].next = i + 1 if i + 1 < self.pool_cap else -1
            self.free_head = old
        i = self.free_head
        self.free_head = self.pool[i].next
        self.pool[i].next = -1
        return i

    cdef inline void free_msg(self, int32_t i):
        self.pool[i].next = self.free_head
        self.free_head = i

    cdef int32_t new_msg(self, int vi, int kind, int dest, int rnd, int64_t block,
                         int lock_round, int64_t lock_block, int cert) except -1:
        cdef int32_t i = self.alloc_msg()
        cdef Msg* m = &self.pool[i]
        m.kind = kind
        m.sender = vi % self.n
        m.dest = dest
        m.instance = self.v_inst[vi]
        m.rnd = rnd
        m.block = block
        m.lock_round = lock_round
        m.lock_block = lock_block
        m.cert = cert
        m.chain = vi // self.n
        m.dest_switch = -1
        return i

    # ---------------------------------------------------------- stations
    cdef inline double sample(self, int sid):
        cdef double rate
        cdef bint det
        if sid < self.n:
            rate = self.rv
            det = self.v_det
        else:
            rate = self.rs
            det = self.s_det
        if det:
            return 1.0 / rate
        self.rng[sid] += GOLDEN
        return -log(1.0 - <double>(mix64(self.rng[sid]) >> 11) * TWO_M53) / rate

    cdef int begin(self, int sid) except -1:
        self.busy[sid] = 1
        self.push(self.clock + self.sample(sid), EV_SERVICE, sid, 0)
        return 0

    cdef int deliver(self, int32_t mid, int sid) except -1:
        if self.st_crashed[sid]:
            self.free_msg(mid)
            return 0
        self.pool[mid].next = -1
        if self.qtail[sid] < 0:
            self.qhead[sid] = mid
        else:
            self.pool[self.qtail[sid]].next = mid
        self.qtail[sid] = mid
        if not self.busy[sid]:
            self.begin(sid)
        return 0

    cdef int send(self, int32_t mid) except -1:
        cdef Msg* m = &self.pool[mid]
        cdef int u = m.sender, w = m.dest
        if w == u or self.clique:
            self.deliver(mid, w)
        else:
            m.dest_switch = self.edge_of[w]
            self.deliver(mid, self.n + self.edge_of[u])
        return 0

    cdef int broadcast(self, int32_t mid) except -1:
        cdef int u = self.pool[mid].sender, n = self.n, i
        cdef int32_t c
        for i in range(n):
            c = self.alloc_msg()
            self.pool[c] = self.pool[mid]
            self.pool[c].dest = (u + i) % n
            self.send(c)
        self.free_msg(mid)
        return 0

    cdef int timer(self, int vi, int rnd) except -1:
        self.timer_gen[vi] += 1
        self.push(self.clock + ldexp(self.tau0, rnd), EV_TIMER, vi, self.timer_gen[vi])
        return 0

    cdef int commit(self, int vi, int inst, int64_t block, int cert) except -1:
        cdef int c = vi // self.n
        cdef list dec = self.decided[c]
        self.committed[c][vi % self.n].append(block)
        if cert < self.need:
            self.subquorum += 1
        if inst < len(dec):
            if dec[inst] != block:
                self.divergent += 1
            return 0
        if inst != len(dec):
            raise SimulationError(f"chain {c}: instance {inst} committed out of order")
        dec.append(block)
        (<list>self.times[c]).append(self.clock - self.last_done[c])
        self.last_done[c] = self.clock
        self.ndone[c] += 1
        return 0

    # ------------------------------------------------------------ boxes
    cdef inline int leader(self, int vi, int inst, int rnd):
        cdef uint64_t z
        cdef int c = vi // self.n
        if not self.leader_random:
            return (inst + rnd + c) % self.n
        z = mix64(self.leader_z + <uint64_t>c * GOLDEN)
        z = mix64(z + <uint64_t>inst * GOLDEN)
        z = mix64(z + <uint64_t>rnd * GOLDEN)
        return <int>(z % <uint64_t>self.n)

    cdef int box(self, int vi, int inst):
        cdef int b = vi * W + inst % W
        cdef int64_t r0, i
        if self.slot_inst[b] != inst:
            self.slot_inst[b] = inst
            self.slot_maxr[b] = -1
            r0 = <int64_t>b * R
            memset(&self.vcount[r0 * NSLOT], 0, R * NSLOT * sizeof(int32_t))
            memset(&self.vbits[r0 * NSLOT * self.nw], 0, R * NSLOT * self.nw * sizeof(uint64_t))
            for i in range(R):
                self.best_lr[r0 + i] = -1
                self.best_lb[r0 + i] = -1
            memset(&self.lhas[r0 * NSLOT], 0, R * NSLOT)
            memset(&self.cb_has[r0], 0, R)
            memset(&self.led[r0 * NSLOT], 0, R * NSLOT)
            memset(&self.prop_has[r0], 0, R)
        return b

    cdef inline int count(self, int b, int rnd, int kind):
        return self.vcount[(<int64_t>b * R + rnd) * NSLOT + VSLOT[kind]]

    cdef inline bint has_leader(self, int b, int rnd, int kind):
        return self.lhas[(<int64_t>b * R + rnd) * NSLOT + LSLOT[kind]]

    cdef inline void touch(self, int b, int rnd):
        if rnd > self.slot_maxr[b]:
            self.slot_maxr[b] = rnd

    cdef int record(self, int vi, Msg* m) except -1:
        """1 if tallied (or a duplicate vote), 0 if stale."""
        cdef int inst = self.v_inst[vi], k = m.kind, b, s, wd
        cdef int64_t ri, idx
        cdef uint64_t bit
        if m.instance < inst:
            return 0
        if m.instance - inst >= W:
            raise ProtocolError(f"validator {vi % self.n}: instance {m.instance} beyond lookahead")
        if m.rnd >= R:
            raise ProtocolError(f"validator {vi % self.n}: round {m.rnd} beyond MAX_ROUND")
        b = self.box(vi, m.instance)
        self.touch(b, m.rnd)
        ri = <int64_t>b * R + m.rnd
        s = LSLOT[k]
        if s >= 0:
            idx = ri * NSLOT + s
            if not self.lhas[idx]:
                self.lhas[idx] = 1
                self.lblock[idx] = m.block
                self.lcert[idx] = m.cert
            return 1
        s = VSLOT[k]
        idx = ri * NSLOT + s
        wd = m.sender >> 6
        bit = (<uint64_t>1) << (m.sender & 63)
        if self.vbits[idx * self.nw + wd] & bit:
            return 1
        self.vbits[idx * self.nw + wd] |= bit
        self.vcount[idx] += 1
        if k == COMMIT:
            if not self.cb_has[ri]:
                self.cb_has[ri] = 1
                self.cb_block[ri] = m.block
        elif k == ROUND_CHANGE or k == NEW_VIEW:
            if m.lock_round > self.best_lr[ri]:
                self.best_lr[ri] = m.lock_round
                self.best_lb[ri] = m.lock_block
        return 1

    cdef void enter(self, int vi, int inst):
        self.v_inst[vi] = inst
        self.v_round[vi] = 0
        self.v_phase[vi] = WAIT_PP
        self.v_stage[vi] = 0
        self.v_lock_round[vi] = -1
        self.v_lock_block[vi] = -1

    # ------------------------------------------------------------- IBFT
    cdef int ibft_entered(self, int vi) except -1:
        self.timer(vi, 0)
        if self.leader(vi, self.v_inst[vi], 0) == vi % self.n:
            self.ibft_propose(vi, 0)
        return 0

    cdef int ibft_propose(self, int vi, int rnd) except -1:
        cdef int inst = self.v_inst[vi]
        cdef int b = self.box(vi, inst)
        cdef int64_t ri = <int64_t>b * R + rnd
        cdef int64_t block
        if rnd > 0 and self.best_lr[ri] >= 0:
            block = self.best_lb[ri]
        else:
            block = <int64_t>inst * R + rnd
        self.touch(b, rnd)
        self.prop_has[ri] = 1
        self.prop_block[ri] = block
        self.broadcast(self.new_msg(vi, PRE_PREPARE, -1, rnd, block, -1, -1, 0))
        return 0

    cdef int ibft_on_timer(self, int vi) except -1:
        if self.v_crashed[vi]:
            return 0
        self.v_round[vi] += 1
        if self.v_round[vi] >= R:
            raise ProtocolError(f"validator {vi % self.n}: round {self.v_round[vi]} beyond MAX_ROUND")
        self.v_phase[vi] = WAIT_PP
        self.timer(vi, self.v_round[vi])
        self.broadcast(self.new_msg(vi, ROUND_CHANGE, -1, self.v_round[vi], -1,
                                    self.v_lock_round[vi], self.v_lock_block[vi], 0))
        self.ibft_advance(vi)
        return 0

    cdef int ibft_commit(self, int vi, int rnd, int b) except -1:
        cdef int64_t ri = <int64_t>b * R + rnd
        cdef int inst = self.v_inst[vi]
        self.commit(vi, inst, self.cb_block[ri], self.count(b, rnd, COMMIT))
        self.enter(vi, inst + 1)
        self.ibft_entered(vi)
        return 0

    cdef int ibft_advance(self, int vi) except -1:
        cdef int Q = self.Q, b, r, rr, cert_round, hi, lead, me = vi % self.n
        cdef int64_t ri, block
        while True:
            b = self.box(vi, self.v_inst[vi])
            r = self.v_round[vi]
            ri = <int64_t>b * R + r
            if self.v_phase[vi] == WAIT_PP:
                if self.lhas[ri * NSLOT + 0]:
                    self.v_phase[vi] = IN_PREPARE
                    self.timer(vi, r)
                    self.broadcast(self.new_msg(vi, PREPARE, -1, r, self.lblock[ri * NSLOT + 0], -1, -1, 0))
                    continue
            elif self.v_phase[vi] == IN_PREPARE:
                if self.count(b, r, PREPARE) >= Q:
                    block = self.lblock[ri * NSLOT + 0]
                    self.v_phase[vi] = IN_COMMIT
                    self.v_lock_round[vi] = r
                    self.v_lock_block[vi] = block
                    self.broadcast(self.new_msg(vi, COMMIT, -1, r, block, -1, -1, 0))
                    continue
            elif self.count(b, r, COMMIT) >= Q:
                self.ibft_commit(vi, r, b)
                continue
            cert_round = -1
            for rr in range(self.slot_maxr[b], -1, -1):
                if rr != r and self.count(b, rr, COMMIT) >= Q:
                    cert_round = rr
                    break
            if cert_round >= 0:
                self.ibft_commit(vi, cert_round, b)
                continue
            hi = -1
            for rr in range(self.slot_maxr[b], r, -1):
                if self.has_leader(b, rr, PRE_PREPARE):
                    hi = rr
                    break
            if hi >= 0:
                self.v_round[vi] = hi
                self.v_phase[vi] = WAIT_PP
                continue
            lead = -1
            for rr in range(self.slot_maxr[b], r - 1, -1):
                if (rr > 0 and self.count(b, rr, ROUND_CHANGE) >= Q
                        and not self.prop_has[<int64_t>b * R + rr]
                        and self.leader(vi, self.v_inst[vi], rr) == me):
                    lead = rr
                    break
            if lead >= 0:
                self.v_round[vi] = lead
                self.v_phase[vi] = WAIT_PP
                self.timer(vi, lead)
                self.ibft_propose(vi, lead)
                continue
            return 0

    # --------------------------------------------------------- HotStuff
    cdef int hs_entered(self, int vi) except -1:
        cdef int inst = self.v_inst[vi]
        cdef int b = self.box(vi, inst), rr
        for rr in range(self.slot_maxr[b] + 1):
            if self.has_leader(b, rr, HS_DECIDE):
                return 0
        self.timer(vi, 0)
        self.send(self.new_msg(vi, NEW_VIEW, self.leader(vi, inst, 0), 0, -1, -1, -1, 0))
        return 0

    cdef int hs_on_timer(self, int vi) except -1:
        cdef int rnd
        if self.v_crashed[vi]:
            return 0
        self.v_round[vi] += 1
        rnd = self.v_round[vi]
        if rnd >= R:
            raise ProtocolError(f"validator {vi % self.n}: view {rnd} beyond MAX_ROUND")
        self.v_stage[vi] = 0
        self.timer(vi, rnd)
        self.send(self.new_msg(vi, NEW_VIEW, self.leader(vi, self.v_inst[vi], rnd), rnd, -1,
                               self.v_lock_round[vi], self.v_lock_block[vi], 0))
        self.hs_advance(vi)
        return 0

    cdef int hs_lead(self, int vi, int b, int v) except -1:
        cdef int64_t ri = <int64_t>b * R + v
        cdef int64_t block
        cdef int got, j, kind, vote, need
        if not self.led[ri * NSLOT + 0]:
            if self.count(b, v, NEW_VIEW) >= self.Q:
                if self.best_lr[ri] >= 0:
                    block = self.best_lb[ri]
                else:
                    block = <int64_t>self.v_inst[vi] * R + v
                self.touch(b, v)
                self.prop_has[ri] = 1
                self.prop_block[ri] = block
                self.led[ri * NSLOT + 0] = 1
                self.broadcast(self.new_msg(vi, HS_PREPARE, -1, v, block, -1, -1, 0))
                return 1
            return 0
        block = self.prop_block[ri]
        for j in range(1, 4):
            if self.led[ri * NSLOT + j]:
                continue
            if j == 1:
                kind, vote, need = HS_PRECOMMIT, HS_PREPARE_VOTE, self.Q
            elif j == 2:
                kind, vote, need = HS_COMMIT, HS_PRECOMMIT_VOTE, self.Q
            else:
                kind, vote, need = HS_DECIDE, HS_COMMIT_VOTE, self.FQ
            got = self.count(b, v, vote)
            if got >= need:
                self.led[ri * NSLOT + j] = 1
                self.broadcast(self.new_msg(vi, kind, -1, v, block, -1, -1, got))
                return 1
            return 0
        return 0

    cdef int hs_advance(self, int vi) except -1:
        cdef int b, v, rr, dec, hi, lead, kind, me = vi % self.n, inst, s
        cdef int64_t idx, block
        while True:
            inst = self.v_inst[vi]
            b = self.box(vi, inst)
            v = self.v_round[vi]
            dec = -1
            for rr in range(self.slot_maxr[b], -1, -1):
                if self.has_leader(b, rr, HS_DECIDE):
                    dec = rr
                    break
            if dec >= 0:
                idx = (<int64_t>b * R + dec) * NSLOT + 3
                self.commit(vi, inst, self.lblock[idx], self.lcert[idx])
                self.enter(vi, inst + 1)
                self.hs_entered(vi)
                continue
            hi = -1
            for rr in range(self.slot_maxr[b], v, -1):
                idx = (<int64_t>b * R + rr) * NSLOT
                if self.lhas[idx] or self.lhas[idx + 1] or self.lhas[idx + 2] or self.lhas[idx + 3]:
                    hi = rr
                    break
            if hi >= 0:
                self.v_round[vi] = hi
                self.v_stage[vi] = 0
                self.timer(vi, hi)
                continue
            s = self.v_stage[vi]
            if s < 3:
                idx = (<int64_t>b * R + v) * NSLOT + s
                if self.lhas[idx]:
                    block = self.lblock[idx]
                    self.v_stage[vi] = s + 1
                    if s == 1:
                        self.v_lock_round[vi] = v
                        self.v_lock_block[vi] = block
                    kind = HS_PREPARE_VOTE if s == 0 else (HS_PRECOMMIT_VOTE if s == 1 else HS_COMMIT_VOTE)
                    self.send(self.new_msg(vi, kind, self.leader(vi, inst, v), v, block, -1, -1, 0))
                    continue
            if self.leader(vi, inst, v) == me and self.hs_lead(vi, b, v):
                continue
            lead = -1
            for rr in range(self.slot_maxr[b], v, -1):
                if self.count(b, rr, NEW_VIEW) >= self.Q and self.leader(vi, inst, rr) == me:
                    lead = rr
                    break
            if lead >= 0:
                self.v_round[vi] = lead
                self.v_stage[vi] = 0
                self.timer(vi, lead)
                continue
            return 0

    # ------------------------------------------------------------- loop
    cdef int handle(self, int vi, Msg* m) except -1:
        if self.v_crashed[vi]:
            return 0
        if self.proto == 0:
            if m.kind > ROUND_CHANGE:
                raise ProtocolError(f"IBFT validator got kind {m.kind}")
            if self.record(vi, m) and m.instance == self.v_inst[vi]:
                self.ibft_advance(vi)
        else:
            if m.kind < NEW_VIEW:
                raise ProtocolError(f"HotStuff validator got kind {m.kind}")
            if self.record(vi, m) and m.instance == self.v_inst[vi]:
                self.hs_advance(vi)
        return 0

    cdef bint done(self):
        cdef int c
        for c in range(self.chains):
            if self.ndone[c] < self.instances:
                return False
        return True

    cdef double min_last(self):
        cdef double m = self.last_done[0]
        cdef int c
        for c in range(1, self.chains):
            if self.last_done[c] < m:
                m = self.last_done[c]
        return m

    cdef int64_t loop(self) except -1:
        cdef int n = self.n, S = self.S, c, v, vi, sid, cur, lo, hi, nxt
        cdef int64_t count = 0
        cdef int32_t mid
        cdef Msg* m
        cdef Ev e
        for c in range(self.chains):
            for v in range(n):
                vi = c * n + v
                if self.v_crashed[vi]:
                    continue
                self.enter(vi, 0)
                if self.proto == 0:
                    self.ibft_entered(vi)
                    self.ibft_advance(vi)
                else:
                    self.hs_entered(vi)
                    self.hs_advance(vi)
        while not self.done():
            if self.heap_len == 0:
                raise LivelockError("event queue drained before all instances completed")
            e = self.pop()
            if e.time - self.min_last() > self.horizon:
                raise LivelockError(f"no instance completed within horizon {self.horizon} (t={e.time})")
            self.clock = e.time
            count += 1
            if e.kind == EV_SERVICE:
                sid = e.target
                mid = self.qhead[sid]
                self.qhead[sid] = self.pool[mid].next
                if self.qhead[sid] < 0:
                    self.qtail[sid] = -1
                self.served[sid] += 1
                self.busy[sid] = 0
                if self.qhead[sid] >= 0:
                    self.begin(sid)
                m = &self.pool[mid]
                if sid < n:
                    if self.trace is not None:
                        self.trace.append((e.time, m.kind, m.sender, m.dest, m.instance, m.rnd, m.chain))
                    self.handle(m.chain * n + sid, m)
                    self.free_msg(mid)
                else:
                    cur = sid - n
                    if cur == m.dest_switch:
                        self.deliver(mid, m.dest)
                    else:
                        lo = self.offsets[cur * S + m.dest_switch]
                        hi = self.offsets[cur * S + m.dest_switch + 1]
                        if hi - lo == 1:
                            nxt = self.hops[lo]
                        else:
                            self.rng[sid] += GOLDEN
                            nxt = self.hops[lo + <int>(mix64(self.rng[sid]) % <uint64_t>(hi - lo))]
                        self.deliver(mid, n + nxt)
            elif e.kind == EV_TIMER:
                if self.timer_gen[e.target] == e.token:
                    if self.proto == 0:
                        self.ibft_on_timer(e.target)
                    else:
                        self.hs_on_timer(e.target)
            else:
                raise SimulationError(f"unexpected event kind {e.kind}")
        return count


def run_kernel(setup, trace=False):
    """Run ``setup`` (an ``engine.RunSetup``) in the compiled loop."""
    from .engine import RunResult
    cdef Kernel k = Kernel(setup, trace)
    cdef int64_t count = k.loop()
    cdef int c, i
    times = [t for per in k.times for t in per[:setup.instances]]
    return RunResult(
        times=times,
        mean=sum(times) / len(times),
        instances=setup.instances,
        chains=setup.chains,
        end_time=k.clock,
        events=count,
        processed=[k.served[i] for i in range(setup.n)],
        divergent=k.divergent,
        subquorum=k.subquorum,
        committed=k.committed,
        crashed=list(setup.crashed),
        backend="kernel",
        trace=k.trace,
        h_T=setup.h_T,
    )
