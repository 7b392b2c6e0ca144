"""In-process multi-rank message-passing world.

Runs one worker thread per CPU rank against per-pair FIFO message queues, so
rank programs written in blocking send/recv style execute without any real
MPI.  Two scheduler modes exist: ``deterministic`` (default) steps ranks
round-robin with exactly one rank running at a time, which makes every run
bit-reproducible; ``concurrent`` lets threads interleave freely while still
guaranteeing per-pair FIFO delivery.  A watchdog detects deadlock (every
unfinished rank blocked) instead of hanging.

The "device" of an owning rank is a second address space inside the same
process (`DeviceBuffer`), so host-to-device movement is observable as byte
and transfer counts without GPU hardware.  Traffic is accounted per category:
plain rank-to-rank messages, device-direct transfers (the GPU-aware path),
and host-staged transfers.
"""

import threading
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import PartitionMap

CAT_RANK = "rank_to_rank"
CAT_DEVICE_DIRECT = "host_to_device_direct"
CAT_DEVICE_STAGED = "host_staged"
CATEGORIES = (CAT_RANK, CAT_DEVICE_DIRECT, CAT_DEVICE_STAGED)

ROLE_WORLD = "world"
ROLE_ACTIVE = "active"
ROLE_INACTIVE = "inactive"


class WorldError(RuntimeError):
    pass


class DeadlockError(WorldError):
    pass


class RankFailedError(WorldError):
    def __init__(self, rank: int, cause: BaseException):
        super().__init__(f"rank {rank} failed: {cause!r}")
        self.rank = rank
        self.cause = cause


class _Abort(BaseException):
    # internal: unwinds worker threads once the world has failed
    pass


def _copy_payload(obj):
    if isinstance(obj, np.ndarray):
        return np.array(obj, copy=True)
    if isinstance(obj, (tuple, list)):
        return type(obj)(_copy_payload(v) for v in obj)
    if isinstance(obj, dict):
        return {k: _copy_payload(v) for k, v in obj.items()}
    if obj is None or isinstance(obj, (int, float, bool, str, bytes, np.generic)):
        return obj
    raise TypeError(f"unsupported payload type: {type(obj).__name__}")


def _payload_nbytes(obj) -> int:
    if isinstance(obj, np.ndarray):
        return obj.nbytes
    if isinstance(obj, (tuple, list)):
        return sum(_payload_nbytes(v) for v in obj)
    if isinstance(obj, dict):
        return sum(_payload_nbytes(v) for v in obj.values())
    if obj is None:
        return 0
    if isinstance(obj, np.generic):
        return obj.nbytes
    if isinstance(obj, (int, float, bool)):
        return 8
    if isinstance(obj, str):
        return len(obj.encode())
    if isinstance(obj, bytes):
        return len(obj)
    raise TypeError(f"unsupported payload type: {type(obj).__name__}")


@dataclass
class TrafficCounter:
    bytes_sent: int = 0
    bytes_received: int = 0
    messages: int = 0


class DeviceBuffer:
    """Coefficient array in the owning rank's simulated device address space."""

    def __init__(self, world: "World", owner_rank: int, size: int):
        self._world = world
        self.owner_rank = owner_rank
        self._data = np.zeros(size, dtype=np.float64)
        self.transfer_count = 0
        self.transfer_bytes = 0

    def __len__(self) -> int:
        return len(self._data)

    def _check_owner(self):
        current = self._world._current_rank()
        if current != self.owner_rank:
            raise WorldError(
                f"device buffer of rank {self.owner_rank} touched by rank {current}")

    def fill(self, offset: int, values: np.ndarray) -> None:
        """Write one transferred segment; every fill is one accounted transfer."""
        self._check_owner()
        values = np.asarray(values, dtype=np.float64)
        if offset < 0 or offset + len(values) > len(self._data):
            raise WorldError("device buffer fill out of bounds")
        self._data[offset:offset + len(values)] = values
        self.transfer_count += 1
        self.transfer_bytes += values.nbytes

    def values(self) -> np.ndarray:
        self._check_owner()
        return self._data


class World:
    """Shared state of one simulated run: queues, scheduler, counters."""

    def __init__(self, n_ranks: int, deterministic: bool = True, timeout: float = 120.0):
        if n_ranks < 1:
            raise ValueError("n_ranks must be >= 1")
        self.n_ranks = n_ranks
        self.deterministic = deterministic
        self.timeout = timeout
        self.traffic = {cat: TrafficCounter() for cat in CATEGORIES}
        self.device_allocations = [0] * n_ranks
        self._cv = threading.Condition()
        self._queues: dict[tuple, deque] = {}
        self._barriers: dict[tuple, list] = {}
        self._turn = 0
        self._waiting: dict[int, tuple] = {}   # rank -> (predicate, description)
        self._done: set[int] = set()
        self._failure: tuple | None = None     # (rank or None, exception)
        self._last_progress = time.monotonic()
        self._local = threading.local()

    # -- scheduling ---------------------------------------------------------

    def _current_rank(self):
        return getattr(self._local, "rank", None)

    def _progress(self):
        self._last_progress = time.monotonic()

    def _raise_if_failed(self):
        if self._failure is not None:
            raise _Abort()

    def _fail(self, rank, exc):
        if self._failure is None:
            self._failure = (rank, exc)
        self._progress()
        self._cv.notify_all()

    def _advance(self, current: int) -> None:
        # hand the turn to the next runnable rank after `current` (round-robin)
        if self._failure is not None:
            return
        candidates = [r for r in range(self.n_ranks) if r not in self._done]
        if not candidates:
            return
        for step in range(1, self.n_ranks + 1):
            r = (current + step) % self.n_ranks
            if r in self._done:
                continue
            waiting = self._waiting.get(r)
            if waiting is None:
                self._turn = r
                self._progress()
                return
            if waiting[0]():
                del self._waiting[r]
                self._turn = r
                self._progress()
                return
        blocked = ", ".join(f"rank {r}: {d}" for r, (_, d) in sorted(self._waiting.items()))
        self._fail(None, DeadlockError(f"all unfinished ranks are blocked ({blocked})"))

    def _check_deadlock_concurrent(self):
        if not self._waiting or len(self._waiting) + len(self._done) < self.n_ranks:
            return
        if any(pred() for pred, _ in self._waiting.values()):
            return
        blocked = ", ".join(f"rank {r}: {d}" for r, (_, d) in sorted(self._waiting.items()))
        self._fail(None, DeadlockError(f"all unfinished ranks are blocked ({blocked})"))

    def _wait_timed(self):
        self._cv.wait(timeout=1.0)
        if time.monotonic() - self._last_progress > self.timeout:
            self._fail(None, WorldError(f"world made no progress for {self.timeout:.0f}s"))

    def _block(self, rank: int, predicate, desc: str) -> None:
        # callers hold self._cv; returns once predicate() holds and (in
        # deterministic mode) the turn is back with `rank`
        if self.deterministic:
            if predicate():
                return
            self._waiting[rank] = (predicate, desc)
            self._advance(rank)
            self._cv.notify_all()
            while True:
                self._raise_if_failed()
                if self._turn == rank and rank not in self._waiting:
                    return
                self._wait_timed()
        else:
            while True:
                self._raise_if_failed()
                if predicate():
                    self._waiting.pop(rank, None)
                    return
                self._waiting[rank] = (predicate, desc)
                self._check_deadlock_concurrent()
                self._raise_if_failed()
                self._wait_timed()

    def _await_first_turn(self, rank: int) -> None:
        with self._cv:
            if not self.deterministic:
                return
            while True:
                self._raise_if_failed()
                if self._turn == rank and rank not in self._waiting:
                    return
                self._wait_timed()

    def _retire(self, rank: int) -> None:
        with self._cv:
            self._done.add(rank)
            self._waiting.pop(rank, None)
            self._progress()
            if self.deterministic:
                self._advance(rank)
            else:
                self._check_deadlock_concurrent()
            self._cv.notify_all()

    # -- messaging ----------------------------------------------------------

    def _send(self, src: int, dst: int, payload, category: str, comm_key) -> None:
        if not 0 <= dst < self.n_ranks:
            raise ValueError(f"destination rank {dst} out of range [0, {self.n_ranks})")
        msg = _copy_payload(payload)
        nbytes = _payload_nbytes(msg)
        with self._cv:
            self._raise_if_failed()
            q = self._queues.setdefault((src, dst, comm_key), deque())
            q.append((msg, category, nbytes))
            counter = self.traffic[category]
            counter.bytes_sent += nbytes
            counter.messages += 1
            self._progress()
            self._cv.notify_all()

    def _recv(self, dst: int, src: int, comm_key):
        if not 0 <= src < self.n_ranks:
            raise ValueError(f"source rank {src} out of range [0, {self.n_ranks})")
        with self._cv:
            self._raise_if_failed()
            q = self._queues.setdefault((src, dst, comm_key), deque())
            self._block(dst, lambda: len(q) > 0, f"recv from rank {src}")
            msg, category, nbytes = q.popleft()
            self.traffic[category].bytes_received += nbytes
            self._progress()
            return msg

    def _barrier(self, rank: int, key, n_members: int) -> None:
        with self._cv:
            self._raise_if_failed()
            state = self._barriers.setdefault(key, [0, 0])  # [generation, arrived]
            gen = state[0]
            state[1] += 1
            if state[1] == n_members:
                state[0] += 1
                state[1] = 0
                self._progress()
                self._cv.notify_all()
            else:
                self._block(rank, lambda: state[0] > gen, f"barrier {key}")

    # -- execution ----------------------------------------------------------

    def run(self, program) -> list:
        """Execute ``program(ctx)`` once per rank; returns one result per rank."""
        results: list = [None] * self.n_ranks
        threads = []

        def worker(rank):
            self._local.rank = rank
            ctx = RankContext(self, rank)
            try:
                self._await_first_turn(rank)
                results[rank] = program(ctx)
            except _Abort:
                return
            except BaseException as exc:
                with self._cv:
                    self._fail(rank, exc)
                return
            self._retire(rank)

        for r in range(self.n_ranks):
            t = threading.Thread(target=worker, args=(r,), daemon=True,
                                 name=f"world-rank-{r}")
            threads.append(t)
            t.start()
        deadline = time.monotonic() + self.timeout + 10.0
        for t in threads:
            t.join(timeout=max(0.1, deadline - time.monotonic()))
        if any(t.is_alive() for t in threads):
            with self._cv:
                self._fail(None, WorldError("worker threads did not finish"))
            for t in threads:
                t.join(timeout=1.0)
        if self._failure is not None:
            rank, exc = self._failure
            if rank is None:
                raise exc
            raise RankFailedError(rank, exc) from exc
        return results

    def alloc_device(self, owner_rank: int, size: int) -> DeviceBuffer:
        with self._cv:
            self.device_allocations[owner_rank] += 1
        return DeviceBuffer(self, owner_rank, size)


class RankContext:
    """Per-rank handle inside a running world: identity plus transport ops."""

    def __init__(self, world: World, rank: int):
        self.world = world
        self.rank = rank
        self.n_ranks = world.n_ranks
        self._world_group = None

    def send(self, dest: int, payload, category: str = CAT_RANK) -> None:
        self.world._send(self.rank, dest, payload, category, ROLE_WORLD)

    def recv(self, src: int):
        return self.world._recv(self.rank, src, ROLE_WORLD)

    def barrier(self) -> None:
        self.world._barrier(self.rank, (ROLE_WORLD, "barrier"), self.n_ranks)

    def alloc_device(self, size: int) -> DeviceBuffer:
        return self.world.alloc_device(self.rank, size)

    @property
    def comm(self) -> "CommGroup":
        if self._world_group is None:
            self._world_group = CommGroup(self, tuple(range(self.n_ranks)), ROLE_WORLD)
        return self._world_group

    def gather(self, value, root: int = 0):
        return self.comm.gather(value, root)

    def bcast(self, value, root: int = 0):
        return self.comm.bcast(value, root)

    def allgather(self, value) -> list:
        return self.comm.allgather(value)

    def allreduce_sum(self, value):
        return self.comm.allreduce_sum(value)


def active_ranks(pm: PartitionMap) -> tuple[int, ...]:
    """World ranks owning a GPU part: every alpha-th rank."""
    return tuple(range(0, pm.n_cpu, pm.alpha))


def inactive_ranks(pm: PartitionMap) -> tuple[int, ...]:
    return tuple(r for r in range(pm.n_cpu) if r % pm.alpha != 0)


class CommGroup:
    """Subset communicator over sorted world ranks with rank translation.

    Messages inside a group travel on queues keyed by the group, so traffic
    on different communicators never interleaves.  Collectives are ordered
    ascending by group rank, which keeps reductions bit-reproducible.
    """

    def __init__(self, ctx: RankContext, members: tuple[int, ...], tag: str):
        if list(members) != sorted(set(members)):
            raise ValueError("group members must be sorted and unique")
        self.ctx = ctx
        self.members = tuple(int(m) for m in members)
        self.tag = tag
        self._index = {m: i for i, m in enumerate(self.members)}
        if ctx.rank not in self._index:
            raise ValueError(f"rank {ctx.rank} is not a member of group {tag}")
        self.group_rank = self._index[ctx.rank]
        self._key = (tag, self.members)

    @property
    def size(self) -> int:
        return len(self.members)

    def world_rank(self, group_rank: int) -> int:
        return self.members[group_rank]

    def group_rank_of(self, world_rank: int) -> int:
        return self._index[world_rank]

    def send(self, dest: int, payload, category: str = CAT_RANK) -> None:
        self.ctx.world._send(self.ctx.rank, self.members[dest], payload, category, self._key)

    def recv(self, src: int):
        return self.ctx.world._recv(self.ctx.rank, self.members[src], self._key)

    def barrier(self) -> None:
        self.ctx.world._barrier(self.ctx.rank, (self._key, "barrier"), self.size)

    def gather(self, value, root: int = 0):
        if self.group_rank == root:
            out = []
            for gr in range(self.size):
                out.append(_copy_payload(value) if gr == root else self.recv(gr))
            return out
        self.send(root, value)
        return None

    def bcast(self, value, root: int = 0):
        if self.group_rank == root:
            for gr in range(self.size):
                if gr != root:
                    self.send(gr, value)
            return value
        return self.recv(root)

    def allgather(self, value) -> list:
        return self.bcast(self.gather(value, 0), 0)

    def allreduce_sum(self, value):
        """Sum over the group, accumulated in ascending group-rank order."""
        parts = self.gather(value, 0)
        if parts is not None:
            total = parts[0]
            for p in parts[1:]:
                total = total + p
            return self.bcast(total, 0)
        return self.bcast(None, 0)


def split_active(ctx: RankContext, pm: PartitionMap) -> CommGroup:
    """Split the world into active owners and inactive ranks; returns the caller's group.

    World rank alpha*k owns GPU part k, so the active group collects every
    alpha-th rank and its group rank k equals the GPU rank.  Membership is a
    pure function of the partition map, hence identical on every rank.
    """
    if pm.n_cpu != ctx.n_ranks:
        raise ValueError(f"partition map has {pm.n_cpu} ranks, world has {ctx.n_ranks}")
    if ctx.rank % pm.alpha == 0:
        return CommGroup(ctx, active_ranks(pm), ROLE_ACTIVE)
    return CommGroup(ctx, inactive_ranks(pm), ROLE_INACTIVE)


def run_world(n_ranks: int, program, deterministic: bool = True,
              timeout: float = 120.0) -> list:
    """Run ``program(ctx)`` on a fresh world; one result per rank."""
    return World(n_ranks, deterministic=deterministic, timeout=timeout).run(program)
