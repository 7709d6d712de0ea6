"""Deterministic discrete-event world.

Everything else in the package runs on top of a :class:`World`: a simulated
integer-second clock, a FIFO-on-ties event heap, the storage elements, network
links and compute sites of a scenario, named random streams and the event log.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable, Optional

from .errors import FlowError

DAY = 86400
HOUR = 3600


class Region(str, enum.Enum):
    LNGS = "LNGS"
    EUROPE = "EUROPE"
    US = "US"
    NORDIC = "NORDIC"


class Kind(str, enum.Enum):
    BUFFER = "BUFFER"
    DISK = "DISK"
    TAPE = "TAPE"


class Pool(str, enum.Enum):
    OSG = "OSG"
    EGI = "EGI"
    LOCAL = "LOCAL"


class _Blocked:
    def __repr__(self) -> str:
        return "BLOCKED"


#: Returned by :func:`transfer_time` when a link never comes back up.
BLOCKED = _Blocked()


@dataclass
class SimClock:
    now: int = 0

    def advance(self, t: int) -> None:
        if t < self.now:
            raise FlowError("SCHEDULE_IN_PAST", f"clock at {self.now}, asked for {t}")
        self.now = t


@dataclass
class StorageElement:
    id: str
    region: Region
    kind: Kind
    capacity: Optional[int]  # None = unbounded (tape)
    used: int = 0
    available: bool = True

    @property
    def free(self) -> float:
        return math.inf if self.capacity is None else self.capacity - self.used

    def reserve(self, size: int) -> None:
        if size > self.free:
            raise FlowError("INSUFFICIENT_CAPACITY", f"{self.id}: {size} > {self.free}")
        self.used += size

    def release(self, size: int) -> None:
        self.used -= size
        assert self.used >= 0, f"{self.id} released more than it held"


@dataclass
class NetworkLink:
    src: str
    dst: str
    bandwidth: int  # bytes / second
    latency: int = 0
    # [start, end) windows; end None means the link never recovers
    outages: list[tuple[int, Optional[int]]] = field(default_factory=list)
    busy_until: int = 0

    def __post_init__(self) -> None:
        if self.bandwidth <= 0:
            raise FlowError("INVALID_LINK", f"{self.src}->{self.dst}: bandwidth must be > 0")
        self.outages = [(int(s), None if e is None else int(e)) for s, e in self.outages]
        prev_end: Optional[int] = -1
        for s, e in self.outages:
            if prev_end is None or s < prev_end or (e is not None and e <= s):
                raise FlowError("INVALID_LINK", f"{self.src}->{self.dst}: outages overlap or unsorted")
            prev_end = e


def merge_windows(windows: Iterable[tuple[int, Optional[int]]]) -> list[tuple[int, Optional[int]]]:
    """Union of [start, end) windows, sorted; ``None`` ends are open-ended."""
    out: list[tuple[int, Optional[int]]] = []
    for s, e in sorted(windows, key=lambda w: w[0]):
        if out:
            ps, pe = out[-1]
            if pe is None:
                break
            if s <= pe:
                out[-1] = (ps, None if e is None else max(pe, e))
                continue
        out.append((s, e))
    return out


def transfer_time(size: int, link: NetworkLink, start: int):
    """Seconds from ``start`` until ``size`` bytes have crossed ``link``.

    Latency elapses first, then payload flows at the link bandwidth. An outage
    pauses the payload and it resumes when the window closes. Fractional
    seconds round up. Returns :data:`BLOCKED` if an open-ended outage begins
    before the payload has finished.
    """
    if size < 0:
        raise ValueError("size must be non-negative")
    t = Fraction(start + link.latency)
    remaining = Fraction(size)
    bw = link.bandwidth
    for s, e in link.outages:
        if e is not None and e <= t:
            continue
        if remaining == 0:
            break
        if s > t:
            window = (s - t) * bw
            if remaining <= window:
                t += remaining / bw
                remaining = Fraction(0)
                break
            remaining -= window
        if e is None:
            return BLOCKED
        t = Fraction(max(t, e))
    t += remaining / bw
    return math.ceil(t) - start


@dataclass
class ComputeSite:
    id: str
    pool: Pool
    attached_rse: str
    slots: int
    job_failure_prob: float = 0.0
    throughput: int = 1  # bytes of raw input processed per second per slot

    def __post_init__(self) -> None:
        if self.slots < 1:
            raise FlowError("INVALID_SITE", f"{self.id}: slots must be >= 1")
        if not 0.0 <= self.job_failure_prob <= 1.0:
            raise FlowError("INVALID_SITE", f"{self.id}: failure probability outside [0, 1]")


@dataclass(frozen=True)
class EventLogEntry:
    time: int
    kind: str
    subject: str
    detail: dict = field(default_factory=dict, compare=True, hash=False)

    def to_json(self) -> str:
        return json.dumps(
            {"t": self.time, "kind": self.kind, "subject": self.subject, "detail": self.detail},
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "EventLogEntry":
        d = json.loads(line)
        return cls(d["t"], d["kind"], d["subject"], d["detail"])


class Event:
    """Handle returned by :meth:`World.schedule`; ``cancel()`` skips it."""

    __slots__ = ("at", "seq", "action", "cancelled")

    def __init__(self, at: int, seq: int, action: Callable[[], Any]):
        self.at = at
        self.seq = seq
        self.action = action
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True

    def __lt__(self, other: "Event") -> bool:
        return (self.at, self.seq) < (other.at, other.seq)


def _stream_seed(seed: int, stream: str) -> int:
    digest = hashlib.sha256(f"{seed}/{stream}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class World:
    def __init__(
        self,
        seed: int = 0,
        rses: Iterable[StorageElement] = (),
        links: Iterable[NetworkLink] = (),
        sites: Iterable[ComputeSite] = (),
        default_link: Optional[tuple[int, int]] = None,
        global_outages: Iterable[tuple[int, Optional[int]]] = (),
    ):
        self.seed = seed
        self.clock = SimClock()
        self.rses: dict[str, StorageElement] = {r.id: r for r in rses}
        self.sites: dict[str, ComputeSite] = {s.id: s for s in sites}
        self.global_outages = merge_windows(global_outages)
        self.default_link = default_link  # (bandwidth, latency)
        self.links: dict[tuple[str, str], NetworkLink] = {}
        for link in links:
            if self.global_outages:
                link.outages = merge_windows(list(link.outages) + self.global_outages)
            self.links[(link.src, link.dst)] = link
        self.log: list[EventLogEntry] = []
        self._heap: list[Event] = []
        self._seq = 0
        self._streams: dict[str, random.Random] = {}

    @property
    def now(self) -> int:
        return self.clock.now

    # -- scheduling ----------------------------------------------------------

    def schedule(self, at: int, action: Callable[[], Any]) -> Event:
        at = int(at)
        if at < self.now:
            raise FlowError("SCHEDULE_IN_PAST", f"t={at} < now={self.now}")
        ev = Event(at, self._seq, action)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def after(self, delay: int, action: Callable[[], Any]) -> Event:
        return self.schedule(self.now + delay, action)

    def pending(self) -> int:
        return sum(1 for ev in self._heap if not ev.cancelled)

    def run_until(self, t_end: int) -> list[EventLogEntry]:
        """Process every event stamped ``<= t_end``; return the entries emitted."""
        if t_end < self.now:
            raise FlowError("SCHEDULE_IN_PAST", f"t_end={t_end} < now={self.now}")
        mark = len(self.log)
        while self._heap and self._heap[0].at <= t_end:
            ev = heapq.heappop(self._heap)
            if ev.cancelled:
                continue
            self.clock.advance(ev.at)
            ev.action()
        self.clock.advance(t_end)
        return self.log[mark:]

    def run(self, horizon: Optional[int] = None) -> list[EventLogEntry]:
        """Run until the queue drains (or ``horizon`` is reached)."""
        mark = len(self.log)
        while self._heap:
            ev = self._heap[0]
            if horizon is not None and ev.at > horizon:
                break
            heapq.heappop(self._heap)
            if ev.cancelled:
                continue
            self.clock.advance(ev.at)
            ev.action()
        return self.log[mark:]

    def emit(self, kind: str, subject: str, **detail: Any) -> EventLogEntry:
        entry = EventLogEntry(self.now, kind, subject, detail)
        self.log.append(entry)
        return entry

    # -- randomness ----------------------------------------------------------

    def _stream(self, name: str) -> random.Random:
        rng = self._streams.get(name)
        if rng is None:
            rng = self._streams[name] = random.Random(_stream_seed(self.seed, name))
        return rng

    def draw(self, stream: str, n: int) -> int:
        """Uniform integer in ``[0, n)`` from the named stream."""
        if n < 1:
            raise ValueError("n must be >= 1")
        return self._stream(stream).randrange(n)

    def chance(self, stream: str, p: float) -> bool:
        """Bernoulli(p) from the named stream. Always consumes one draw."""
        return self._stream(stream).random() < p

    # -- network -------------------------------------------------------------

    def link(self, src: str, dst: str) -> Optional[NetworkLink]:
        link = self.links.get((src, dst))
        if link is None and self.default_link is not None:
            bw, lat = self.default_link
            link = NetworkLink(src, dst, bw, lat, list(self.global_outages))
            self.links[(src, dst)] = link
        return link

    def estimate(self, src: str, dst: str, size: int):
        """Completion time a transfer queued now would get, or BLOCKED."""
        link = self.link(src, dst)
        if link is None:
            return BLOCKED
        start = max(self.now, link.busy_until)
        d = transfer_time(size, link, start)
        return d if d is BLOCKED else start + d

    def transmit(self, src: str, dst: str, size: int, on_done: Callable[[], Any]):
        """Queue ``size`` bytes on the src->dst link (serial per link).

        Returns the completion time, or BLOCKED without scheduling anything.
        """
        link = self.link(src, dst)
        if link is None:
            return BLOCKED
        start = max(self.now, link.busy_until)
        d = transfer_time(size, link, start)
        if d is BLOCKED:
            return BLOCKED
        link.busy_until = start + d
        self.schedule(start + d, on_done)
        return start + d

    def disk_rses(self, region: Optional[Region] = None) -> list[StorageElement]:
        return sorted(
            (r for r in self.rses.values() if r.kind is Kind.DISK and (region is None or r.region is region)),
            key=lambda r: r.id,
        )

    @property
    def buffer(self) -> StorageElement:
        for r in self.rses.values():
            if r.kind is Kind.BUFFER and r.region is Region.LNGS:
                return r
        raise FlowError("NO_BUFFER", "world has no LNGS buffer")

    @property
    def tape(self) -> StorageElement:
        for r in self.rses.values():
            if r.kind is Kind.TAPE:
                return r
        raise FlowError("NO_TAPE", "world has no tape endpoint")

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for entry in self.log:
                fh.write(entry.to_json() + "\n")
