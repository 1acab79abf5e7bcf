"""Latest-frame streaming relay: one publisher per session, many viewers."""

import secrets
import threading
import time
from dataclasses import dataclass
from typing import Dict, Optional

from .imaging import PgmError, decode_pgm

IDLE_TIMEOUT = 600.0  # seconds without a publish before a session closes


class StreamError(Exception):
    pass


class NoSuchSession(StreamError):
    pass


class SessionClosed(StreamError):
    pass


class StaleSequence(StreamError):
    pass


class BadFrame(StreamError):
    pass


class PullTimeout(StreamError):
    pass


@dataclass(frozen=True)
class Frame:
    seq: int
    image: bytes
    received_at: float


class StreamSession:
    def __init__(self, session_id: str, now: float, idle_timeout: float):
        self.session_id = session_id
        self.created_at = now
        self.latest: Optional[Frame] = None
        self.seq_high = 0
        self.live = True
        self.expires_at = now + idle_timeout
        self.cond = threading.Condition()

    @property
    def state(self) -> str:
        return "live" if self.live else "closed"


class Feed:
    """Pull-based view of one session.

    Each pull delivers the newest frame not yet seen by this feed, so a
    slow reader skips intermediates but never sees a sequence twice or
    out of order. A pull on a closed session with nothing newer returns
    None and marks the feed ended.
    """

    def __init__(self, session: StreamSession, relay: "Relay"):
        self._session = session
        self._relay = relay
        self.last_seq = 0
        self.ended = False

    def pull(self, timeout: Optional[float] = None) -> Optional[Frame]:
        s = self._session
        deadline = None if timeout is None else time.monotonic() + timeout
        with s.cond:
            while True:
                self._relay._reap(s)
                if s.latest is not None and s.latest.seq > self.last_seq:
                    self.last_seq = s.latest.seq
                    return s.latest
                if not s.live:
                    self.ended = True
                    return None
                if deadline is not None:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        raise PullTimeout(
                            f"no frame after seq {self.last_seq}")
                else:
                    remaining = None
                # never sleep past the idle deadline, so an expiry that
                # nobody publishes into is still observed
                to_expiry = max(0.0, s.expires_at - self._relay._clock())
                s.cond.wait(to_expiry if remaining is None
                            else min(remaining, to_expiry))


class Relay:
    """Session table plus the publish/subscribe operations."""

    def __init__(self, idle_timeout: float = IDLE_TIMEOUT,
                 clock=time.monotonic):
        self._sessions: Dict[str, StreamSession] = {}
        self._lock = threading.Lock()
        self._idle_timeout = idle_timeout
        self._clock = clock

    def _get(self, session_id: str) -> StreamSession:
        with self._lock:
            try:
                return self._sessions[session_id]
            except KeyError:
                raise NoSuchSession(
                    f"no stream session {session_id!r}") from None

    def _reap(self, s: StreamSession) -> None:
        # caller holds s.cond
        if s.live and self._clock() >= s.expires_at:
            s.live = False
            s.cond.notify_all()

    def create_session(self) -> StreamSession:
        # 128-bit capability token; knowing the id is the only access control
        s = StreamSession(secrets.token_hex(16), self._clock(),
                          self._idle_timeout)
        with self._lock:
            self._sessions[s.session_id] = s
        return s

    def publish_frame(self, session_id: str, seq, image: bytes) -> int:
        if not isinstance(seq, int) or isinstance(seq, bool) or seq < 1:
            raise BadFrame(f"seq must be a positive integer, got {seq!r}")
        try:
            decode_pgm(image)
        except PgmError as e:
            raise BadFrame(f"frame payload is not a PGM: {e}") from None
        s = self._get(session_id)
        with s.cond:
            self._reap(s)
            if not s.live:
                raise SessionClosed(f"session {session_id} is closed")
            if seq <= s.seq_high:
                raise StaleSequence(f"seq {seq} <= seq_high {s.seq_high}")
            now = self._clock()
            s.latest = Frame(seq, image, now)
            s.seq_high = seq
            s.expires_at = now + self._idle_timeout
            s.cond.notify_all()
        return seq

    def subscribe(self, session_id: str) -> Feed:
        return Feed(self._get(session_id), self)

    def close_session(self, session_id: str) -> None:
        s = self._get(session_id)
        with s.cond:
            if s.live:
                s.live = False
                s.cond.notify_all()

    def close_all(self) -> None:
        """End every session; used at shutdown so no feed stays blocked."""
        with self._lock:
            sessions = list(self._sessions.values())
        for s in sessions:
            with s.cond:
                if s.live:
                    s.live = False
                    s.cond.notify_all()
