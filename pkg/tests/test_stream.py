import random
import threading
import time

import numpy as np
import pytest

from diane.imaging import GrayImage, encode_pgm
from diane.stream import (
    BadFrame,
    NoSuchSession,
    PullTimeout,
    Relay,
    SessionClosed,
    StaleSequence,
)


def pgm(value: int = 0) -> bytes:
    return encode_pgm(GrayImage(np.full((2, 2), value, dtype=np.uint8)))


# --- sessions ---


def test_sessions_get_distinct_unguessable_ids():
    relay = Relay()
    a, b = relay.create_session(), relay.create_session()
    assert a.session_id != b.session_id
    assert len(a.session_id) == 32  # 128 bits hex-encoded
    int(a.session_id, 16)


def test_thousand_sessions_no_collision():
    relay = Relay()
    ids = {relay.create_session().session_id for _ in range(1000)}
    assert len(ids) == 1000


def test_fresh_session_is_empty_and_live():
    s = Relay().create_session()
    assert s.latest is None and s.seq_high == 0 and s.state == "live"


def test_unknown_session_rejected():
    relay = Relay()
    with pytest.raises(NoSuchSession):
        relay.publish_frame("feed" * 8, 1, pgm())
    with pytest.raises(NoSuchSession):
        relay.subscribe("feed" * 8)
    with pytest.raises(NoSuchSession):
        relay.close_session("feed" * 8)


# --- publish ---


def test_publish_advances_latest():
    relay = Relay()
    s = relay.create_session()
    assert relay.publish_frame(s.session_id, 1, pgm(1)) == 1
    assert relay.publish_frame(s.session_id, 2, pgm(2)) == 2
    assert s.seq_high == 2 and s.latest.seq == 2 and s.latest.image == pgm(2)


def test_stale_sequence_dropped():
    relay = Relay()
    s = relay.create_session()
    relay.publish_frame(s.session_id, 2, pgm(2))
    with pytest.raises(StaleSequence):
        relay.publish_frame(s.session_id, 1, pgm(1))
    with pytest.raises(StaleSequence):
        relay.publish_frame(s.session_id, 2, pgm(9))
    assert s.latest.seq == 2 and s.latest.image == pgm(2)


def test_bad_frames_rejected():
    relay = Relay()
    s = relay.create_session()
    with pytest.raises(BadFrame):
        relay.publish_frame(s.session_id, 1, b"not a pgm")
    for seq in (0, -1, "1", 1.0, True):
        with pytest.raises(BadFrame):
            relay.publish_frame(s.session_id, seq, pgm())
    assert s.seq_high == 0


def test_seq_high_monotone_under_random_publishes():
    relay = Relay()
    s = relay.create_session()
    rng = random.Random(77)
    for _ in range(200):
        seq = rng.randint(1, 50)
        before = s.seq_high
        try:
            relay.publish_frame(s.session_id, seq, pgm())
            assert seq > before and s.seq_high == seq
        except StaleSequence:
            assert seq <= before and s.seq_high == before
        assert s.latest.seq == s.seq_high


# --- subscribe / pull ---


def test_first_pull_after_first_publish():
    relay = Relay()
    s = relay.create_session()
    feed = relay.subscribe(s.session_id)
    relay.publish_frame(s.session_id, 1, pgm(7))
    frame = feed.pull(timeout=0)
    assert frame.seq == 1 and frame.image == pgm(7)


def test_late_joiner_gets_current_latest():
    relay = Relay()
    s = relay.create_session()
    for seq in range(1, 6):
        relay.publish_frame(s.session_id, seq, pgm(seq))
    frame = relay.subscribe(s.session_id).pull(timeout=0)
    assert frame.seq == 5 and frame.image == pgm(5)


def test_pull_without_newer_frame_times_out():
    relay = Relay()
    s = relay.create_session()
    feed = relay.subscribe(s.session_id)
    with pytest.raises(PullTimeout):
        feed.pull(timeout=0)
    relay.publish_frame(s.session_id, 3, pgm())
    assert feed.pull(timeout=0).seq == 3
    with pytest.raises(PullTimeout):
        feed.pull(timeout=0)  # same frame is never delivered twice


def test_relay_keeps_only_latest_frame():
    relay = Relay()
    s = relay.create_session()
    feed = relay.subscribe(s.session_id)
    for seq in range(1, 51):
        relay.publish_frame(s.session_id, seq, pgm(seq % 256))
    assert feed.pull(timeout=0).seq == 50
    with pytest.raises(PullTimeout):
        feed.pull(timeout=0)


def test_sessions_are_isolated():
    relay = Relay()
    a, b = relay.create_session(), relay.create_session()
    relay.publish_frame(a.session_id, 1, pgm(10))
    relay.publish_frame(b.session_id, 7, pgm(20))
    fa = relay.subscribe(a.session_id).pull(timeout=0)
    fb = relay.subscribe(b.session_id).pull(timeout=0)
    assert (fa.seq, fa.image) == (1, pgm(10))
    assert (fb.seq, fb.image) == (7, pgm(20))


# --- close ---


def test_closed_session_rejects_publishes():
    relay = Relay()
    s = relay.create_session()
    relay.close_session(s.session_id)
    with pytest.raises(SessionClosed):
        relay.publish_frame(s.session_id, 1, pgm())
    relay.close_session(s.session_id)  # idempotent


def test_feed_drains_latest_after_close():
    relay = Relay()
    s = relay.create_session()
    relay.publish_frame(s.session_id, 3, pgm(3))
    relay.close_session(s.session_id)
    feed = relay.subscribe(s.session_id)
    assert feed.pull(timeout=0).seq == 3
    assert feed.pull(timeout=0) is None
    assert feed.ended


def test_feed_on_closed_empty_session_ends_immediately():
    relay = Relay()
    s = relay.create_session()
    relay.close_session(s.session_id)
    feed = relay.subscribe(s.session_id)
    assert feed.pull(timeout=0) is None


def test_close_all_ends_every_session():
    relay = Relay()
    a, b = relay.create_session(), relay.create_session()
    relay.publish_frame(a.session_id, 1, pgm(1))
    relay.close_all()
    assert a.state == "closed" and b.state == "closed"
    feed = relay.subscribe(a.session_id)
    assert feed.pull(timeout=0).seq == 1
    assert feed.pull(timeout=0) is None


def test_close_unblocks_waiting_pull_quickly():
    relay = Relay()
    s = relay.create_session()
    feed = relay.subscribe(s.session_id)
    result = {}

    def reader():
        result["frame"] = feed.pull(timeout=10)
        result["at"] = time.monotonic()

    t = threading.Thread(target=reader)
    t.start()
    time.sleep(0.1)
    closed_at = time.monotonic()
    relay.close_session(s.session_id)
    t.join(timeout=5)
    assert not t.is_alive()
    assert result["frame"] is None
    assert result["at"] - closed_at < 1.0


def test_publish_unblocks_waiting_pull():
    relay = Relay()
    s = relay.create_session()
    feed = relay.subscribe(s.session_id)
    got = {}

    def reader():
        got["frame"] = feed.pull(timeout=10)

    t = threading.Thread(target=reader)
    t.start()
    time.sleep(0.05)
    relay.publish_frame(s.session_id, 1, pgm(1))
    t.join(timeout=5)
    assert got["frame"].seq == 1


# --- idle expiry ---


def test_idle_session_expires():
    clk = [0.0]
    relay = Relay(idle_timeout=600.0, clock=lambda: clk[0])
    s = relay.create_session()
    relay.publish_frame(s.session_id, 1, pgm(1))
    clk[0] = 500.0
    relay.publish_frame(s.session_id, 2, pgm(2))  # activity resets the clock
    clk[0] = 1099.0
    relay.publish_frame(s.session_id, 3, pgm(3))
    clk[0] = 1800.0
    with pytest.raises(SessionClosed):
        relay.publish_frame(s.session_id, 4, pgm(4))
    feed = relay.subscribe(s.session_id)
    assert feed.pull(timeout=0).seq == 3  # latest survives expiry
    assert feed.pull(timeout=0) is None


def test_frame_timestamps_use_relay_clock():
    clk = [41.5]
    relay = Relay(clock=lambda: clk[0])
    s = relay.create_session()
    relay.publish_frame(s.session_id, 1, pgm())
    assert s.latest.received_at == 41.5


# --- interleaving property ---


def test_subscribers_see_strictly_increasing_seqs():
    """Randomized publish/pull schedules; every feed must be monotone."""
    rng = random.Random(20260814)
    for _ in range(1000):
        relay = Relay()
        s = relay.create_session()
        feeds = [relay.subscribe(s.session_id) for _ in range(3)]
        seen = [[] for _ in feeds]
        next_seq = 1
        closed = False
        for _ in range(rng.randint(4, 16)):
            op = rng.random()
            if op < 0.45 and not closed:
                gap = rng.randint(1, 3)
                relay.publish_frame(s.session_id, next_seq + gap - 1, pgm())
                next_seq += gap
            elif op < 0.9:
                i = rng.randrange(len(feeds))
                try:
                    frame = feeds[i].pull(timeout=0)
                except PullTimeout:
                    continue
                if frame is not None:
                    seen[i].append(frame.seq)
            elif not closed:
                relay.close_session(s.session_id)
                closed = True
        for i, feed in enumerate(feeds):
            try:
                frame = feed.pull(timeout=0)
                if frame is not None:
                    seen[i].append(frame.seq)
            except PullTimeout:
                pass
        for deliveries in seen:
            assert all(a < b for a, b in zip(deliveries, deliveries[1:]))


def test_slow_subscriber_sees_increasing_subsequence_to_end():
    relay = Relay()
    s = relay.create_session()
    feed = relay.subscribe(s.session_id)

    def publisher():
        for seq in range(1, 101):
            relay.publish_frame(s.session_id, seq, pgm(seq % 256))
            time.sleep(0.0005)
        relay.close_session(s.session_id)

    t = threading.Thread(target=publisher)
    t.start()
    seen = []
    while True:
        frame = feed.pull(timeout=5)
        if frame is None:
            break
        seen.append(frame.seq)
        time.sleep(0.002)  # slower than the publisher
    t.join(timeout=5)
    assert all(a < b for a, b in zip(seen, seen[1:]))
    assert seen[-1] == 100
    assert len(seen) < 100  # latest-frame semantics actually skipped some
