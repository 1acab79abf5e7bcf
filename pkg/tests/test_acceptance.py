"""One test per acceptance criterion, each at its stated tolerance.

Every test ends by printing a single `criterion N: PASS/FAIL` line (visible
with -s or in captured output) and asserting the same condition.
"""

import json
import random
import threading
import time

import numpy as np
import requests

from diane import records, synthetic
from diane.client import Client, ClientConfig
from diane.detect import detect_faces, load_cascade
from diane.imaging import (
    GrayImage,
    Rect,
    decode_pgm,
    encode_pgm,
    integral_image,
    rect_sum,
)
from diane.recognize import (
    DEFAULT_THETA,
    identify,
    load_model,
    preprocess,
    save_model,
    train,
)
from diane.soap import Fault, IdentifyResponse, parse_response
from diane.stream import PullTimeout, Relay


def _report(n: int, ok: bool, detail: str) -> None:
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {n}: {detail}"


def _random_gallery(rng, m, side):
    return [(GrayImage(rng.randint(0, 256, (side, side), dtype=np.uint8)),
             f"s{i}") for i in range(m)]


def test_criterion_1_pca_trick_matches_dense_oracle():
    rng = np.random.RandomState(101)
    gallery = _random_gallery(rng, 5, 8)
    t0 = time.monotonic()
    m = train(gallery, raster=(8, 8))
    vectors = np.stack([preprocess(img, 8, 8) for img, _ in gallery])
    centered = vectors - vectors.mean(axis=0)
    evals, evecs = np.linalg.eigh(centered.T @ centered)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    elapsed = time.monotonic() - t0

    vals_ok = bool(np.all(np.abs(m.eigenvalues - evals[: m.k])
                          <= 1e-8 * np.abs(evals[: m.k])))
    vecs_ok = all(
        np.abs(m.basis[i] - evecs[:, i]).max() <= 1e-8
        or np.abs(m.basis[i] + evecs[:, i]).max() <= 1e-8
        for i in range(m.k))
    _report(1, vals_ok and vecs_ok and elapsed < 1.0,
            f"eigenvalues rel<=1e-8 {vals_ok}, eigenvectors {vecs_ok}, "
            f"{elapsed:.3f}s")


def test_criterion_2_fixture_basis_orthonormal(fixtures_dir):
    store = records.load_store(fixtures_dir / "records.json")
    gallery = [(decode_pgm(store.resolve(ref).read_bytes()), pid)
               for pid in sorted(store.enrollment)
               for ref in store.enrollment[pid]]
    assert len(gallery) == 30
    m = train(gallery, k_max=16, raster=(64, 64))
    dev = float(np.abs(m.basis @ m.basis.T - np.eye(m.k)).max())
    _report(2, dev <= 1e-9, f"max |u_i.u_j - delta| = {dev:.2e} over k={m.k}")


def test_criterion_3_recognition_benchmark(fixtures_dir):
    t0 = time.monotonic()
    gallery, impostors = synthetic.benchmark_set()
    correct = 0
    for i in range(len(gallery)):
        m = train(gallery[:i] + gallery[i + 1 :])
        res = identify(m, gallery[i][0], theta=DEFAULT_THETA)
        correct += int(res.known and res.label == gallery[i][1])
    m = train(gallery)
    rejected = sum(int(not identify(m, img, theta=DEFAULT_THETA).known)
                   for img, _ in impostors)
    elapsed = time.monotonic() - t0
    loo = correct / len(gallery)
    rej = rejected / len(impostors)

    recorded = json.loads((fixtures_dir / "benchmark.json").read_text())
    recorded_ok = (recorded["loo_correct"] == correct
                   and recorded["rejection_correct"] == rejected
                   and recorded["theta"] == DEFAULT_THETA)
    _report(3, loo >= 0.9 and rej >= 0.8 and elapsed < 30.0 and recorded_ok,
            f"LOO {correct}/{len(gallery)}, rejected {rejected}/"
            f"{len(impostors)} at theta={DEFAULT_THETA}, {elapsed:.1f}s, "
            f"recorded numbers match {recorded_ok}")


def test_criterion_4_integral_image_oracle():
    rng = np.random.RandomState(104)
    exact = True
    for _ in range(100):
        img = GrayImage(rng.randint(0, 256, (8, 8), dtype=np.uint8))
        ii = integral_image(img)
        for _ in range(50):
            w = rng.randint(1, 9)
            h = rng.randint(1, 9)
            x = rng.randint(0, 9 - w)
            y = rng.randint(0, 9 - h)
            brute = int(img.pixels[y : y + h, x : x + w].sum())
            exact = exact and rect_sum(ii, Rect(x, y, w, h)) == brute
    _report(4, exact, "100 images x 50 rects, rect_sum == double loop")


def test_criterion_5_detection_localization(fixtures_dir):
    cascade = load_cascade(
        (fixtures_dir / "synthetic-face.cascade").read_text())
    face = decode_pgm(
        (fixtures_dir / "images" / "P001_enroll0.pgm").read_bytes())
    frame = synthetic.make_frame(128, 128, face, Rect(32, 32, 48, 48))
    dets = detect_faces(cascade, frame)
    one = len(dets) == 1
    if one:
        cx, cy = dets[0].rect.center()
        err = max(abs(cx - 56), abs(cy - 56))
    else:
        err = float("inf")
    black = detect_faces(cascade,
                         GrayImage(np.zeros((128, 128), dtype=np.uint8)))
    _report(5, one and err <= 2 and black == [],
            f"{len(dets)} detection(s), center error {err}px, "
            f"black frame {len(black)}")


def test_criterion_6_soap_conformance(live_server):
    from test_soap import CANONICAL_FAULT, CANONICAL_IDENTIFY, \
        random_response
    from diane.soap import (
        SoapRequest,
        parse_envelope,
        serialize_request,
        serialize_response,
    )

    req = parse_envelope(CANONICAL_IDENTIFY)
    fixtures_ok = (
        serialize_request(SoapRequest("IdentifyPatient", req.params))
        == CANONICAL_IDENTIFY
        and serialize_response(
            Fault("soap:Client", "diane:UnknownFace best_distance=1.234567"))
        == CANONICAL_FAULT)

    rng = random.Random(106)
    round_trips = all(
        parse_response(serialize_response(r)) == r
        for r in (random_response(rng) for _ in range(50)))

    env = ('<?xml version="1.0"?><soap:Envelope xmlns:soap='
           '"http://schemas.xmlsoap.org/soap/envelope/"><soap:Body>{}'
           "</soap:Body></soap:Envelope>")
    cases = [
        ("<<<", "diane:XmlMalformed"),
        (env.format('<Nope xmlns="urn:diane"/>'), "diane:UnknownAction"),
        (env.format('<GetPatient xmlns="urn:diane"/>'),
         "diane:MissingParameter"),
        (env.format('<IdentifyPatient xmlns="urn:diane">'
                    '<Image encoding="pgm+base64">aGVsbG8=</Image>'
                    "</IdentifyPatient>"), "diane:BadImagePayload"),
    ]
    faults_ok = True
    for body, code in cases:
        r = requests.post(live_server.url + "/soap", data=body.encode(),
                          headers={"Content-Type": "text/xml"}, timeout=10)
        fault = parse_response(r.content)
        faults_ok = faults_ok and r.status_code == 500 \
            and isinstance(fault, Fault) and fault.code == code
    _report(6, fixtures_ok and round_trips and faults_ok,
            f"fixtures byte-exact {fixtures_ok}, 50 round-trips "
            f"{round_trips}, fault classes over http {faults_ok}")


def test_criterion_7_end_to_end_pipeline(live_server, store_dir):
    t0 = time.monotonic()
    client = Client(ClientConfig(live_server.url))
    store = records.load_store(store_dir / "records.json")

    new_face = synthetic.make_face(
        48, synthetic.subject_texture(np.random.RandomState(107)))
    new_frame = synthetic.make_frame(128, 128, new_face, Rect(32, 32, 48, 48))
    enrolled = client.enroll("P002", new_frame)
    trained = client.train()
    ok = enrolled.count == 4 and trained.image_count == 31

    probes = [(pid, store.enrollment[pid][0]) for pid in sorted(store.patients)]
    for pid, ref in probes:
        face = decode_pgm(store.resolve(ref).read_bytes())
        frame = synthetic.make_frame(128, 128, face, Rect(32, 32, 48, 48))
        resp = client.identify(frame)
        rec = store.patients[pid]
        ok = (ok and isinstance(resp, IdentifyResponse)
              and resp.patient_id == pid
              and [i for i, _ in resp.pages] == [1, 2, 3, 4]
              and resp.pages[0][1] == (rec.name, rec.gender, rec.birth_date))
    resp = client.identify(new_frame)
    ok = ok and isinstance(resp, IdentifyResponse) \
        and resp.patient_id == "P002"
    elapsed = time.monotonic() - t0
    _report(7, ok and elapsed < 60.0,
            f"enroll+train+identify {len(probes)} subjects plus new "
            f"enrollment, pages in order, {elapsed:.1f}s")


def test_criterion_8_streaming_semantics():
    pgm = lambda v: encode_pgm(GrayImage(np.full((2, 2), v, dtype=np.uint8)))

    rng = random.Random(108)
    monotone = True
    for _ in range(1000):
        relay = Relay()
        s = relay.create_session()
        feeds = [relay.subscribe(s.session_id) for _ in range(2)]
        seen = [[] for _ in feeds]
        seq = 0
        closed = False
        for _ in range(rng.randint(3, 14)):
            roll = rng.random()
            if roll < 0.5 and not closed:
                seq += rng.randint(1, 3)
                relay.publish_frame(s.session_id, seq, pgm(seq % 256))
            elif roll < 0.95:
                i = rng.randrange(2)
                try:
                    frame = feeds[i].pull(timeout=0)
                except PullTimeout:
                    continue
                if frame is not None:
                    seen[i].append(frame.seq)
            elif not closed:
                relay.close_session(s.session_id)
                closed = True
        for deliveries in seen:
            monotone = monotone and all(
                a < b for a, b in zip(deliveries, deliveries[1:]))

    relay = Relay()
    s = relay.create_session()
    lazy = relay.subscribe(s.session_id)
    for i in range(1, 51):
        relay.publish_frame(s.session_id, i, pgm(i % 256))
    bounded = lazy.pull(timeout=0).seq == 50 and s.latest.seq == 50
    try:
        lazy.pull(timeout=0)
        bounded = False  # a second frame was buffered somewhere
    except PullTimeout:
        pass

    late = relay.subscribe(s.session_id).pull(timeout=0).seq == 50

    relay2 = Relay()
    s2 = relay2.create_session()
    for i in range(1, 6):
        relay2.publish_frame(s2.session_id, i, pgm(i))
    join_after_5 = relay2.subscribe(s2.session_id).pull(timeout=0).seq == 5

    waiter = relay2.subscribe(s2.session_id)
    waiter.pull(timeout=0)
    result = {}

    def blocked():
        result["frame"] = waiter.pull(timeout=10)
        result["at"] = time.monotonic()

    t = threading.Thread(target=blocked)
    t.start()
    time.sleep(0.1)
    closed_at = time.monotonic()
    relay2.close_session(s2.session_id)
    t.join(timeout=5)
    unblock = result["at"] - closed_at if "at" in result else float("inf")

    _report(8, monotone and bounded and late and join_after_5
            and result.get("frame") is None and unblock < 1.0,
            f"1000 interleavings monotone {monotone}, <=1 frame retained "
            f"{bounded}, join-after-5 {join_after_5}, close unblocked in "
            f"{unblock:.3f}s")


def test_criterion_9_persistence_stability(store_dir):
    store = records.load_store(store_dir / "records.json")
    records.save_store(store, store_dir / "a.json")
    records.save_store(records.load_store(store_dir / "a.json"),
                       store_dir / "b.json")
    store_ok = (store_dir / "a.json").read_bytes() \
        == (store_dir / "b.json").read_bytes()

    gallery = [(decode_pgm(store.resolve(ref).read_bytes()), pid)
               for pid in sorted(store.enrollment)
               for ref in store.enrollment[pid]]
    blob = save_model(train(gallery, k_max=16))
    model_ok = save_model(load_model(blob)) == blob
    _report(9, store_ok and model_ok,
            f"records byte-identical {store_ok}, model byte-identical "
            f"{model_ok}")
