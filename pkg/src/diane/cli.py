"""Command line front: the simulated headset client plus the server runner."""

import argparse
import os
import sys
import time
from pathlib import Path

from . import records
from .client import Client, ClientConfig, SessionError, TransportError
from .detect import CascadeError, load_cascade
from .imaging import PgmError, decode_pgm
from .recognize import DEFAULT_THETA, ModelFormatError, load_model
from .server import AppServer
from .soap import Fault, Service, TrainResponse
from .stream import Relay

DEFAULT_SERVER = "http://127.0.0.1:8070"


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr, flush=True)


def _server_url(args) -> str:
    return args.server or os.environ.get("DIANE_SERVER") or DEFAULT_SERVER


def _client(args, threshold=None) -> Client:
    return Client(ClientConfig(_server_url(args), threshold=threshold))


def _read_image(path: str):
    try:
        return decode_pgm(Path(path).read_bytes())
    except (OSError, PgmError) as e:
        _err(f"cannot read image {path}: {e}")
        return None


def _fault_exit(fault: Fault) -> int:
    _err(fault.faultstring)
    return 2


# --- commands ---


def cmd_serve(args) -> int:
    try:
        host, _, port_text = args.listen.rpartition(":")
        if not host or not port_text.isdigit():
            raise ValueError(f"--listen wants host:port, got {args.listen!r}")
        port = int(port_text)
        store = records.load_store(args.records, images_root=args.gallery)
        cascade = load_cascade(Path(args.cascade).read_text())
        model = None
        if args.model and Path(args.model).exists():
            model = load_model(Path(args.model).read_bytes())
        service = Service(store, cascade, model=model,
                          default_theta=args.threshold,
                          store_path=args.records, model_path=args.model)
        if args.train_on_start:
            resp = service.handle_train({"k_max": args.k})
            if isinstance(resp, Fault):
                raise ValueError(resp.faultstring)
            print(f"trained model image_count={resp.image_count} "
                  f"k={resp.k} eigenvalue_sum={resp.eigenvalue_sum:.6f}",
                  file=sys.stderr, flush=True)
        app = AppServer(service, Relay(), host=host, port=port)
    except (OSError, ValueError, records.RecordsError, CascadeError,
            PgmError, ModelFormatError) as e:
        _err(str(e))
        return 1
    print(f"listening on {app.url}", file=sys.stderr, flush=True)
    try:
        app.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        app.shutdown()
    return 0


def cmd_identify(args) -> int:
    img = _read_image(args.image)
    if img is None:
        return 1
    try:
        resp = _client(args).identify(img, threshold=args.threshold)
    except TransportError as e:
        _err(str(e))
        return 1
    if isinstance(resp, Fault):
        _err(resp.faultstring)
        if resp.code == "diane:NoFaceDetected":
            return 3
        return 2
    print("\n\n".join("\n".join(lines) for _, lines in resp.pages))
    return 0


def cmd_enroll(args) -> int:
    img = _read_image(args.image)
    if img is None:
        return 1
    try:
        resp = _client(args).enroll(args.patient_id, img)
    except TransportError as e:
        _err(str(e))
        return 1
    if isinstance(resp, Fault):
        return _fault_exit(resp)
    print(f"enrolled {resp.patient_id} count={resp.count}")
    return 0


def cmd_train(args) -> int:
    try:
        resp = _client(args).train(args.k)
    except TransportError as e:
        _err(str(e))
        return 1
    if isinstance(resp, Fault):
        return _fault_exit(resp)
    if not isinstance(resp, TrainResponse):
        _err(f"unexpected reply {resp!r}")
        return 1
    print(f"image_count={resp.image_count} k={resp.k} "
          f"eigenvalue_sum={resp.eigenvalue_sum:.6f}")
    return 0


def cmd_stream_pub(args) -> int:
    src = Path(args.source)
    files = sorted(src.glob("*.pgm")) if src.is_dir() else []
    if not files:
        _err(f"{args.source}: not a directory with .pgm files")
        return 1
    payloads = []
    for f in files:
        data = f.read_bytes()
        try:
            decode_pgm(data)
        except PgmError as e:
            _err(f"{f}: {e}")
            return 1
        payloads.append(data)
    if args.fps <= 0:
        _err(f"--fps must be > 0, got {args.fps}")
        return 1
    client = _client(args)
    try:
        session_id = client.stream_create()
        print(session_id, flush=True)
        for seq, data in enumerate(payloads, start=1):
            client.stream_publish(session_id, seq, data)
            if seq < len(payloads):
                time.sleep(1.0 / args.fps)
        client.stream_close(session_id)
    except SessionError as e:
        _err(str(e))
        return 2
    except TransportError as e:
        _err(str(e))
        return 1
    print(f"published {len(payloads)} frames", file=sys.stderr, flush=True)
    return 0


def cmd_stream_watch(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        _err(str(e))
        return 1
    try:
        for seq, payload in _client(args).stream_frames(args.session_id):
            (out / f"{seq}.pgm").write_bytes(payload)
            print(f"frame {seq}", file=sys.stderr, flush=True)
    except SessionError as e:
        _err(str(e))
        return 2
    except TransportError as e:
        _err(str(e))
        return 1
    return 0


# --- parser ---


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="diane",
        description="Patient identification service and its headset-side "
                    "client commands.")
    sub = p.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the SOAP + streaming server")
    serve.add_argument("--records", required=True,
                       help="record document path")
    serve.add_argument("--gallery", help="image directory override")
    serve.add_argument("--cascade", required=True,
                       help="cascade definition path")
    serve.add_argument("--model", help="eigen-model file to load/persist")
    serve.add_argument("--listen", default="127.0.0.1:8070",
                       help="host:port to bind")
    serve.add_argument("--threshold", type=float, default=DEFAULT_THETA,
                       help="default similarity threshold")
    serve.add_argument("--k", type=int, default=16,
                       help="k_max for --train-on-start")
    serve.add_argument("--train-on-start", action="store_true",
                       help="train the model from the store before serving")
    serve.set_defaults(func=cmd_serve)

    def client_flags(sp):
        sp.add_argument("--server", help=f"server URL (default "
                        f"$DIANE_SERVER or {DEFAULT_SERVER})")

    identify = sub.add_parser("identify", help="identify the face in a frame")
    identify.add_argument("image", help="PGM frame to send")
    identify.add_argument("--threshold", type=float,
                          help="similarity threshold override")
    client_flags(identify)
    identify.set_defaults(func=cmd_identify)

    enroll = sub.add_parser("enroll", help="add a face image to a patient")
    enroll.add_argument("patient_id")
    enroll.add_argument("image", help="PGM image to enroll")
    client_flags(enroll)
    enroll.set_defaults(func=cmd_enroll)

    train = sub.add_parser("train", help="retrain the model on the server")
    train.add_argument("--k", type=int, help="maximum retained components")
    client_flags(train)
    train.set_defaults(func=cmd_train)

    stream = sub.add_parser("stream", help="live frame streaming")
    ssub = stream.add_subparsers(dest="stream_command", required=True)

    pub = ssub.add_parser("pub", help="publish a directory of PGM frames")
    pub.add_argument("source", help="directory of .pgm files")
    pub.add_argument("--fps", type=float, default=4.0,
                     help="publish rate, frames per second")
    client_flags(pub)
    pub.set_defaults(func=cmd_stream_pub)

    watch = ssub.add_parser("watch", help="save live frames as they arrive")
    watch.add_argument("session_id")
    watch.add_argument("out", help="directory for {seq}.pgm files")
    client_flags(watch)
    watch.set_defaults(func=cmd_stream_watch)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    raise SystemExit(main())
