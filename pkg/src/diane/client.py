"""HTTP client for the service: SOAP calls plus the stream endpoints."""

from dataclasses import dataclass
from typing import Iterator, Optional, Tuple
from urllib.parse import urlparse

import requests

from .imaging import GrayImage
from .soap import SoapError, SoapRequest, parse_response, serialize_request


class TransportError(Exception):
    """Server unreachable or the reply was not protocol-shaped."""


class SessionError(Exception):
    """Stream session rejected the operation (missing, closed, or stale)."""

    def __init__(self, status: int, detail: str):
        super().__init__(f"{status}: {detail}")
        self.status = status


@dataclass(frozen=True)
class ClientConfig:
    server_url: str
    threshold: Optional[float] = None
    timeout: float = 30.0

    def __post_init__(self):
        parsed = urlparse(self.server_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValueError(f"not an http url: {self.server_url!r}")
        if self.timeout <= 0:
            raise ValueError(f"timeout must be > 0, got {self.timeout}")


class Client:
    def __init__(self, config: ClientConfig):
        self.config = config
        self._base = config.server_url.rstrip("/")

    # -- soap actions --

    def _soap(self, req: SoapRequest):
        try:
            r = requests.post(
                self._base + "/soap", data=serialize_request(req),
                headers={"Content-Type": "text/xml; charset=utf-8"},
                timeout=self.config.timeout)
        except requests.RequestException as e:
            raise TransportError(f"cannot reach server: {e}") from None
        try:
            return parse_response(r.content)
        except SoapError as e:
            raise TransportError(
                f"unintelligible reply (HTTP {r.status_code}): {e}") from None

    def identify(self, image: GrayImage, threshold: Optional[float] = None):
        if threshold is None:
            threshold = self.config.threshold
        return self._soap(SoapRequest(
            "IdentifyPatient", {"image": image, "threshold": threshold}))

    def enroll(self, patient_id: str, image: GrayImage):
        return self._soap(SoapRequest(
            "EnrollFace", {"patient_id": patient_id, "image": image}))

    def get_patient(self, patient_id: str):
        return self._soap(SoapRequest("GetPatient",
                                      {"patient_id": patient_id}))

    def train(self, k_max: Optional[int] = None):
        return self._soap(SoapRequest("TrainModel", {"k_max": k_max}))

    # -- stream endpoints --

    def _request(self, method: str, path: str, **kw):
        try:
            return requests.request(method, self._base + path,
                                    timeout=self.config.timeout, **kw)
        except requests.RequestException as e:
            raise TransportError(f"cannot reach server: {e}") from None

    def stream_create(self) -> str:
        r = self._request("POST", "/streams")
        if r.status_code != 201:
            raise TransportError(f"create returned HTTP {r.status_code}")
        return r.text.strip()

    def stream_publish(self, session_id: str, seq: int,
                       payload: bytes) -> None:
        r = self._request(
            "POST", f"/streams/{session_id}/frames", data=payload,
            headers={"X-Frame-Seq": str(seq),
                     "Content-Type": "image/x-portable-graymap"})
        if r.status_code == 202:
            return
        if r.status_code in (404, 409, 410):
            raise SessionError(r.status_code, r.text.strip())
        raise TransportError(f"publish returned HTTP {r.status_code}")

    def stream_close(self, session_id: str) -> None:
        r = self._request("DELETE", f"/streams/{session_id}")
        if r.status_code == 204:
            return
        if r.status_code == 404:
            raise SessionError(404, r.text.strip())
        raise TransportError(f"close returned HTTP {r.status_code}")

    def stream_frames(self, session_id: str) -> Iterator[Tuple[int, bytes]]:
        """Yield (seq, pgm bytes) from the live feed until it ends."""
        r = self._request("GET", f"/streams/{session_id}/live", stream=True,
                          headers={"Accept": "multipart/x-mixed-replace"})
        if r.status_code == 404:
            raise SessionError(404, r.text.strip())
        if r.status_code != 200:
            raise TransportError(f"live returned HTTP {r.status_code}")
        raw = r.raw
        try:
            while True:
                line = _read_line(raw)
                if line in (b"", b"--frame--\r\n"):
                    return
                if line.strip() == b"":
                    continue
                if line != b"--frame\r\n":
                    raise TransportError(f"bad multipart boundary {line!r}")
                headers = {}
                while True:
                    line = _read_line(raw)
                    if line in (b"\r\n", b""):
                        break
                    name, _, value = line.decode("latin-1").partition(":")
                    headers[name.strip().lower()] = value.strip()
                seq = int(headers.get("x-frame-seq", "0"))
                length = int(headers.get("content-length", "0"))
                payload = _read_exact(raw, length)
                _read_exact(raw, 2)  # part-terminating CRLF
                yield seq, payload
        except (OSError, requests.RequestException, ValueError) as e:
            raise TransportError(f"stream broke: {e}") from None
        finally:
            r.close()


def _read_line(raw) -> bytes:
    buf = bytearray()
    while not buf.endswith(b"\r\n"):
        c = raw.read(1)
        if not c:
            break
        buf += c
    return bytes(buf)


def _read_exact(raw, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = raw.read(n - len(buf))
        if not chunk:
            raise TransportError(f"stream ended {n - len(buf)} bytes short")
        buf += chunk
    return bytes(buf)
