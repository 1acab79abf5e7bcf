"""SOAP 1.1 endpoint logic: envelope codec and the four service actions."""

import base64
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple
from xml.etree import ElementTree as ET
from xml.sax.saxutils import escape

from . import records
from .detect import HaarCascade, detect_faces
from .imaging import GrayImage, PgmError, crop, decode_pgm, encode_pgm
from .recognize import (
    DEFAULT_THETA,
    EigenModel,
    TrainingError,
    identify,
    save_model,
    train,
)

_SOAP_NS = "http://schemas.xmlsoap.org/soap/envelope/"
_ACTION_NS = "urn:diane"
ACTIONS = ("IdentifyPatient", "EnrollFace", "GetPatient", "TrainModel")
_IMAGE_ENCODING = "pgm+base64"


class SoapError(ValueError):
    """Base class for request decoding failures; name doubles as fault code."""


class XmlMalformed(SoapError):
    pass


class UnknownAction(SoapError):
    pass


class MissingParameter(SoapError):
    pass


class BadImagePayload(SoapError):
    pass


@dataclass(frozen=True)
class SoapRequest:
    action: str
    params: Dict


@dataclass(frozen=True)
class Fault:
    faultcode: str
    faultstring: str

    @property
    def code(self) -> str:
        # diane:* prefix clients dispatch on
        return self.faultstring.split(" ", 1)[0]


# pages travel as (index, (line, ...)) pairs; page titles stay server-side
Pages = Tuple[Tuple[int, Tuple[str, ...]], ...]


@dataclass(frozen=True)
class IdentifyResponse:
    patient_id: str
    name: str
    gender: str
    birth_date: str
    similarity: float
    pages: Pages


@dataclass(frozen=True)
class EnrollResponse:
    patient_id: str
    count: int


@dataclass(frozen=True)
class GetPatientResponse:
    patient_id: str
    name: str
    gender: str
    birth_date: str
    pages: Pages


@dataclass(frozen=True)
class TrainResponse:
    image_count: int
    k: int
    eigenvalue_sum: float


def _response_pages(rec: records.PatientRecord) -> Pages:
    return tuple((p.index, tuple(p.lines)) for p in records.record_pages(rec))


# --- request codec ---


def _text_of(parent, tag: str) -> Optional[str]:
    el = parent.find(f"{{{_ACTION_NS}}}{tag}")
    return None if el is None else (el.text or "")


def _require(parent, tag: str) -> str:
    value = _text_of(parent, tag)
    if value is None or value == "":
        raise MissingParameter(f"{tag} is required")
    return value


def _image_of(parent) -> GrayImage:
    el = parent.find(f"{{{_ACTION_NS}}}Image")
    if el is None:
        raise MissingParameter("Image is required")
    if el.get("encoding") != _IMAGE_ENCODING:
        raise BadImagePayload(
            f"Image encoding must be {_IMAGE_ENCODING!r}")
    try:
        raw = base64.b64decode(el.text or "", validate=True)
    except (ValueError, TypeError) as e:
        raise BadImagePayload(f"Image is not valid base64: {e}") from None
    try:
        return decode_pgm(raw)
    except PgmError as e:
        raise BadImagePayload(f"Image payload is not a PGM: {e}") from None


def _float_of(parent, tag: str, lo: float, hi: float) -> Optional[float]:
    text = _text_of(parent, tag)
    if text is None:
        return None
    try:
        value = float(text)
    except ValueError:
        raise MissingParameter(f"{tag} is not a number: {text!r}") from None
    if not (lo <= value <= hi):
        raise MissingParameter(f"{tag} must be in [{lo}, {hi}], got {value}")
    return value


def _int_of(parent, tag: str) -> Optional[int]:
    text = _text_of(parent, tag)
    if text is None:
        return None
    try:
        value = int(text)
    except ValueError:
        raise MissingParameter(f"{tag} is not an integer: {text!r}") from None
    if value < 1:
        raise MissingParameter(f"{tag} must be >= 1, got {value}")
    return value


def parse_envelope(data: bytes) -> SoapRequest:
    """Decode a SOAP 1.1 request envelope into an action plus parameters."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as e:
        raise XmlMalformed(f"not well-formed XML: {e}") from None
    if root.tag != f"{{{_SOAP_NS}}}Envelope":
        raise XmlMalformed(f"root element is {root.tag}, not soap:Envelope")
    bodies = root.findall(f"{{{_SOAP_NS}}}Body")
    if len(bodies) != 1:
        raise XmlMalformed(f"expected exactly one soap:Body, got {len(bodies)}")
    children = list(bodies[0])
    if len(children) != 1:
        raise XmlMalformed(
            f"Body must hold exactly one action element, got {len(children)}")
    action_el = children[0]
    ns, _, local = action_el.tag.rpartition("}")
    if ns != "{" + _ACTION_NS or local not in ACTIONS:
        raise UnknownAction(f"no action {action_el.tag!r}")

    if local == "IdentifyPatient":
        params = {"image": _image_of(action_el),
                  "threshold": _float_of(action_el, "Threshold", 0.0, 1.0)}
    elif local == "EnrollFace":
        params = {"patient_id": _require(action_el, "PatientId"),
                  "image": _image_of(action_el)}
    elif local == "GetPatient":
        params = {"patient_id": _require(action_el, "PatientId")}
    else:
        params = {"k_max": _int_of(action_el, "KMax")}
    return SoapRequest(local, params)


def serialize_request(req: SoapRequest) -> bytes:
    """Render a request envelope; inverse of parse_envelope."""
    p = req.params
    lines = []
    if req.action == "IdentifyPatient":
        lines.append(_image_line(p["image"]))
        if p.get("threshold") is not None:
            lines.append(f"      <Threshold>{p['threshold']}</Threshold>")
    elif req.action == "EnrollFace":
        lines.append(f"      <PatientId>{escape(p['patient_id'])}"
                     "</PatientId>")
        lines.append(_image_line(p["image"]))
    elif req.action == "GetPatient":
        lines.append(f"      <PatientId>{escape(p['patient_id'])}"
                     "</PatientId>")
    elif req.action == "TrainModel":
        if p.get("k_max") is not None:
            lines.append(f"      <KMax>{p['k_max']}</KMax>")
    else:
        raise ValueError(f"unknown action {req.action!r}")
    body = "\n".join([f'    <{req.action} xmlns="{_ACTION_NS}">']
                     + lines + [f"    </{req.action}>"])
    return _envelope(body)


def _image_line(img: GrayImage) -> str:
    b64 = base64.b64encode(encode_pgm(img)).decode("ascii")
    return f'      <Image encoding="{_IMAGE_ENCODING}">{b64}</Image>'


def _envelope(body: str) -> bytes:
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<soap:Envelope xmlns:soap="{_SOAP_NS}">\n'
        "  <soap:Body>\n"
        f"{body}\n"
        "  </soap:Body>\n"
        "</soap:Envelope>\n"
    ).encode("utf-8")


# --- response codec ---


def _pages_lines(pages: Pages, indent: str) -> list:
    out = [f"{indent}<Pages>"]
    for index, page_lines in pages:
        out.append(f'{indent}  <Page index="{index}">')
        out.extend(f"{indent}    <Line>{escape(line)}</Line>"
                   for line in page_lines)
        out.append(f"{indent}  </Page>")
    out.append(f"{indent}</Pages>")
    return out


def serialize_response(resp) -> bytes:
    if isinstance(resp, Fault):
        body = "\n".join([
            "    <soap:Fault>",
            f"      <faultcode>{escape(resp.faultcode)}</faultcode>",
            f"      <faultstring>{escape(resp.faultstring)}</faultstring>",
            "    </soap:Fault>",
        ])
        return _envelope(body)

    if isinstance(resp, IdentifyResponse):
        name, fields = "IdentifyPatientResponse", [
            ("PatientId", resp.patient_id), ("Name", resp.name),
            ("Gender", resp.gender), ("BirthDate", resp.birth_date),
            ("Similarity", f"{resp.similarity:.6f}")]
        pages = resp.pages
    elif isinstance(resp, EnrollResponse):
        name, fields = "EnrollFaceResponse", [
            ("PatientId", resp.patient_id), ("Count", str(resp.count))]
        pages = None
    elif isinstance(resp, GetPatientResponse):
        name, fields = "GetPatientResponse", [
            ("PatientId", resp.patient_id), ("Name", resp.name),
            ("Gender", resp.gender), ("BirthDate", resp.birth_date)]
        pages = resp.pages
    elif isinstance(resp, TrainResponse):
        name, fields = "TrainModelResponse", [
            ("ImageCount", str(resp.image_count)), ("K", str(resp.k)),
            ("EigenvalueSum", f"{resp.eigenvalue_sum:.6f}")]
        pages = None
    else:
        raise TypeError(f"not a response: {resp!r}")

    lines = [f'    <{name} xmlns="{_ACTION_NS}">']
    lines.extend(f"      <{tag}>{escape(value)}</{tag}>"
                 for tag, value in fields)
    if pages is not None:
        lines.extend(_pages_lines(pages, "      "))
    lines.append(f"    </{name}>")
    return _envelope("\n".join(lines))


def _parse_pages(el) -> Pages:
    pages_el = el.find(f"{{{_ACTION_NS}}}Pages")
    if pages_el is None:
        raise XmlMalformed("response lacks Pages")
    pages = []
    for page in pages_el:
        index = int(page.get("index", "0"))
        lines = tuple(line.text or "" for line in page)
        pages.append((index, lines))
    return tuple(pages)


def parse_response(data: bytes):
    """Decode a response envelope into its dataclass or Fault."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as e:
        raise XmlMalformed(f"not well-formed XML: {e}") from None
    body = root.find(f"{{{_SOAP_NS}}}Body")
    if body is None or len(list(body)) != 1:
        raise XmlMalformed("expected a Body with one child")
    el = list(body)[0]
    local = el.tag.rpartition("}")[2]
    if el.tag == f"{{{_SOAP_NS}}}Fault":
        return Fault(el.findtext("faultcode") or "",
                     el.findtext("faultstring") or "")
    get = lambda tag: _text_of(el, tag)
    try:
        if local == "IdentifyPatientResponse":
            return IdentifyResponse(get("PatientId"), get("Name"),
                                    get("Gender"), get("BirthDate"),
                                    float(get("Similarity")),
                                    _parse_pages(el))
        if local == "EnrollFaceResponse":
            return EnrollResponse(get("PatientId"), int(get("Count")))
        if local == "GetPatientResponse":
            return GetPatientResponse(get("PatientId"), get("Name"),
                                      get("Gender"), get("BirthDate"),
                                      _parse_pages(el))
        if local == "TrainModelResponse":
            return TrainResponse(int(get("ImageCount")), int(get("K")),
                                 float(get("EigenvalueSum")))
    except (TypeError, ValueError) as e:
        raise XmlMalformed(f"bad {local} payload: {e}") from None
    raise XmlMalformed(f"unrecognized response element {el.tag!r}")


# --- service ---


def _largest_detection(detections):
    return max(detections, key=lambda d: d.rect.area)


def training_crop(img: GrayImage, cascade: HaarCascade) -> GrayImage:
    """Detector crop used on gallery images before training.

    Falls back to the whole image when nothing is detected, so bare
    face rasters (too small to group) still enroll; probes cropped out
    of live frames then match them pixel-for-pixel.
    """
    detections = detect_faces(cascade, img)
    if not detections:
        return img
    return crop(img, _largest_detection(detections).rect)


class Service:
    """Action handlers bound to one store, cascade, and live model."""

    def __init__(self, store: records.PatientStore, cascade: HaarCascade,
                 model: Optional[EigenModel] = None,
                 default_theta: float = DEFAULT_THETA,
                 store_path=None, model_path=None):
        self.store = store
        self.cascade = cascade
        self.model = model
        self.default_theta = default_theta
        self.store_path = Path(store_path) if store_path else None
        self.model_path = Path(model_path) if model_path else None
        # enroll/train serialize here; identify/get never take the lock
        self._write_lock = threading.Lock()

    # -- dispatch --

    def handle_request(self, data: bytes) -> Tuple[int, bytes, str]:
        """Full request->response cycle: (http status, envelope, action)."""
        action = "?"
        try:
            req = parse_envelope(data)
            action = req.action
            handler = getattr(self, "handle_" + _SNAKE[req.action])
            resp = handler(req.params)
        except SoapError as e:
            resp = _fault(type(e).__name__, str(e))
        except Exception as e:  # keep the contract: faults, never drops
            resp = _fault("Internal", f"{type(e).__name__}: {e}")
        status = 500 if isinstance(resp, Fault) else 200
        return status, serialize_response(resp), action

    # -- actions --

    def handle_identify(self, params):
        model = self.model
        if model is None:
            return _fault("Internal", "no trained model loaded")
        detections = detect_faces(self.cascade, params["image"])
        if not detections:
            return _fault("NoFaceDetected", "no face found in the frame")
        face = crop(params["image"], _largest_detection(detections).rect)
        theta = params.get("threshold")
        if theta is None:
            theta = self.default_theta
        res = identify(model, face, theta=theta)
        if not res.known:
            return _fault("UnknownFace", f"best_distance={res.distance:.6f}")
        try:
            rec = records.get_patient(self.store, res.label)
        except records.NotFound:
            return _fault("Internal",
                          f"model labels unknown patient {res.label!r}")
        return IdentifyResponse(rec.patient_id, rec.name, rec.gender,
                                rec.birth_date, res.similarity,
                                _response_pages(rec))

    def handle_enroll(self, params):
        pid = params["patient_id"]
        with self._write_lock:
            try:
                records.get_patient(self.store, pid)
            except records.NotFound:
                return _fault("NoSuchPatient", f"no patient {pid!r}")
            refs = self.store.enrollment.get(pid, [])
            n = len(refs)
            while True:
                ref = f"images/{pid}_enroll{n}.pgm"
                if not self.store.resolve(ref).exists():
                    break
                n += 1
            path = self.store.resolve(ref)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(encode_pgm(params["image"]))
            records.add_enrollment(self.store, pid, ref)
            if self.store_path is not None:
                records.save_store(self.store, self.store_path)
            count = len(self.store.enrollment[pid])
        return EnrollResponse(pid, count)

    def handle_get_patient(self, params):
        try:
            rec = records.get_patient(self.store, params["patient_id"])
        except records.NotFound as e:
            return _fault("NoSuchPatient", str(e))
        return GetPatientResponse(rec.patient_id, rec.name, rec.gender,
                                  rec.birth_date, _response_pages(rec))

    def handle_train(self, params):
        k_max = params.get("k_max") or 16
        with self._write_lock:
            gallery = []
            for pid in sorted(self.store.enrollment):
                for ref in self.store.enrollment[pid]:
                    img = decode_pgm(self.store.resolve(ref).read_bytes())
                    gallery.append((training_crop(img, self.cascade), pid))
            try:
                model = train(gallery, k_max=k_max)
            except TrainingError as e:
                return _fault(type(e).__name__, str(e))
            if self.model_path is not None:
                self.model_path.write_bytes(save_model(model))
            self.model = model
        return TrainResponse(len(gallery), model.k,
                             float(model.eigenvalues.sum()))


_SNAKE = {"IdentifyPatient": "identify", "EnrollFace": "enroll",
          "GetPatient": "get_patient", "TrainModel": "train"}


def _fault(code: str, detail: str) -> Fault:
    return Fault("soap:Client", f"diane:{code} {detail}")
