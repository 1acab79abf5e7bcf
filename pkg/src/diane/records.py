"""Patient record store: JSON document plus a directory of PGM images."""

import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Dict, List

from .imaging import GrayImage, PgmError, decode_pgm


class RecordsError(ValueError):
    """Base class for record store failures."""


class ParseError(RecordsError):
    pass


class DuplicateId(RecordsError):
    pass


class DanglingEnrollment(RecordsError):
    pass


class MissingProfileImage(RecordsError):
    pass


class NotFound(RecordsError):
    pass


class IoError(RecordsError):
    pass


@dataclass(frozen=True)
class Allergy:
    substance: str
    noted_on: str


@dataclass(frozen=True)
class Immunization:
    vaccine: str
    given_on: str


@dataclass(frozen=True)
class Medication:
    drug: str
    prescribed_on: str


@dataclass
class MedicalRecord:
    allergies: List[Allergy]
    immunizations: List[Immunization]
    medications: List[Medication]


@dataclass
class PatientRecord:
    patient_id: str
    name: str
    gender: str
    birth_date: str
    profile_image: str
    medical: MedicalRecord


@dataclass(frozen=True)
class Page:
    index: int
    title: str
    lines: List[str]


@dataclass
class PatientStore:
    patients: Dict[str, PatientRecord]
    enrollment: Dict[str, List[str]]
    # image references resolve against this directory; not part of equality
    # so a store saved elsewhere still compares equal field-wise
    root: Path = field(compare=False)

    def resolve(self, ref: str) -> Path:
        return self.root / ref


_GENDERS = ("male", "female")


def _check_keys(obj, expected, where: str) -> None:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object")
    got = set(obj)
    if got != set(expected):
        unknown = sorted(got - set(expected))
        missing = sorted(set(expected) - got)
        parts = []
        if unknown:
            parts.append(f"unknown keys {unknown}")
        if missing:
            parts.append(f"missing keys {missing}")
        raise ParseError(f"{where}: " + ", ".join(parts))


def _text(value, where: str) -> str:
    if not isinstance(value, str) or not value:
        raise ParseError(f"{where}: expected non-empty text, got {value!r}")
    return value


def _date(value, where: str) -> str:
    if not isinstance(value, str):
        raise ParseError(f"{where}: expected a YYYY-MM-DD date, got {value!r}")
    try:
        datetime.strptime(value, "%Y-%m-%d")
    except ValueError:
        raise ParseError(f"{where}: bad date {value!r}") from None
    return value


def _entries(raw, cls, text_key: str, date_key: str, where: str):
    if not isinstance(raw, list):
        raise ParseError(f"{where}: expected a list")
    out = []
    for i, item in enumerate(raw):
        at = f"{where}[{i}]"
        _check_keys(item, (text_key, date_key), at)
        out.append(cls(_text(item[text_key], f"{at}.{text_key}"),
                       _date(item[date_key], f"{at}.{date_key}")))
    return out


def _parse_patient(raw, where: str) -> PatientRecord:
    _check_keys(raw, ("patient_id", "name", "gender", "birth_date",
                      "profile_image", "medical"), where)
    pid = _text(raw["patient_id"], f"{where}.patient_id")
    name = _text(raw["name"], f"{where}.name")
    gender = raw["gender"]
    if gender not in _GENDERS:
        raise ParseError(f"{where}.gender: expected one of {_GENDERS},"
                         f" got {gender!r}")
    birth = _date(raw["birth_date"], f"{where}.birth_date")
    if datetime.strptime(birth, "%Y-%m-%d").date() > date.today():
        raise ParseError(f"{where}.birth_date: {birth} is in the future")
    profile = _text(raw["profile_image"], f"{where}.profile_image")
    med = raw["medical"]
    mw = f"{where}.medical"
    _check_keys(med, ("allergies", "immunizations", "medications"), mw)
    medical = MedicalRecord(
        _entries(med["allergies"], Allergy, "substance", "noted_on",
                 f"{mw}.allergies"),
        _entries(med["immunizations"], Immunization, "vaccine", "given_on",
                 f"{mw}.immunizations"),
        _entries(med["medications"], Medication, "drug", "prescribed_on",
                 f"{mw}.medications"),
    )
    return PatientRecord(pid, name, gender, birth, profile, medical)


def _read_pgm(root: Path, ref: str, err, what: str) -> None:
    path = root / ref
    try:
        data = path.read_bytes()
    except OSError as e:
        raise err(f"{what} {ref!r}: {e}") from None
    try:
        decode_pgm(data)
    except PgmError as e:
        raise err(f"{what} {ref!r}: {e}") from None


def load_store(path, images_root=None) -> PatientStore:
    """Load and fully validate a record document.

    Image references resolve against ``images_root`` when given, otherwise
    against the document's own directory.
    """
    path = Path(path)
    root = Path(images_root) if images_root is not None else path.parent
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path.name}: {e}") from None

    _check_keys(doc, ("patients", "enrollment"), "document")
    if not isinstance(doc["patients"], list):
        raise ParseError("document.patients: expected a list")
    patients: Dict[str, PatientRecord] = {}
    for i, raw in enumerate(doc["patients"]):
        rec = _parse_patient(raw, f"patients[{i}]")
        if rec.patient_id in patients:
            raise DuplicateId(f"patient_id {rec.patient_id!r} appears twice")
        patients[rec.patient_id] = rec

    raw_enroll = doc["enrollment"]
    if not isinstance(raw_enroll, dict):
        raise ParseError("document.enrollment: expected an object")
    enrollment: Dict[str, List[str]] = {}
    for pid, refs in raw_enroll.items():
        if pid not in patients:
            raise DanglingEnrollment(f"enrollment for unknown patient {pid!r}")
        if not isinstance(refs, list):
            raise ParseError(f"enrollment.{pid}: expected a list")
        enrollment[pid] = [_text(r, f"enrollment.{pid}[{j}]")
                           for j, r in enumerate(refs)]

    for rec in patients.values():
        _read_pgm(root, rec.profile_image, MissingProfileImage,
                  f"patient {rec.patient_id} profile image")
    for pid, refs in enrollment.items():
        for ref in refs:
            _read_pgm(root, ref, DanglingEnrollment,
                      f"patient {pid} enrollment image")

    return PatientStore(patients, enrollment, root)


def save_store(store: PatientStore, path) -> None:
    """Write the store as a record document, replacing atomically."""
    doc = {
        # id-sorted array plus sorted object keys keep re-saves byte-stable
        "patients": [
            {
                "patient_id": rec.patient_id,
                "name": rec.name,
                "gender": rec.gender,
                "birth_date": rec.birth_date,
                "profile_image": rec.profile_image,
                "medical": {
                    "allergies": [{"substance": a.substance,
                                   "noted_on": a.noted_on}
                                  for a in rec.medical.allergies],
                    "immunizations": [{"vaccine": im.vaccine,
                                       "given_on": im.given_on}
                                      for im in rec.medical.immunizations],
                    "medications": [{"drug": md.drug,
                                     "prescribed_on": md.prescribed_on}
                                    for md in rec.medical.medications],
                },
            }
            for _, rec in sorted(store.patients.items())
        ],
        "enrollment": {pid: list(refs)
                       for pid, refs in sorted(store.enrollment.items())},
    }
    path = Path(path)
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from None


def get_patient(store: PatientStore, patient_id: str) -> PatientRecord:
    try:
        return store.patients[patient_id]
    except KeyError:
        raise NotFound(f"no patient {patient_id!r}") from None


def add_enrollment(store: PatientStore, patient_id: str, ref: str) -> None:
    get_patient(store, patient_id)
    store.enrollment.setdefault(patient_id, []).append(ref)


def _dated_lines(pairs) -> List[str]:
    if not pairs:
        return ["none recorded"]
    return [f"{text} ({when})" for when, text in sorted(pairs)]


def record_pages(rec: PatientRecord) -> List[Page]:
    """Render the four client display pages for one patient."""
    med = rec.medical
    return [
        Page(1, "biodata", [rec.name, rec.gender, rec.birth_date]),
        Page(2, "allergies",
             _dated_lines([(a.noted_on, a.substance)
                           for a in med.allergies])),
        Page(3, "immunizations",
             _dated_lines([(im.given_on, im.vaccine)
                           for im in med.immunizations])),
        Page(4, "medications",
             _dated_lines([(md.prescribed_on, md.drug)
                           for md in med.medications])),
    ]
