"""Regenerate the shipped fixtures from the synthetic generators.

Writes fixtures/synthetic-face.cascade, fixtures/records.json with its
images/ directory, and fixtures/benchmark.json. Output is deterministic:
re-running produces byte-identical files.
"""

import json
from pathlib import Path

from diane import synthetic
from diane.imaging import encode_pgm
from diane.records import (
    Allergy,
    Immunization,
    Medication,
    MedicalRecord,
    PatientRecord,
    PatientStore,
    save_store,
)
from diane.recognize import identify, train

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def write_cascade() -> None:
    (FIXTURES / "synthetic-face.cascade").write_text(synthetic.CASCADE_TEXT)


def write_records() -> None:
    images = FIXTURES / "images"
    images.mkdir(parents=True, exist_ok=True)
    rasters = synthetic.fixture_images()
    patients = {}
    enrollment = {}
    for p in synthetic.PATIENTS:
        pid = p["patient_id"]
        profile, enrolled = rasters[pid]
        profile_ref = f"images/{pid}_profile.pgm"
        (FIXTURES / profile_ref).write_bytes(encode_pgm(profile))
        refs = []
        for i, img in enumerate(enrolled):
            ref = f"images/{pid}_enroll{i}.pgm"
            (FIXTURES / ref).write_bytes(encode_pgm(img))
            refs.append(ref)
        medical = MedicalRecord(
            [Allergy(s, d) for s, d in p["allergies"]],
            [Immunization(v, d) for v, d in p["immunizations"]],
            [Medication(m, d) for m, d in p["medications"]],
        )
        patients[pid] = PatientRecord(pid, p["name"], p["gender"],
                                      p["birth_date"], profile_ref, medical)
        enrollment[pid] = refs
    save_store(PatientStore(patients, enrollment, FIXTURES),
               FIXTURES / "records.json")


def write_benchmark() -> None:
    gallery, impostors = synthetic.benchmark_set()
    theta = 0.6
    loo_correct = 0
    max_genuine = 0.0
    for i in range(len(gallery)):
        model = train(gallery[:i] + gallery[i + 1 :])
        res = identify(model, gallery[i][0], theta=theta)
        max_genuine = max(max_genuine, res.distance)
        if res.known and res.label == gallery[i][1]:
            loo_correct += 1
    model = train(gallery)
    rejected = 0
    min_impostor = float("inf")
    for img, _ in impostors:
        res = identify(model, img, theta=theta)
        min_impostor = min(min_impostor, res.distance)
        if not res.known:
            rejected += 1
    report = {
        "theta": theta,
        "seed": synthetic.BENCHMARK_SEED,
        "subjects": 10,
        "images_per_subject": 3,
        "loo_correct": loo_correct,
        "loo_total": len(gallery),
        "rejection_correct": rejected,
        "rejection_total": len(impostors),
        "max_genuine_distance": round(max_genuine, 6),
        "min_impostor_distance": round(min_impostor, 6),
    }
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    (FIXTURES / "benchmark.json").write_text(text)


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    write_cascade()
    write_records()
    write_benchmark()
    print(f"fixtures written to {FIXTURES}")


if __name__ == "__main__":
    main()
