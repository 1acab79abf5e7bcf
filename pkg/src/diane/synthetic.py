"""Deterministic synthetic faces, frames, and the matching hand-built cascade.

The detector and recognizer are exercised against generated imagery whose
ground truth is known by construction: a schematic face (bright field,
dark eye patches, dark mouth bar) painted in base-window coordinates, a
per-subject block texture for identity, and per-image Gaussian noise.
The shipped cascade's features are aligned with the same region layout,
so window responses are hand-computable.
"""

from __future__ import annotations

import numpy as np

from .detect import BASE_WINDOW, _round_half_up
from .imaging import GrayImage, Rect

BENCHMARK_SEED = 20140515
FIXTURE_SEED = 19911991

# schematic face regions in base-window (24x24) coordinates
FACE_VALUE = 200
EYE_VALUE = 50
MOUTH_VALUE = 90
LEFT_EYE = (2, 8, 8, 8)
RIGHT_EYE = (14, 8, 8, 8)
MOUTH = (7, 17, 10, 6)

TEXTURE_GRID = 6
TEXTURE_AMPLITUDE = 32.0
NOISE_SIGMA = 8.0
FRAME_BACKGROUND = 128

# Tuned so that a planted face fires with margin while shifted, rescaled,
# flat, and background windows stay below threshold; see the detection tests.
CASCADE_TEXT = """\
# synthetic-face cascade: fires on the schematic bright-face pattern
cascade 24 24
stage 0.5
# forehead band brighter than the eye band
feature 0.20 -1 1
rect 2 0 20 8 1
rect 2 8 20 8 -1
stage 1.0
# cheeks brighter than the mouth bar
feature 0.06 -1 1
rect 2 17 5 6 1
rect 7 17 10 6 -1
rect 17 17 5 6 1
# eye patches darker than the bridge between them
feature 0.26 -1 1
rect 2 8 8 8 -1
rect 10 8 4 8 4
rect 14 8 8 8 -1
"""

ALWAYS_PASS_CASCADE = """\
cascade 24 24
stage 0.5
feature 0.0 1.0 1.0
rect 0 0 24 24 1
rect 0 0 24 24 -1
"""

NEVER_PASS_CASCADE = """\
cascade 24 24
stage 10.0
feature 0.0 -1.0 1.0
rect 0 0 24 24 1
rect 0 0 24 24 -1
"""


def subject_texture(rng: np.random.RandomState) -> np.ndarray:
    """Per-subject identity texture: a coarse grid of brightness offsets."""
    return rng.uniform(-TEXTURE_AMPLITUDE, TEXTURE_AMPLITUDE,
                       size=(TEXTURE_GRID, TEXTURE_GRID))


def _region_slice(region: tuple[int, int, int, int], size: int):
    """Scale a base-window region to a size x size face square.

    Endpoints are rounded exactly like the detector scales feature rects,
    so painted regions and scaled features coincide at every size.
    """
    x, y, w, h = region
    s = size / BASE_WINDOW
    return (slice(_round_half_up(y * s), _round_half_up((y + h) * s)),
            slice(_round_half_up(x * s), _round_half_up((x + w) * s)))


def face_square(size: int, texture: np.ndarray | None = None,
                rng: np.random.RandomState | None = None,
                noise_sigma: float = 0.0) -> np.ndarray:
    """Render the schematic face as a size x size float array in 0..255.

    The identity texture modulates only the bright field, leaving the eye
    and mouth contrast that detection relies on untouched.
    """
    face = np.full((size, size), float(FACE_VALUE))
    dark = np.zeros((size, size), dtype=bool)
    for region in (LEFT_EYE, RIGHT_EYE, MOUTH):
        dark[_region_slice(region, size)] = True
    face[_region_slice(LEFT_EYE, size)] = EYE_VALUE
    face[_region_slice(RIGHT_EYE, size)] = EYE_VALUE
    face[_region_slice(MOUTH, size)] = MOUTH_VALUE
    if texture is not None:
        g = texture.shape[0]
        cells = (np.arange(size) * g) // size
        face += np.where(dark, 0.0, texture[np.ix_(cells, cells)])
    if noise_sigma > 0.0:
        if rng is None:
            raise ValueError("noise requires an rng")
        face += rng.normal(0.0, noise_sigma, size=(size, size))
    return np.clip(face, 0, 255)


def make_face(size: int, texture: np.ndarray | None = None,
              rng: np.random.RandomState | None = None,
              noise_sigma: float = 0.0) -> GrayImage:
    """A face image filling the whole canvas."""
    return GrayImage(np.floor(face_square(size, texture, rng, noise_sigma) + 0.5))


def make_frame(frame_w: int, frame_h: int, face: GrayImage, at: Rect,
               background: int = FRAME_BACKGROUND) -> GrayImage:
    """Plant an existing face image into a constant-background frame."""
    if (face.width, face.height) != (at.w, at.h):
        raise ValueError(f"face is {face.width}x{face.height}, rect wants "
                         f"{at.w}x{at.h}")
    if at.x + at.w > frame_w or at.y + at.h > frame_h:
        raise ValueError("face rect outside frame")
    canvas = np.full((frame_h, frame_w), background, dtype=np.uint8)
    canvas[at.y : at.y + at.h, at.x : at.x + at.w] = face.pixels
    return GrayImage(canvas)


CANVAS_SEED = 1851
SOURCE_REPLICATION = 2


def flat_canvas(size: int = 64, seed: int = CANVAS_SEED) -> np.ndarray:
    """A size x size canvas whose histogram is exactly flat.

    Every gray level occupies size*size/256 pixels, so histogram
    equalization of the clean canvas is the identity map and recognition
    distances on top of it are dominated by texture, not by equalization
    distortion.
    """
    levels = size * size // 256
    if levels * 256 != size * size:
        raise ValueError("canvas area must be a multiple of 256")
    vals = np.repeat(np.arange(256), levels)
    np.random.RandomState(seed).shuffle(vals)
    return vals.reshape(size, size).astype(float)


def benchmark_subject_image(canvas: np.ndarray, texture: np.ndarray,
                            rng: np.random.RandomState,
                            noise_sigma: float = NOISE_SIGMA) -> GrayImage:
    """One benchmark image: replicated canvas + subject texture + noise.

    The source is the canvas blown up by pixel replication; downsampling
    back to the canonical raster averages each block, which keeps the flat
    histogram while attenuating the per-image noise.
    """
    rep = SOURCE_REPLICATION
    big = np.kron(canvas, np.ones((rep, rep)))
    size = big.shape[0]
    g = texture.shape[0]
    cells = (np.arange(size) * g) // size
    img = big + texture[np.ix_(cells, cells)]
    img += rng.normal(0.0, noise_sigma, size=big.shape)
    return GrayImage(np.floor(np.clip(img, 0, 255) + 0.5))


def benchmark_set(seed: int = BENCHMARK_SEED, subjects: int = 10,
                  images_per_subject: int = 3, impostors: int = 5,
                  size: int = 64):
    """Gallery and impostor probes for the recognition benchmark.

    Returns (gallery, impostor_probes): gallery is a list of
    (GrayImage, label) over `subjects` identities with `images_per_subject`
    noisy instances each; impostor_probes carries the same structure for
    identities absent from the gallery.
    """
    canvas = flat_canvas(size)
    rng = np.random.RandomState(seed)
    gallery = []
    for s in range(subjects):
        texture = subject_texture(rng)
        for _ in range(images_per_subject):
            gallery.append((benchmark_subject_image(canvas, texture, rng),
                            f"subj{s:02d}"))
    impostor_probes = []
    for s in range(impostors):
        texture = subject_texture(rng)
        for _ in range(images_per_subject):
            impostor_probes.append(
                (benchmark_subject_image(canvas, texture, rng), f"imp{s:02d}"))
    return gallery, impostor_probes


# Fixture manifest: the ground truth the shipped 10-patient store is built
# from and that tests compare against.
PATIENTS = [
    {
        "patient_id": "P001", "name": "Alya Prameswari", "gender": "female",
        "birth_date": "1987-04-12",
        "allergies": [("penicillin", "2015-06-01"), ("dust mites", "2018-02-19")],
        "immunizations": [("hepatitis B", "1987-08-01"), ("tetanus", "2012-03-15")],
        "medications": [("amlodipine 5mg", "2021-09-30")],
    },
    {
        "patient_id": "P002", "name": "Bima Nugroho", "gender": "male",
        "birth_date": "1975-11-02",
        "allergies": [("sulfonamides", "2009-10-11")],
        "immunizations": [("influenza", "2022-04-02")],
        "medications": [("metformin 500mg", "2019-01-22"), ("atorvastatin 20mg", "2020-07-08")],
    },
    {
        "patient_id": "P003", "name": "Citra Lestari", "gender": "female",
        "birth_date": "1990-01-23",
        "allergies": [],
        "immunizations": [("measles", "1991-05-19"), ("covid-19", "2021-07-12")],
        "medications": [],
    },
    {
        "patient_id": "P004", "name": "Dimas Prasetyo", "gender": "male",
        "birth_date": "1982-07-30",
        "allergies": [("latex", "2016-12-05")],
        "immunizations": [],
        "medications": [("salbutamol inhaler", "2017-03-18")],
    },
    {
        "patient_id": "P005", "name": "Eka Wulandari", "gender": "female",
        "birth_date": "1968-03-05",
        "allergies": [("aspirin", "2001-08-27"), ("shellfish", "1999-11-30")],
        "immunizations": [("tetanus", "2015-06-14")],
        "medications": [("losartan 50mg", "2018-10-09"), ("insulin glargine", "2022-02-25")],
    },
    {
        "patient_id": "P006", "name": "Fajar Hidayat", "gender": "male",
        "birth_date": "1995-09-17",
        "allergies": [],
        "immunizations": [],
        "medications": [],
    },
    {
        "patient_id": "P007", "name": "Gita Maharani", "gender": "female",
        "birth_date": "1979-12-08",
        "allergies": [("iodine contrast", "2013-04-21")],
        "immunizations": [("hepatitis A", "2005-09-02")],
        "medications": [("levothyroxine 75mcg", "2014-11-11")],
    },
    {
        "patient_id": "P008", "name": "Hendra Wijaya", "gender": "male",
        "birth_date": "1960-05-21",
        "allergies": [("ibuprofen", "2010-01-15")],
        "immunizations": [("pneumococcal", "2020-10-26"), ("influenza", "2021-04-19")],
        "medications": [("warfarin 3mg", "2011-06-07")],
    },
    {
        "patient_id": "P009", "name": "Intan Permata", "gender": "female",
        "birth_date": "1993-02-14",
        "allergies": [],
        "immunizations": [("covid-19", "2021-08-03")],
        "medications": [("cetirizine 10mg", "2023-05-29")],
    },
    {
        "patient_id": "P010", "name": "Joko Santoso", "gender": "male",
        "birth_date": "1971-08-09",
        "allergies": [("peanuts", "1984-07-22")],
        "immunizations": [("tetanus", "2009-12-01")],
        "medications": [],
    },
]

ENROLLMENT_SIZE = 48
ENROLLED_PER_PATIENT = 3


def patient_textures(seed: int = FIXTURE_SEED) -> dict[str, np.ndarray]:
    """One identity texture per fixture patient, in manifest order."""
    rng = np.random.RandomState(seed)
    return {p["patient_id"]: subject_texture(rng) for p in PATIENTS}


def fixture_images(seed: int = FIXTURE_SEED):
    """Profile portrait and enrollment rasters for every fixture patient.

    Returns {patient_id: (profile GrayImage, [enrollment GrayImage, ...])}.
    The profile is a clean portrait for the record store; enrollments carry
    per-image capture noise. Consumes the rng in manifest order so output
    is reproducible.
    """
    rng = np.random.RandomState(seed)
    out = {}
    for p in PATIENTS:
        texture = subject_texture(rng)
        profile = make_face(ENROLLMENT_SIZE, texture)
        enrolled = [make_face(ENROLLMENT_SIZE, texture, rng, NOISE_SIGMA)
                    for _ in range(ENROLLED_PER_PATIENT)]
        out[p["patient_id"]] = (profile, enrolled)
    return out
