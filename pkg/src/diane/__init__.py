"""Patient identification service: face detection and eigenface recognition
behind a SOAP endpoint, a patient record store, and a live frame relay."""

__version__ = "0.1.0"
