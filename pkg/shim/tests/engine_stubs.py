"""Importable stub engines for the python: engine hook tests."""


def shouty_ocr(image_path: str) -> dict:
    return {"text": image_path.upper().rsplit("/", 1)[-1], "confidence": 0.5}
