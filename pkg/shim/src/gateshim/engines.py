"""Inference engines behind the shim, selected per op by a spec string.

Engine specs:

    sidecar:<suffix>      detectors: read YOLO label lines from the image's
                          sidecar file (image stem + suffix); face_embed: read
                          one float per line from the sidecar
    fixed:<text>[:conf]   ocr: always return <text> at the given confidence
    fixed:<v0,v1,...>     face_embed: always return this vector
    table:<path>          lookup file: "<image basename> <payload>" per line;
                          detectors take YOLO coords, ocr takes "text conf",
                          face_embed takes the vector values
    python:<mod>:<attr>   import hook for real engines; the attribute must be
                          a callable (image_path) -> raw op payload

Model artifacts (table paths, python imports) are resolved at startup so a
misconfigured engine fails the server start, not the first request. Raw
engine outputs are validated and clamped into protocol ranges; a vector of
the wrong dimension is an inference error rather than a protocol violation.
"""

from __future__ import annotations

import importlib
from pathlib import Path

from .protocol import clamp, clamp_detection

DETECT_OPS = ("detect_vehicle", "detect_plate")


class EngineError(RuntimeError):
    """Inference failed for one request (reported as code INFERENCE)."""


class EngineLoadError(RuntimeError):
    """The engine cannot be constructed at startup."""


def _parse_label_lines(text: str, source: str) -> list[dict]:
    detections = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 5:
            raise EngineError(f"{source}:{lineno}: expected 5 label fields")
        try:
            detections.append(clamp_detection({
                "class_id": int(fields[0]),
                "confidence": 1.0,
                "cx": float(fields[1]),
                "cy": float(fields[2]),
                "w": float(fields[3]),
                "h": float(fields[4]),
            }))
        except ValueError as exc:
            raise EngineError(f"{source}:{lineno}: {exc}") from None
    return detections


class SidecarDetector:
    def __init__(self, suffix: str, root: Path | None):
        if not suffix.startswith("."):
            raise EngineLoadError(f"sidecar suffix must start with '.': {suffix!r}")
        self.suffix = suffix
        self.root = root

    def _resolve(self, image: str) -> Path:
        path = Path(image)
        if not path.is_absolute() and self.root is not None:
            path = self.root / path
        return path.with_suffix(self.suffix)

    def __call__(self, image: str) -> dict:
        sidecar = self._resolve(image)
        if not sidecar.exists():
            raise EngineError(f"missing sidecar {sidecar}")
        return {"detections": _parse_label_lines(sidecar.read_text(), str(sidecar))}


class SidecarEmbedder:
    def __init__(self, suffix: str, root: Path | None, dim: int | None):
        if not suffix.startswith("."):
            raise EngineLoadError(f"sidecar suffix must start with '.': {suffix!r}")
        self.suffix = suffix
        self.root = root
        self.dim = dim

    def __call__(self, image: str) -> dict:
        path = Path(image)
        if not path.is_absolute() and self.root is not None:
            path = self.root / path
        sidecar = path.with_suffix(self.suffix)
        if not sidecar.exists():
            raise EngineError(f"missing sidecar {sidecar}")
        try:
            values = [float(v) for v in sidecar.read_text().split()]
        except ValueError as exc:
            raise EngineError(f"{sidecar}: {exc}") from None
        return {"embedding": _check_dim(values, self.dim)}


def _check_dim(values: list[float], dim: int | None) -> list[float]:
    if not values:
        raise EngineError("empty embedding")
    if dim is not None and len(values) != dim:
        raise EngineError(f"embedding dimension {len(values)} != configured {dim}")
    return values


class FixedOcr:
    def __init__(self, text: str, confidence: float = 1.0):
        self.text = text
        self.confidence = clamp(confidence, 0.0, 1.0)

    def __call__(self, image: str) -> dict:
        return {"text": self.text, "confidence": self.confidence}


class FixedEmbedder:
    def __init__(self, values: list[float], dim: int | None):
        self.values = _check_dim(values, dim)

    def __call__(self, image: str) -> dict:
        return {"embedding": list(self.values)}


class TableEngine:
    """Canned per-image outputs from a lookup file (a tiny 'model artifact')."""

    def __init__(self, path: Path, op: str, dim: int | None):
        if not Path(path).exists():
            raise EngineLoadError(f"table file not found: {path}")
        self.op = op
        self.dim = dim
        self.rows: dict[str, str] = {}
        for line in Path(path).read_text().splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            key, _, payload = line.partition(" ")
            self.rows[key] = payload.strip()

    def __call__(self, image: str) -> dict:
        key = Path(image).name
        if key not in self.rows:
            raise EngineError(f"no table entry for {key}")
        payload = self.rows[key]
        if self.op in DETECT_OPS:
            return {"detections": _parse_label_lines(payload, key)}
        if self.op == "ocr":
            fields = payload.split()
            conf = float(fields[1]) if len(fields) > 1 else 1.0
            return {"text": fields[0] if fields else "",
                    "confidence": clamp(conf, 0.0, 1.0)}
        values = [float(v) for v in payload.split()]
        return {"embedding": _check_dim(values, self.dim)}


class PythonEngine:
    """Deployment hook for real engines: python:<module>:<attribute>."""

    def __init__(self, target: str, op: str, dim: int | None):
        module_name, _, attr = target.partition(":")
        if not module_name or not attr:
            raise EngineLoadError(f"python engine needs module:attribute, got {target!r}")
        try:
            module = importlib.import_module(module_name)
            self.fn = getattr(module, attr)
        except (ImportError, AttributeError) as exc:
            raise EngineLoadError(f"cannot load python engine {target!r}: {exc}") from exc
        if not callable(self.fn):
            raise EngineLoadError(f"python engine {target!r} is not callable")
        self.op = op
        self.dim = dim

    def __call__(self, image: str) -> dict:
        try:
            raw = self.fn(image)
        except Exception as exc:
            raise EngineError(f"engine raised: {exc}") from exc
        return normalize_payload(self.op, raw, self.dim)


def normalize_payload(op: str, raw, dim: int | None) -> dict:
    """Validate and clamp whatever an engine returned into the protocol shape."""
    try:
        if op in DETECT_OPS:
            dets = raw["detections"] if isinstance(raw, dict) else raw
            return {"detections": [clamp_detection(d) for d in dets]}
        if op == "ocr":
            return {"text": str(raw["text"]),
                    "confidence": clamp(raw.get("confidence", 1.0), 0.0, 1.0)}
        if op == "face_embed":
            values = raw["embedding"] if isinstance(raw, dict) else raw
            return {"embedding": _check_dim([float(v) for v in values], dim)}
    except EngineError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise EngineError(f"malformed engine output for {op}: {exc}") from None
    raise EngineError(f"unknown op {op!r}")


def build_engine(op: str, spec: str, root: Path | None, dim: int | None):
    kind, _, rest = spec.partition(":")
    if kind == "sidecar":
        if op in DETECT_OPS:
            return SidecarDetector(rest, root)
        if op == "face_embed":
            return SidecarEmbedder(rest, root, dim)
        raise EngineLoadError(f"sidecar engine does not support {op}")
    if kind == "fixed":
        if op == "ocr":
            text, _, conf = rest.partition(":")
            return FixedOcr(text, float(conf) if conf else 1.0)
        if op == "face_embed":
            try:
                values = [float(v) for v in rest.split(",")]
            except ValueError as exc:
                raise EngineLoadError(f"bad fixed vector {rest!r}: {exc}") from None
            return FixedEmbedder(values, dim)
        raise EngineLoadError(f"fixed engine does not support {op}")
    if kind == "table":
        path = Path(rest)
        if root is not None and not path.is_absolute():
            path = root / path
        return TableEngine(path, op, dim)
    if kind == "python":
        return PythonEngine(rest, op, dim)
    raise EngineLoadError(f"unknown engine kind {kind!r} for {op}")
