"""Single-file JSON persistence for trained models.

A saved model is one JSON document: a payload (format version, family,
dimensions, architecture config, standardization stats, base64-encoded
float64 parameter vector, and the fitted correlation matrix for the
constant-correlation copula) plus a sha256 checksum of the canonical
payload encoding.  Loading rebuilds the architecture and restores the
exact parameter bytes, so log-densities round-trip bit for bit.
"""

from __future__ import annotations

import base64
import dataclasses
import hashlib
import json

import numpy as np

from .models import FAMILIES, StandardStats, build_model, default_config

FORMAT_VERSION = 1


class PersistError(RuntimeError):
    """Base class for model-file problems."""


class ChecksumMismatch(PersistError):
    """Stored checksum does not match the payload (corrupt or truncated)."""


class FamilyMismatch(PersistError):
    """File holds a different model family than the caller expects."""


class FormatVersionError(PersistError):
    """File was written by an incompatible format version."""


def _encode_params(flat: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(flat, dtype="<f8").tobytes()).decode("ascii")


def _decode_params(text: str) -> np.ndarray:
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as exc:
        raise ChecksumMismatch(f"parameter block is not valid base64: {exc}") from None
    if len(raw) % 8:
        raise ChecksumMismatch("parameter block length is not a multiple of 8 bytes")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def canonical_json(obj) -> str:
    """Deterministic encoding used for checksums and config hashes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def model_payload(model) -> dict:
    cfg = dataclasses.asdict(model.config)
    payload = {
        "format_version": FORMAT_VERSION,
        "family": model.family,
        "d_x": int(model.d_x),
        "d_y": int(model.d_y),
        "config": cfg,
        "stats": {
            "x_mean": model.stats.x_mean.tolist(),
            "x_sd": model.stats.x_sd.tolist(),
            "y_mean": model.stats.y_mean.tolist(),
            "y_sd": model.stats.y_sd.tolist(),
        },
        "params": _encode_params(model.store.flat),
    }
    if model.family == "copula-const":
        payload["rho"] = model.rho_.tolist()
    return payload


def save_model(model, path) -> None:
    payload = model_payload(model)
    digest = hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()
    doc = {"checksum": digest, "payload": payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _config_from_dict(family: str, d: dict):
    cls = type(default_config(family))
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(d) - names
    if extra:
        raise PersistError(f"unknown config field(s) for {family!r}: {sorted(extra)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return cls(**kwargs)


def load_model(path, family: str | None = None):
    """Rebuild a saved model.  `family`, when given, must match the file."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        raise ChecksumMismatch(f"{path}: not a complete model document") from None
    if not isinstance(doc, dict) or "payload" not in doc or "checksum" not in doc:
        raise ChecksumMismatch(f"{path}: missing payload or checksum")
    payload = doc["payload"]
    digest = hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()
    if digest != doc["checksum"]:
        raise ChecksumMismatch(f"{path}: checksum does not match payload")

    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(
            f"{path}: format version {version!r}, this build reads {FORMAT_VERSION}")
    fam = payload.get("family")
    if fam not in FAMILIES:
        raise FamilyMismatch(f"{path}: unknown model family {fam!r}")
    if family is not None and fam != family:
        raise FamilyMismatch(f"{path}: holds {fam!r}, expected {family!r}")

    st = payload["stats"]
    stats = StandardStats(
        np.asarray(st["x_mean"], dtype=np.float64),
        np.asarray(st["x_sd"], dtype=np.float64),
        np.asarray(st["y_mean"], dtype=np.float64),
        np.asarray(st["y_sd"], dtype=np.float64),
    )
    config = _config_from_dict(fam, payload["config"])
    model = build_model(fam, int(payload["d_x"]), int(payload["d_y"]), stats,
                        config=config, seed=0)
    flat = _decode_params(payload["params"])
    if flat.size != model.store.size:
        raise PersistError(
            f"{path}: parameter count {flat.size} does not fit architecture "
            f"({model.store.size} expected)")
    model.store.flat[:] = flat
    if "rho" in payload:
        model.rho_ = np.asarray(payload["rho"], dtype=np.float64)
    return model
