"""JSON envelopes for fitted models.

Every file is one object::

    {"format": "logreg/1" | "nb/1" | "mp/1",
     "m_count": <int>,
     "payload": {...},
     "checksum": "<sha256 hex of the canonical payload>"}

The canonical payload is ``json.dumps(payload, sort_keys=True,
separators=(",", ":"))`` in UTF-8. Integer counters are stored for NB and MP
and the float tables are rebuilt on load. LR weights are written with
``repr``, which round-trips every double exactly.
"""

from __future__ import annotations

import hashlib
import json
from fractions import Fraction
from pathlib import Path
from typing import Union

import numpy as np

from . import naive_bayes
from .logreg import LogRegModel, SolverConfig
from .max_precision import MpCounters, MpModel, as_threshold
from .naive_bayes import NbCounters, NbModel

Model = Union[LogRegModel, NbModel, MpModel]

LOGREG_FORMAT = "logreg/1"
NB_FORMAT = "nb/1"
MP_FORMAT = "mp/1"


class ModelFormatError(ValueError):
    pass


def canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def checksum(payload: dict) -> str:
    return hashlib.sha256(canonical(payload)).hexdigest()


def _payload(model: Model) -> tuple[str, dict]:
    if isinstance(model, LogRegModel):
        cfg = model.solver_config
        return LOGREG_FORMAT, {
            "intercept": cfg.intercept,
            "weights": [float(w) for w in model.weights],
            "solver": {
                "ridge_lambda": cfg.ridge_lambda,
                "max_iterations": cfg.max_iterations,
                "tolerance": cfg.tolerance,
                "damping": cfg.damping,
            },
        }
    if isinstance(model, NbModel):
        c = model.counters
        return NB_FORMAT, {"n_km": c.n_km.tolist(), "class_totals": c.class_totals.tolist()}
    if isinstance(model, MpModel):
        c = model.counters
        return MP_FORMAT, {
            "t": c.t.tolist(),
            "f": c.f.tolist(),
            "threshold": f"{model.threshold.numerator}/{model.threshold.denominator}",
            "corrected": model.corrected,
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def dumps(model: Model) -> bytes:
    fmt, payload = _payload(model)
    envelope = {"format": fmt, "m_count": model.m_count, "payload": payload, "checksum": checksum(payload)}
    return json.dumps(envelope, separators=(",", ":"), allow_nan=False).encode("utf-8") + b"\n"


def loads(data: bytes | str) -> Model:
    try:
        env = json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"not a model envelope: {exc}") from None
    if not isinstance(env, dict) or not {"format", "m_count", "payload", "checksum"} <= set(env):
        raise ModelFormatError("not a model envelope: missing keys")
    fmt, m_count, payload = env["format"], env["m_count"], env["payload"]
    if fmt not in (LOGREG_FORMAT, NB_FORMAT, MP_FORMAT):
        raise ModelFormatError(f"unknown model format {fmt!r}")
    if not isinstance(payload, dict) or checksum(payload) != env["checksum"]:
        raise ModelFormatError("checksum mismatch")
    if isinstance(m_count, bool) or not isinstance(m_count, int) or m_count < 1:
        raise ModelFormatError("invalid m_count")
    try:
        return _build(fmt, m_count, payload)
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"invalid {fmt} payload: {exc}") from None


def _build(fmt: str, m_count: int, p: dict) -> Model:
    if fmt == LOGREG_FORMAT:
        solver = p.get("solver", {})
        cfg = SolverConfig(intercept=bool(p["intercept"]), **solver)
        weights = np.array(p["weights"], dtype=np.float64)
        expected = m_count + (1 if cfg.intercept else 0)
        if weights.shape != (expected,):
            raise ModelFormatError(f"length mismatch: {len(weights)} weights for m_count={m_count}")
        return LogRegModel(weights, m_count, cfg)
    if fmt == NB_FORMAT:
        n_km = np.array(p["n_km"], dtype=np.int64)
        totals = np.array(p["class_totals"], dtype=np.int64)
        if n_km.shape != (2, m_count) or totals.shape != (2,):
            raise ModelFormatError("length mismatch in nb/1 counters")
        if (n_km < 0).any() or (n_km > totals[:, None]).any():
            raise ModelFormatError("nb/1 counters violate 0 <= n_km <= N_k")
        return naive_bayes.finalize(NbCounters(m_count, n_km, totals))
    t = np.array(p["t"], dtype=np.int64)
    f = np.array(p["f"], dtype=np.int64)
    if t.shape != (m_count,) or f.shape != (m_count,):
        raise ModelFormatError("length mismatch in mp/1 counters")
    threshold = as_threshold(Fraction(p["threshold"]))
    return MpModel.from_counters(MpCounters(m_count, t, f), threshold, bool(p["corrected"]))


def save(model: Model, path: str | Path) -> None:
    Path(path).write_bytes(dumps(model))


def load(path: str | Path) -> Model:
    return loads(Path(path).read_bytes())
