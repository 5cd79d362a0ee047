"""Serialization: complex tensors (binary and JSON), scenario config files
and fixed-precision CSV.

Binary tensor layout: a header of three little-endian uint64 giving the
shape, then the elements in C order as little-endian float64 pairs
``(re, im)``.  JSON layout: ``{"shape": [...], "re": [...], "im": [...]}``
with flattened C-order parts.
"""

from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path

import numpy as np

from .array import PhasedArray
from .channel import CirMatrix, Motion, Node, OfdmConfig, Scatterer, Scene
from .sim import ConfigError, ScenarioConfig

_HEADER = np.dtype("<u8")
_BODY = np.dtype("<f8")


def fmt(x) -> str:
    """Float text at 9 significant digits; other values unchanged."""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    return "" if x is None else str(x)


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _shape3(shape) -> tuple[int, int, int]:
    if len(shape) > 3:
        raise ValueError("tensors of rank > 3 are not supported")
    return tuple(shape) + (1,) * (3 - len(shape))


def tensor_to_bytes(x) -> bytes:
    """Encode a complex tensor of rank <= 3 (lower ranks pad with 1s)."""
    x = np.asarray(x, dtype=complex)
    head = np.array(_shape3(x.shape), dtype=_HEADER).tobytes()
    body = np.ascontiguousarray(x).view(np.float64).astype(_BODY).tobytes()
    return head + body


def tensor_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 24:
        raise ValueError("truncated header")
    shape = tuple(int(v) for v in np.frombuffer(data[:24], dtype=_HEADER))
    body = np.frombuffer(data[24:], dtype=_BODY)
    if body.size != 2 * int(np.prod(shape)):
        raise ValueError(f"body holds {body.size // 2} elements, header says {shape}")
    return body.astype(np.float64).view(np.complex128).reshape(shape).copy()


def tensor_to_json(x) -> str:
    x = np.asarray(x, dtype=complex)
    return json.dumps({"shape": list(x.shape), "re": x.real.ravel().tolist(), "im": x.imag.ravel().tolist()})


def tensor_from_json(text: str) -> np.ndarray:
    d = json.loads(text)
    re, im = np.asarray(d["re"], float), np.asarray(d["im"], float)
    if re.shape != im.shape or re.size != int(np.prod(d["shape"])):
        raise ValueError("re/im lengths do not match the shape")
    return (re + 1j * im).reshape(d["shape"])


def save_cir(cir: CirMatrix, path) -> None:
    """CIR matrix as a binary tensor ``[n_taps, n_packets, 1]`` plus a JSON
    sidecar with the tap duration and packet interval."""
    path = Path(path)
    path.write_bytes(tensor_to_bytes(cir.taps))
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps({"tap_duration": cir.tap_duration, "packet_interval": cir.packet_interval})
    )


def load_cir(path) -> CirMatrix:
    path = Path(path)
    taps = tensor_from_bytes(path.read_bytes())[:, :, 0]
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return CirMatrix(taps, meta["tap_duration"], meta["packet_interval"])


# ---------------------------------------------------------------------------
# scenario config files (JSON)
# ---------------------------------------------------------------------------


def _node(d: dict, default_name: str) -> Node:
    arr = PhasedArray(int(d.get("elements", 16)), phase_bits=int(d.get("phase_bits", 4)),
                      amp_bits=int(d.get("amp_bits", 4)))
    return Node(d.get("name", default_name), tuple(d["position"]), arr,
                int(d.get("n_chains", 1)), float(d.get("heading", 0.0)))


def _subject(d: dict, i: int) -> Scatterer:
    m = d.get("motion", {})
    motion = Motion(
        m.get("kind", "static"), tuple(m.get("velocity", (0.0, 0.0))), float(m.get("amplitude", 0.0)),
        float(m.get("frequency", 0.0)), tuple(m.get("direction", (1.0, 0.0))), float(m.get("phase", 0.0)),
    )
    return Scatterer(tuple(d["position"]), float(d.get("rcs", 1.0)), motion, d.get("name", f"subject{i}"))


def scene_from_dict(d: dict) -> Scene:
    return Scene(
        [_node(a, f"ap{i}") for i, a in enumerate(d.get("aps", []))],
        [_node(u, f"ue{i}") for i, u in enumerate(d.get("ues", []))],
        [_subject(s, i) for i, s in enumerate(d.get("subjects", []))],
    )


def scene_to_dict(scene: Scene) -> dict:
    def node(n: Node):
        return {"name": n.name, "position": list(n.position), "elements": n.array.element_count,
                "heading": n.heading, "n_chains": n.n_chains,
                "phase_bits": n.array.phase_bits, "amp_bits": n.array.amp_bits}

    def subj(s: Scatterer):
        m = s.motion
        return {"name": s.name, "position": list(s.position), "rcs": s.rcs,
                "motion": {"kind": m.kind, "velocity": list(m.velocity), "amplitude": m.amplitude,
                           "frequency": m.frequency, "direction": list(m.direction), "phase": m.phase}}

    return {"aps": [node(a) for a in scene.aps], "ues": [node(u) for u in scene.ues],
            "subjects": [subj(s) for s in scene.subjects]}


CONFIG_KEYS = (
    "codebook_size", "slot_duration", "duration", "scheduler", "seed", "tx_power_dbm", "task",
    "k_factor", "efficiency", "interference_margin_db", "cancel", "nulling_iters", "adc_enob",
    "ue_counts", "ap_counts", "trials",
)


def config_from_dict(d: dict, *, seed=None):
    """Build a :class:`~mmisac.sim.ScenarioConfig`; unknown keys and every
    invalid field are reported together as a ``ConfigError``."""
    problems = [f"unknown key {k!r}" for k in d if k not in CONFIG_KEYS + ("scene", "ofdm")]
    if seed is not None:
        d = {**d, "seed": seed}
    if "seed" not in d:
        problems.append("seed is required (config key or --seed)")
    kwargs = {k: d[k] for k in CONFIG_KEYS if k in d}
    for k in ("ue_counts", "ap_counts"):
        if k in kwargs:
            kwargs[k] = tuple(kwargs[k])
    try:
        kwargs["scene"] = scene_from_dict(d.get("scene", {}))
    except (KeyError, TypeError, ValueError) as exc:
        problems.append(f"scene: {exc}")
        kwargs["scene"] = Scene([])
    try:
        kwargs["ofdm"] = OfdmConfig(**d.get("ofdm", {"n_subcarriers": 128}))
    except (TypeError, ValueError) as exc:
        problems.append(f"ofdm: {exc}")
        kwargs["ofdm"] = OfdmConfig(n_subcarriers=128)
    try:
        cfg = ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(problems + [str(exc)]) from None
    problems += cfg.problems()
    if problems:
        raise ConfigError(problems)
    return cfg


def config_to_dict(cfg) -> dict:
    d = {k: getattr(cfg, k) for k in CONFIG_KEYS}
    d["ue_counts"], d["ap_counts"] = list(cfg.ue_counts), list(cfg.ap_counts)
    d["scene"] = scene_to_dict(cfg.scene)
    o = cfg.ofdm
    d["ofdm"] = {"n_subcarriers": o.n_subcarriers, "bandwidth": o.bandwidth,
                 "carrier": o.carrier, "noise_power": o.noise_power}
    return d


def load_config(path, *, seed=None):
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc})"]) from None
    if not isinstance(d, dict):
        raise ConfigError([f"{path}: top level must be an object"])
    return config_from_dict(d, seed=seed)


def read_csv(text: str) -> list[dict]:
    """Parse CSV written by :func:`csv_text` into dicts of strings."""
    return list(csv.DictReader(_io.StringIO(text)))
