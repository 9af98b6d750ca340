"""Corpus manifests, dataset splits, run configuration, and fingerprinting.

All randomness across the pipeline flows from one root seed through named
sub-streams (seed_for), and every artifact embeds the configuration
fingerprint so that artifacts from different runs cannot be mixed silently.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FingerprintMismatchError

SPLITS = ("train", "valid", "test")
DEFAULT_RATIOS = (0.8, 0.1, 0.1)

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "synth": {
        "n_scenes": 30,
        "scene_s": 10.0,
        "noise_floor_db": -55.0,
        "calls_per_scene": [2, 5],
        "call_types": [
            {
                "name": "short_low",
                "f0_hz": [5800.0, 6700.0],
                "duration_s": [0.35, 0.8],
                "fm_depth_hz": [50.0, 150.0],
                "fm_rate_hz": [0.5, 1.5],
                "amplitude": [0.35, 0.6],
            },
            {
                "name": "long_mid",
                "f0_hz": [6900.0, 7900.0],
                "duration_s": [1.2, 2.2],
                "fm_depth_hz": [80.0, 200.0],
                "fm_rate_hz": [0.5, 1.2],
                "amplitude": [0.35, 0.6],
            },
            {
                "name": "sweep_high",
                "f0_hz": [8100.0, 9300.0],
                "duration_s": [0.5, 1.3],
                "fm_depth_hz": [150.0, 250.0],
                "fm_rate_hz": [1.0, 1.5],
                "amplitude": [0.35, 0.6],
            },
        ],
        "phee": {
            "n_records": 24,
            "n_individuals": 4,
            "call_s": 0.9,
            "response_s": 0.9,
            "gap_s": [0.5, 6.0],
        },
    },
    "detector": {
        "energy_floor": 0.02,
        "noise_var_max": 2.0,
        "noise_density_min": 0.5,
        "noise_dur_band": [0.5, 2.0],
        "call_dur_band": [0.25, 4.0],
        "highpass_hz": 5000.0,
        "boundary_comp_s": 0.008,
    },
    "features": {"kind": "linear_fb", "n_coeffs": 13, "lo_hz": 5000.0, "hi_hz": 8000.0},
    "quantizer": {"k": 50, "minibatch": 10000, "restarts": 20},
    "ulm": {
        "backend": "ngram",
        "order": 3,
        "smoothing": {"kind": "kneser_ney", "discount": 0.75},
        "attn": {
            "layers": 2,
            "heads": 2,
            "embed": 64,
            "ffn": 256,
            "max_ctx": 512,
            "steps": 1000,
            "lr": 0.003,
            "batch": 8,
        },
    },
    "bench": {"phee_per_record": 5},
    "metrics": {"fad_embedding": "mvs", "fad_group_size": 60, "fad_clip_s": 5.5},
    "probe": {"epochs": 20, "hidden": [128, 64, 32], "lr": 0.001},
    "split": {"ratios": [0.8, 0.1, 0.1]},
    "context_grid": {"enabled": False, "windows": [None, 500, 400, 300, 200, 50], "keep_first": [0, 1, 5]},
}


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    duration_s: float
    split: str | None = None
    labels: dict = field(default_factory=dict)


def read_manifest(path) -> list[ManifestRecord]:
    records = []
    seen = set()
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj["path"] in seen:
                raise ValueError(f"duplicate manifest path {obj['path']!r}")
            seen.add(obj["path"])
            records.append(
                ManifestRecord(
                    path=obj["path"],
                    duration_s=float(obj.get("duration_s", 0.0)),
                    split=obj.get("split"),
                    labels=obj.get("labels", {}),
                )
            )
    return records


def write_manifest(path, records: list[ManifestRecord]) -> None:
    with open(path, "w") as fh:
        for r in records:
            obj = {"path": r.path, "duration_s": r.duration_s}
            if r.split:
                obj["split"] = r.split
            if r.labels:
                obj["labels"] = r.labels
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def _stratum_key(record: ManifestRecord) -> str:
    for key in ("call_type", "caller_id"):
        if key in record.labels:
            return f"{key}={record.labels[key]}"
    return ""


def split_manifest(
    records: list[ManifestRecord],
    ratios=DEFAULT_RATIOS,
    seed: int = 0,
) -> list[ManifestRecord]:
    """Deterministic stratified split into train/valid/test.

    Counts per split use largest-remainder rounding inside each stratum, so a
    10-record corpus at 80/10/10 lands exactly on 8/1/1 and per-label
    proportions stay within one record of the ratios.
    """
    ratios = tuple(float(r) for r in ratios)
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ValueError(f"ratios must be three values summing to 1, got {ratios}")
    strata: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        strata.setdefault(_stratum_key(rec), []).append(i)
    assignment: dict[int, str] = {}
    for key in sorted(strata):
        idxs = strata[key]
        rng = np.random.default_rng(seed_for(seed, f"split/{key}"))
        order = [idxs[j] for j in rng.permutation(len(idxs))]
        n = len(order)
        base = [int(np.floor(r * n)) for r in ratios]
        remainders = [r * n - b for r, b in zip(ratios, base)]
        short = n - sum(base)
        for j in np.argsort(remainders)[::-1][:short]:
            base[int(j)] += 1
        cursor = 0
        for split_name, count in zip(SPLITS, base):
            for idx in order[cursor : cursor + count]:
                assignment[idx] = split_name
            cursor += count
    return [
        ManifestRecord(r.path, r.duration_s, assignment[i], dict(r.labels))
        for i, r in enumerate(records)
    ]


# -- run configuration --------------------------------------------------------


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, override: dict | None = None) -> "RunConfig":
        data = _merge(DEFAULT_CONFIG, override or {})
        _validate(data)
        return cls(data)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                override = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(override, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(override)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def fingerprint(self) -> str:
        canonical = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def save(self, path) -> None:
        payload = dict(self.data)
        payload["_fingerprint"] = self.fingerprint()
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)


def _validate(data: dict) -> None:
    if not isinstance(data["seed"], int):
        raise ConfigError("seed must be an integer")
    if data["features"]["kind"] not in ("linear_fb", "mfcc"):
        raise ConfigError(f"unknown feature kind {data['features']['kind']!r}")
    if data["ulm"]["backend"] not in ("ngram", "attn"):
        raise ConfigError(f"unknown ulm backend {data['ulm']['backend']!r}")
    sm = data["ulm"]["smoothing"]
    if sm["kind"] not in ("kneser_ney", "add_k"):
        raise ConfigError(f"unknown smoothing kind {sm['kind']!r}")
    if data["metrics"]["fad_embedding"] not in ("mv", "mvs"):
        raise ConfigError("fad_embedding must be 'mv' or 'mvs'")
    if not 1 <= data["ulm"]["order"] <= 6:
        raise ConfigError("ulm.order must be in [1, 6]")
    k = data["quantizer"]["k"]
    if not (isinstance(k, int) and k >= 2):
        raise ConfigError("quantizer.k must be an integer >= 2")
    ratios = data["split"]["ratios"]
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("split.ratios must be three values summing to 1")


def seed_for(root_seed: int, name: str) -> int:
    """Named sub-stream seed derived from the root seed; stable across platforms."""
    digest = hashlib.sha256(f"{root_seed}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def check_fingerprint(found: str, expected: str, what: str) -> None:
    if found != expected:
        raise FingerprintMismatchError(
            f"{what} carries fingerprint {found!r} but the active config is {expected!r}; "
            "artifacts from different configurations cannot be mixed"
        )
