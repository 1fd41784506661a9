"""Solver artifacts on disk.

An artifact bundles the model document, the solver configuration, the value
table, the policy and adversary tables and the solve report.  Two encodings
share one logical layout:

* JSON: a single object; arrays are nested lists.
* binary: ``RMFC`` magic, a little-endian u32 format version, a u64 header
  length, the UTF-8 JSON header, then raw little-endian array buffers whose
  names, dtypes, shapes and offsets are listed in the header.

Both carry a config hash (SHA-256 of the canonical JSON of model and solver
configuration) that downstream commands check before mixing artifacts.
Wall-clock time is deliberately left out so reruns are byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .measures import build_simplex_grid
from .model import ModelSpec, canonical_json, model_from_dict, model_hash, model_to_dict
from .solver import AdversarySelector, PolicyTable, SolveReport, ValueTable

MAGIC = b"RMFC"
FORMAT_VERSION = 1
_ARRAYS = {
    "values": "<f8",
    "joints": "<f8",
    "kernels": "<f8",
    "policy_index": "<i8",
    "adversary": "<i8",
    "uncertainty": "<f8",
}


class ArtifactMismatchError(ValueError):
    """An artifact does not belong to the model or configuration it is used with."""


def config_hash(model_doc: dict, solver_config: dict) -> str:
    payload = canonical_json({"model": model_doc, "solver": solver_config})
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class SolverArtifact:
    spec: ModelSpec
    solver_config: dict
    value: ValueTable
    policy: PolicyTable
    adversary: AdversarySelector
    report: SolveReport
    config_hash: str

    @property
    def model_hash(self) -> str:
        return model_hash(self.spec)

    def check_model(self, spec: ModelSpec) -> None:
        if model_hash(spec) != self.model_hash:
            raise ArtifactMismatchError("artifact was solved for a different model")


def make_artifact(spec: ModelSpec, solver_config: dict, value, policy, adversary, report) -> SolverArtifact:
    return SolverArtifact(spec, dict(solver_config), value, policy, adversary, report,
                          config_hash(model_to_dict(spec), solver_config))


def _payload(art: SolverArtifact) -> tuple:
    grid = art.value.grid
    meta = {
        "format_version": FORMAT_VERSION,
        "config_hash": art.config_hash,
        "model_hash": art.model_hash,
        "model": model_to_dict(art.spec),
        "solver_config": art.solver_config,
        "grid": {"labels": list(grid.space.labels), "k": grid.k, "size": len(grid)},
        "norm": art.policy.norm,
        "lipschitz_bound": art.value.lipschitz_bound,
        "report": art.report.to_dict(include_time=False),
    }
    pol = art.policy.policy_index
    arrays = {
        "values": art.value.values,
        "joints": art.policy.joints,
        "kernels": art.policy.kernels,
        "policy_index": np.full(len(grid), -1) if pol is None else pol,
        "adversary": art.adversary.table,
        "uncertainty": art.adversary.uncertainty,
    }
    return meta, {k: np.ascontiguousarray(v, dtype=_ARRAYS[k]) for k, v in arrays.items()}


def save_artifact(art: SolverArtifact, path, fmt: str = "json") -> None:
    meta, arrays = _payload(art)
    if fmt == "json":
        doc = dict(meta)
        doc["arrays"] = {k: v.tolist() for k, v in arrays.items()}
        with open(path, "w") as fh:
            fh.write(json.dumps(doc, sort_keys=True, indent=1))
            fh.write("\n")
        return
    if fmt != "binary":
        raise ValueError(f"unknown artifact format {fmt!r}")
    offset = 0
    layout = []
    for name, arr in arrays.items():
        layout.append({"name": name, "dtype": _ARRAYS[name], "shape": list(arr.shape),
                       "offset": offset, "nbytes": arr.nbytes})
        offset += arr.nbytes
    header = dict(meta)
    header["arrays"] = layout
    raw = canonical_json(header).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(raw)))
        fh.write(raw)
        for arr in arrays.values():
            fh.write(arr.tobytes())


def _read(path) -> tuple:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] == MAGIC:
        version, hlen = struct.unpack("<IQ", data[4:16])
        if version != FORMAT_VERSION:
            raise ArtifactMismatchError(f"unsupported artifact version {version}")
        header = json.loads(data[16:16 + hlen].decode())
        body = memoryview(data)[16 + hlen:]
        arrays = {}
        for item in header.pop("arrays"):
            buf = body[item["offset"]:item["offset"] + item["nbytes"]]
            arrays[item["name"]] = np.frombuffer(buf, dtype=item["dtype"]).reshape(item["shape"]).copy()
        return header, arrays
    try:
        doc = json.loads(data.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactMismatchError(f"{path}: not a solver artifact ({exc})") from None
    raw = doc.pop("arrays")
    arrays = {k: np.asarray(v, dtype=_ARRAYS[k]) for k, v in raw.items()}
    return doc, arrays


def load_artifact(path) -> SolverArtifact:
    meta, arrays = _read(path)
    if meta.get("format_version") != FORMAT_VERSION:
        raise ArtifactMismatchError("unsupported artifact version")
    expected = config_hash(meta["model"], meta["solver_config"])
    if expected != meta["config_hash"]:
        raise ArtifactMismatchError("artifact config hash does not match its contents")
    spec = model_from_dict(meta["model"])
    if model_hash(spec) != meta["model_hash"]:
        raise ArtifactMismatchError("artifact model hash does not match its model")
    grid = build_simplex_grid(spec.state_space, int(meta["grid"]["k"]))
    if len(grid) != meta["grid"]["size"] or [str(x) for x in grid.space.labels] != [str(x) for x in meta["grid"]["labels"]]:
        raise ArtifactMismatchError("artifact grid metadata is inconsistent")
    norm = meta["norm"]
    value = ValueTable(grid, arrays["values"], meta["lipschitz_bound"])
    pol_idx = arrays["policy_index"]
    policy = PolicyTable(grid, spec.action_space, arrays["joints"], arrays["kernels"],
                         None if np.all(pol_idx < 0) else pol_idx, norm)
    adversary = AdversarySelector("table", arrays["uncertainty"], table=arrays["adversary"], grid=grid, norm=norm)
    rep = dict(meta["report"])
    report = SolveReport(wall_time=float("nan"), **rep)
    return SolverArtifact(spec, meta["solver_config"], value, policy, adversary, report, meta["config_hash"])
