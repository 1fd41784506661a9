import json

import numpy as np
import pytest

from robust_mfc.artifacts import ArtifactMismatchError, config_hash, load_artifact, make_artifact, save_artifact
from robust_mfc.model import model_to_dict
from robust_mfc.solver import SearchConfig, solve_fixed_point


@pytest.fixture(scope="module")
def artifact(ex1_robust):
    V, P, A, rep = solve_fixed_point(ex1_robust, 3)
    cfg = {"grid_k": 3, "tol": 1e-6, "search": SearchConfig().to_dict()}
    return make_artifact(ex1_robust, cfg, V, P, A, rep)


@pytest.mark.parametrize("fmt", ["json", "binary"])
def test_round_trip(tmp_path, artifact, fmt):
    path = tmp_path / f"a.{fmt}"
    save_artifact(artifact, path, fmt)
    back = load_artifact(path)
    assert back.config_hash == artifact.config_hash
    assert np.array_equal(back.value.values, artifact.value.values)
    assert np.array_equal(back.policy.joints, artifact.policy.joints)
    assert np.array_equal(back.policy.policy_index, artifact.policy.policy_index)
    assert np.array_equal(back.adversary.table, artifact.adversary.table)
    assert back.report.iterations == artifact.report.iterations
    back.check_model(artifact.spec)
    save_artifact(back, tmp_path / f"b.{fmt}", fmt)
    assert (tmp_path / f"a.{fmt}").read_bytes() == (tmp_path / f"b.{fmt}").read_bytes()


def test_binary_header(tmp_path, artifact):
    path = tmp_path / "a.bin"
    save_artifact(artifact, path, "binary")
    raw = path.read_bytes()
    assert raw[:4] == b"RMFC"
    assert int.from_bytes(raw[4:8], "little") == 1


def test_config_hash_covers_model_and_solver(artifact):
    doc = model_to_dict(artifact.spec)
    assert config_hash(doc, artifact.solver_config) == artifact.config_hash
    assert config_hash(doc, {**artifact.solver_config, "grid_k": 4}) != artifact.config_hash


def test_tampered_artifact_rejected(tmp_path, artifact):
    path = tmp_path / "a.json"
    save_artifact(artifact, path)
    doc = json.loads(path.read_text())
    doc["solver_config"]["grid_k"] = 9
    path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactMismatchError):
        load_artifact(path)


def test_wrong_model_rejected(artifact, ex1):
    with pytest.raises(ArtifactMismatchError):
        artifact.check_model(ex1)


def test_garbage_file_rejected(tmp_path):
    path = tmp_path / "junk"
    path.write_bytes(b"\x00\x01not json")
    with pytest.raises(ArtifactMismatchError):
        load_artifact(path)
