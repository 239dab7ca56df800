import json
import math
from pathlib import Path

import numpy as np
import pytest

import schemadapt as sa

EXAMPLES = Path(__file__).resolve().parents[2] / "data" / "examples"


def test_statement_and_encoding():
    schema = (EXAMPLES / "sex_schema.json").read_text()
    assert sa.build_statement(schema, "SEX", "Female") == "Gender of the subject: Female"
    rows = sa.encode(schema, (EXAMPLES / "sex.csv").read_text())
    texts = [t for r in rows for t in r["statements"]]
    assert "Gender of the subject: Female" in texts
    for r in rows:
        assert r["tokens"].shape == (len(r["statements"]), 64)


def test_numeric_token_scales_description():
    schema = (EXAMPLES / "sex_schema.json").read_text()
    assert sa.normalize_value(87.0, 72.0, 60.0) == pytest.approx(1.25)
    rows = sa.encode(schema, (EXAMPLES / "sex.csv").read_text())
    norms = [np.linalg.norm(t) for r in rows for s, t in zip(r["statements"], r["tokens"]) if s.startswith("Gender")]
    assert norms and all(abs(n - 1.0) < 1e-12 for n in norms)


def test_mgda_pinned_instance():
    out = sa.mgda_solve(np.array([[2.0, 0.0], [0.0, 1.0]]))
    assert out["alpha"] == pytest.approx([0.2, 0.8], abs=1e-9)
    assert out["kkt_violation"] <= 1e-6
    assert sa.two_task_alpha([2.0, 0.0], [0.0, 1.0]) == pytest.approx(0.2)


def test_mgda_kkt_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = rng.normal(size=(int(rng.integers(2, 10)), 50))
        out = sa.mgda_solve(g)
        gbar = np.asarray(out["combined"]).ravel()
        assert np.all(g @ gbar >= gbar @ gbar - 1e-6)


def test_metric_fixture_3x1():
    p = np.array([[0.2], [0.6], [0.9]])
    y = np.array([[0], [1], [0]])
    r = sa.metric_report(p, y, ["A"])
    assert r["macro"]["auroc"] == pytest.approx(0.5, abs=1e-12)
    assert r["labels"][0]["auc_pr"] == pytest.approx(0.25, abs=1e-12)
    assert sa.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)


def test_focal_reduces_to_bce():
    for p in (0.1, 0.5, 0.93):
        for y in (0, 1):
            bce = -(y * math.log(p) + (1 - y) * math.log(1 - p))
            assert sa.focal_loss(p, y, 1.0, 0.0) == pytest.approx(bce, abs=1e-12)


def test_synth_gen_and_config(tmp_path):
    probe = sa.synth_gen(str(tmp_path), seed=1, n_source=300, n_target=50, n_features=6, labels=2)
    assert probe > 0.7
    assert (tmp_path / "target_schema.json").exists()
    schema = json.loads((tmp_path / "source_schema.json").read_text())
    assert len(schema["columns"]) == 6
    cfg = sa.desk_config(2)
    assert cfg["model"]["num_labels"] == 2


def test_errors_map_to_python():
    with pytest.raises(sa.ValidationError):
        sa.build_statement("{}", "SEX", "Female")
    with pytest.raises(sa.SchemadaptError):
        sa.mgda_solve(np.array([[np.nan, 1.0], [0.0, 1.0]]))
