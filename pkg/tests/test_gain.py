import numpy as np
import pytest

from taskgain.gain import (
    UtilityRecord,
    VARIANCE_FLOOR,
    diagnostics,
    kl_diag_gauss,
    kl_full_gauss,
    mean_shift_cosine,
    predictive_variance,
    rank_records,
    read_records,
    write_records,
)
from taskgain.selection import top_k


def record(tid, kl):
    return UtilityRecord(tid, kl, 1.0, 0.0, 1.0)


def test_record_validation():
    with pytest.raises(ValueError):
        UtilityRecord("t", -1.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        UtilityRecord("t", np.nan, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        UtilityRecord("t", 0.0, -0.5, 0.0, 0.0)
    with pytest.raises(ValueError):
        UtilityRecord("t", 0.0, 0.0, 1.5, 0.0)
    ok = UtilityRecord("t", np.float64(1.0), 0.0, np.float64(0.5), 0.0)
    assert isinstance(ok.kl, float) and isinstance(ok.cosine, float)


def test_kl_zero_on_identical_ensembles():
    rng = np.random.default_rng(0)
    particles = rng.normal(size=(8, 4))
    assert kl_diag_gauss(particles, particles.copy()) == 0.0


def test_kl_closed_form_oracle():
    rng = np.random.default_rng(1)
    prior = rng.normal(size=(30, 3))
    posterior = 0.5 * rng.normal(size=(30, 3)) + 2.0

    mu_p, mu_q = prior.mean(axis=0), posterior.mean(axis=0)
    var_p = np.maximum(prior.var(axis=0, ddof=1), VARIANCE_FLOOR)
    var_q = np.maximum(posterior.var(axis=0, ddof=1), VARIANCE_FLOOR)
    oracle = np.sum(
        np.log(np.sqrt(var_p / var_q)) + (var_q + (mu_q - mu_p) ** 2) / (2 * var_p) - 0.5
    )
    assert kl_diag_gauss(prior, posterior) == pytest.approx(oracle, rel=1e-12)


def test_kl_mean_shift_term():
    # Equal variances, pure mean shift delta: KL = d * delta^2 / (2 sigma^2).
    rng = np.random.default_rng(2)
    base = rng.normal(size=(2000, 2))
    base = (base - base.mean(axis=0)) / base.std(axis=0, ddof=1)
    shifted = base + 3.0
    expected = 2 * 3.0**2 / 2.0
    assert kl_diag_gauss(base, shifted) == pytest.approx(expected, rel=1e-9)


def test_kl_variance_floor_keeps_finite():
    constant = np.ones((6, 2))
    spread = np.vstack([np.ones((5, 2)), 2 * np.ones((1, 2))])
    assert np.isfinite(kl_diag_gauss(spread, constant))
    assert np.isfinite(kl_diag_gauss(constant, spread))
    assert kl_diag_gauss(constant, constant.copy()) == 0.0


def test_kl_full_gauss():
    rng = np.random.default_rng(3)
    prior = rng.normal(size=(50, 3))
    assert kl_full_gauss(prior, prior.copy()) == pytest.approx(0.0, abs=1e-10)
    posterior = prior @ np.diag([0.5, 1.0, 2.0]) + 1.0
    assert kl_full_gauss(prior, posterior) > 0.0
    with pytest.raises(ValueError):
        kl_full_gauss(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)))


def test_predictive_variance():
    scores = np.array([[1.0], [2.0], [3.0]])
    assert predictive_variance(scores) == pytest.approx(1.0)
    vector = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 4.0]])
    expected = vector.var(axis=0, ddof=1).sum()
    assert predictive_variance(vector) == pytest.approx(expected)
    # 1-D input (and its atleast_2d row form) is a vector of scalar samples.
    assert predictive_variance(np.array([1.0, 2.0, 3.0])) == pytest.approx(1.0)
    assert predictive_variance(np.array([[1.0, 2.0]])) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        predictive_variance(np.array([4.0]))


def test_mean_shift_cosine():
    a = np.tile([1.0, 0.0], (4, 1))
    b = np.tile([2.0, 0.0], (4, 1))
    c = np.tile([0.0, 1.0], (4, 1))
    assert mean_shift_cosine(a, b) == pytest.approx(1.0)
    assert mean_shift_cosine(a, c) == pytest.approx(0.0)
    assert mean_shift_cosine(a, -b) == pytest.approx(-1.0)
    assert mean_shift_cosine(np.zeros((4, 2)), b) == 0.0


def test_diagnostics_bundle():
    rng = np.random.default_rng(4)
    prior = rng.normal(size=(10, 3)) + 5.0
    posterior = prior * 0.5
    scores = rng.normal(size=(10, 1))
    rec = diagnostics("q", prior, posterior, scores)
    assert rec.task_id == "q"
    assert rec.kl == pytest.approx(kl_diag_gauss(prior, posterior))
    assert rec.pred_var == pytest.approx(predictive_variance(scores))
    assert rec.var_sum == pytest.approx(posterior.var(axis=0, ddof=1).sum())
    full = diagnostics("q", prior, posterior, scores, full_covariance=True)
    assert full.kl == pytest.approx(kl_full_gauss(prior, posterior))


def test_ranking_and_top_k():
    # Magnitudes echo a three-way utility split seen in practice: one
    # dominant task and two minor ones.
    records = [
        record("qc", 29.08),
        record("qa", 3804.28),
        record("qb", 91.31),
        record("qd", 91.31),
    ]
    ranked = rank_records(records)
    assert [r.task_id for r in ranked] == ["qa", "qb", "qd", "qc"]
    assert [r.task_id for r in top_k(records, 1)] == ["qa"]
    assert [r.task_id for r in top_k(records, 3)] == ["qa", "qb", "qd"]
    assert top_k(records, 0) == []
    with pytest.raises(ValueError):
        top_k(records, -1)


def test_records_roundtrip(tmp_path):
    records = [
        UtilityRecord("a", 1.5, 0.25, -0.5, 3.0),
        UtilityRecord("b", 0.0, 0.0, 0.0, 0.125),
    ]
    path = tmp_path / "records.tsv"
    write_records(records, path)
    assert read_records(path) == records
    path.write_text("not\ta\theader\n")
    with pytest.raises(ValueError):
        read_records(path)
