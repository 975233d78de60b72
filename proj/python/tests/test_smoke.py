import math

import numpy as np
import pytest

import probdr

P3 = np.array([[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])


def test_soft_laplacian_rows_sum_to_zero():
    rng = np.random.default_rng(0)
    z = probdr.project_rows(rng.normal(size=(10, 4)))
    l = probdr.soft_laplacian(probdr.soft_adjacency(z, 2.0))
    assert l.shape == (10, 10)
    np.testing.assert_allclose(l.sum(axis=1), 0.0, atol=1e-12)


def test_grad_data_matches_numpy():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(8, 3))
    a = rng.normal(size=(8, 8))
    l = a + a.T
    np.testing.assert_allclose(probdr.grad_data(x, l), 2.0 * l @ x, rtol=1e-12)
    assert probdr.data_term(x, l, 0.5) == pytest.approx(np.trace(x.T @ l @ x) + 0.5 * np.trace(l))


def test_chain_closed_forms():
    u = probdr.constrained_embedding(P3, 1)
    s = 1.0 / math.sqrt(2.0)
    np.testing.assert_allclose(np.abs(u[:, 0]), [s, 0.0, s], atol=1e-12)
    x = probdr.closed_form_embedding(P3, 1, 0.5)
    np.testing.assert_allclose(np.abs(x[:, 0]), [0.5, 0.0, 0.5], atol=1e-12)


def test_block_equals_gradient_step():
    rng = np.random.default_rng(2)
    x = probdr.project_rows(rng.normal(size=(12, 4)))
    w = probdr.derivation_init(4, 2.0, 0.3, 1.0)
    l = probdr.soft_laplacian(probdr.soft_adjacency(x, 2.0, "causal"))
    out = probdr.block_forward(x, w, "causal")
    np.testing.assert_allclose(out, probdr.gd_reference_step(x, l, 0.3, 1.0, 4), atol=1e-10)


def test_experiment_init_weights():
    w = probdr.experiment_init(100, 128, 30.0, 0.4)
    assert w.w_q[0, 0] == pytest.approx(math.sqrt(3000.0))
    assert w.mode == "diffusion"
    with pytest.raises(ValueError):
        probdr.experiment_init(100, 128, 30.0, 0.6)


def test_dimred_on_blobs():
    features, labels = probdr.make_blobs(seed=0)
    states = probdr.run_dimred(features, labels)
    assert len(states) == 9
    assert states[-1].shape == (300, 128)
    assert probdr.cluster_ratio(states[-1], labels) < probdr.cluster_ratio(states[0], labels)


def test_train_lm_is_deterministic():
    corpus = probdr.synthetic_corpus(8000, seed=1)
    kw = dict(mode="diffusion", seed=3, max_iters=4, block_size=8, n_embd=16, batch_size=2,
              eval_interval=2, eval_iters=1)
    a = probdr.train_lm(corpus, **kw)
    b = probdr.train_lm(corpus, **kw)
    assert a == b
    assert [r["iter"] for r in a["records"]] == [0, 2, 4]


def test_verify_suites_pass():
    results = probdr.verify("linalg")
    assert results and all(r["passed"] for r in results)
    with pytest.raises(ValueError):
        probdr.verify("nope")


def test_shape_errors_are_value_errors():
    with pytest.raises(ValueError):
        probdr.data_term(np.zeros((3, 2)), np.eye(4), 1.0)
    with pytest.raises(ValueError):
        probdr.grad_data(np.zeros(3), np.eye(3))
