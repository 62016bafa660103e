import numpy as np
import pytest

from micromil.autodiff import Tensor
from micromil.gnn import GnnParams, bce_loss, forward, gcn_layer
from micromil.graph import BagGraph, build_graph


def params(d=3, hidden=4, layers=2, dropout=0.5, seed=0):
    return GnnParams.init(d, hidden, layers, dropout, np.random.default_rng(seed), dtype=np.float64)


def test_identity_layer():
    H = Tensor(np.random.default_rng(0).standard_normal((3, 3)))
    out = gcn_layer(H, Tensor(np.eye(3)), Tensor(np.eye(3)), "identity")
    np.testing.assert_array_equal(out.data, H.data)


def test_symmetric_graph_identical_rows():
    H = Tensor([[1.0, 2.0], [1.0, 2.0]])
    out = gcn_layer(H, Tensor(np.full((2, 2), 0.5)), Tensor([[1.0, -1.0], [0.5, 2.0]]))
    np.testing.assert_array_equal(out.data[0], out.data[1])


def test_hand_layer():
    H = np.array([[1.0, 2.0], [3.0, -1.0]])
    A = np.array([[0.5, 0.5], [0.5, 0.5]])
    W = np.array([[2.0], [1.0]])
    expected = np.maximum(np.array([[(0.5 * 1 + 0.5 * 3) * 2 + (0.5 * 2 + 0.5 * -1) * 1]] * 2), 0)
    out = gcn_layer(Tensor(H, dtype=np.float64), Tensor(A, dtype=np.float64), Tensor(W, dtype=np.float64))
    np.testing.assert_allclose(out.data, expected)


def test_zero_classifier_gives_half():
    p = params()
    p.classifier.data[:] = 0
    g = build_graph(Tensor(np.random.default_rng(1).standard_normal((5, 3))), noise="zero")
    assert forward(g, p, "eval").item() == 0.5


def test_eval_mode_is_bit_stable():
    p = params()
    g = build_graph(Tensor(np.random.default_rng(2).standard_normal((5, 3)), dtype=np.float64), noise="zero")
    outs = {forward(g, p, "eval").data.tobytes() for _ in range(100)}
    assert len(outs) == 1


def test_train_mode_dropout_needs_rng_and_varies():
    p = params(dropout=0.5)
    g = build_graph(Tensor(np.random.default_rng(3).standard_normal((5, 3)), dtype=np.float64), noise="zero")
    vals = {forward(g, p, "train", np.random.default_rng(i)).item() for i in range(5)}
    assert len(vals) > 1


def test_node_permutation_invariance():
    rng = np.random.default_rng(4)
    p = params()
    X = rng.standard_normal((6, 3))
    A = np.triu((rng.random((6, 6)) < 0.5).astype(float), 1)
    A = A + A.T
    from micromil.graph import normalize_adjacency
    perm = rng.permutation(6)

    def run(X, A):
        g = BagGraph(Tensor(X, dtype=np.float64), None, Tensor(A, dtype=np.float64),
                     normalize_adjacency(Tensor(A, dtype=np.float64)))
        return forward(g, p, "eval").item()

    assert run(X, A) == pytest.approx(run(X[perm], A[np.ix_(perm, perm)]), abs=1e-6)


@pytest.mark.parametrize("p,y,expected", [(0.5, 1, np.log(2)), (0.5, 0, np.log(2)), (1.0, 1, 0.0)])
def test_bce_values(p, y, expected):
    loss = bce_loss(Tensor(p, dtype=np.float64), y).item()
    assert loss == pytest.approx(expected, abs=1e-6)


def test_bce_clamps_extremes():
    assert np.isfinite(bce_loss(Tensor(0.0), 1).item())
    assert np.isfinite(bce_loss(Tensor(1.0), 0).item())
