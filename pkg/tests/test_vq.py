import numpy as np
import pytest

from latentrul import vq
from latentrul.autodiff import Tensor, gather_rows


def test_quantize_picks_nearer_entry():
    codebook = np.array([[0.0, 0.0], [1.0, 1.0]])
    # squared distances: 0.02 vs 1.62
    result = vq.quantize(np.array([[0.1, 0.1]]), codebook)
    assert result.indices.tolist() == [0]


def test_quantize_exact_row_is_fixed_point():
    codebook = np.arange(8.0).reshape(4, 2)
    result = vq.quantize(codebook[3:4].copy(), codebook)
    assert result.indices.tolist() == [3]
    np.testing.assert_array_equal(result.z_q, codebook[3:4])


def test_quantize_tie_breaks_to_smaller_index():
    codebook = np.array([[0.0, 0.0], [1.0, 1.0]])
    result = vq.quantize(np.array([[0.5, 0.5]]), codebook)
    assert result.indices.tolist() == [0]


def test_quantize_idempotent(rng):
    codebook = rng.standard_normal((6, 3))
    z = rng.standard_normal((10, 3))
    once = vq.quantize(z, codebook)
    twice = vq.quantize(once.z_q, codebook)
    np.testing.assert_array_equal(once.z_q, twice.z_q)


def test_quantize_assignment_optimal_brute_force(rng):
    codebook = rng.standard_normal((9, 4))
    z = rng.standard_normal((40, 4))
    result = vq.quantize(z, codebook)
    for row, idx in zip(z, result.indices):
        chosen = ((row - codebook[idx]) ** 2).sum()
        for other in codebook:
            assert chosen <= ((row - other) ** 2).sum() + 1e-15


def test_quantize_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        vq.quantize(rng.standard_normal((4, 3)), rng.standard_normal((5, 2)))


def test_quantize_batched_indices_shape(rng):
    codebook = rng.standard_normal((5, 3))
    z = rng.standard_normal((2, 4, 3))
    result = vq.quantize(z, codebook)
    assert result.indices.shape == (2, 4)
    np.testing.assert_array_equal(result.z_q, codebook[result.indices])


# ----- loss ------------------------------------------------------------------


def test_vq_loss_zero_when_everything_matches():
    z = np.ones((2, 3))
    total, parts = vq.vq_loss(Tensor(5.0), 5.0, Tensor(z), Tensor(z.copy()), beta=0.25)
    assert float(total.data) == 0.0
    assert parts == {"task": 0.0, "codebook": 0.0, "commitment": 0.0}


def test_vq_loss_beta_zero_drops_commitment(rng):
    z_e = Tensor(rng.standard_normal((2, 3)))
    z_q = Tensor(rng.standard_normal((2, 3)))
    total, parts = vq.vq_loss(Tensor(1.0), 1.0, z_e, z_q, beta=0.0)
    assert parts["commitment"] == 0.0
    assert float(total.data) == pytest.approx(parts["codebook"], abs=1e-15)


def test_vq_loss_unit_offset_example():
    # z_e differs from the selected embedding by a single 1 in one coordinate:
    # codebook term contributes 1, commitment contributes beta * 1
    z_q = np.zeros((1, 4))
    z_e = z_q.copy()
    z_e[0, 0] = 1.0
    total, parts = vq.vq_loss(Tensor(80.0), 80.0, Tensor(z_e), Tensor(z_q), beta=0.25)
    assert float(total.data) == pytest.approx(1.25, abs=1e-12)
    assert parts["task"] == 0.0
    assert parts["codebook"] == pytest.approx(1.0, abs=1e-12)
    assert parts["commitment"] == pytest.approx(0.25, abs=1e-12)


def test_vq_loss_decomposition(rng):
    pred = Tensor(rng.standard_normal(4))
    target = rng.standard_normal(4)
    z_e = Tensor(rng.standard_normal((4, 3, 2)))
    z_q = Tensor(rng.standard_normal((4, 3, 2)))
    total, parts = vq.vq_loss(pred, target, z_e, z_q, beta=0.7)
    assert float(total.data) == pytest.approx(sum(parts.values()), abs=1e-12)


def test_vq_loss_gradient_routing(rng):
    """Codebook moves only through the codebook term; the encoder only through
    task and commitment."""
    codebook = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    z_e = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    idx = vq.nearest_indices(z_e.data, codebook.data)
    z_q_rows = gather_rows(codebook, idx)

    # task term via straight-through: no codebook gradient at all
    st = vq.straight_through(z_e, z_q_rows)
    (st * Tensor(rng.standard_normal((4, 3)))).sum().backward()
    assert codebook.grad is None
    assert z_e.grad is not None

    # codebook term: gradient reaches the codebook, never z_e
    z_e.grad = None
    from latentrul.autodiff import square, tsum
    tsum(square(z_e.detach() - z_q_rows)).backward()
    assert z_e.grad is None
    assert np.abs(codebook.grad).sum() > 0

    # commitment term: gradient reaches z_e, never the codebook
    codebook.grad = None
    tsum(square(z_e - z_q_rows.detach())).backward()
    assert codebook.grad is None
    assert np.abs(z_e.grad).sum() > 0


def test_vq_loss_rejects_negative_beta(rng):
    z = Tensor(rng.standard_normal((2, 2)))
    with pytest.raises(ValueError):
        vq.vq_loss(Tensor(0.0), 0.0, z, z, beta=-0.1)


def test_init_codebook_range_and_determinism():
    a = vq.init_codebook(8, 4, np.random.default_rng(3))
    b = vq.init_codebook(8, 4, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    assert np.all(np.abs(a) <= 1.0 / 8)
    with pytest.raises(ValueError):
        vq.init_codebook(1, 4, np.random.default_rng(0))
