import numpy as np
import pytest

from emospeech.core import AdamState, Tensor, adam_step, clip_grad_norm, finite_diff_check, matmul, noam_lr
from emospeech.errors import ContractError, DimensionError


def leaf(data):
    return Tensor(np.asarray(data, dtype=float), requires_grad=True)


def test_quadratic_is_nearly_exact(rng):
    x = leaf(rng.standard_normal((6, 1)))
    a = rng.standard_normal((6, 6))
    q = Tensor(a @ a.T)
    result = finite_diff_check(lambda: matmul(matmul(x.T, q), x).sum(), [x], max_coords=None)
    assert result.max_rel_error < 1e-9


def test_corrupted_gradient_is_flagged(rng):
    x = leaf(rng.standard_normal(5))
    result = finite_diff_check(lambda: (x * x * x).sum(), [x], corrupt=(0, 2))
    assert result.max_rel_error > 0.05
    assert result.worst_index == 2


def test_corrupt_none_picks_largest_entry(rng):
    x = leaf(np.array([0.1, -3.0, 0.5]))
    result = finite_diff_check(lambda: (x * x).sum(), [x], corrupt=(0, None))
    assert result.worst_index == 1 and result.max_rel_error > 0.05


def test_non_deterministic_loss_rejected(rng):
    x = leaf(rng.standard_normal(3))
    calls = iter(range(100))

    def loss():
        return (x * x).sum() + float(next(calls))

    with pytest.raises(ContractError, match="deterministic"):
        finite_diff_check(loss, [x])


@pytest.mark.parametrize("eps", [1e-8, 1e-2])
def test_step_size_bounds(eps):
    x = leaf([1.0])
    with pytest.raises(ContractError):
        finite_diff_check(lambda: (x * x).sum(), [x], eps=eps)


def test_requires_grad_is_restored():
    x = Tensor(np.array([1.0, 2.0]))
    finite_diff_check(lambda: (x * x).sum(), [x])
    assert not x.requires_grad and x.grad is None


def test_numeric_fn_replaces_perturbed_evaluations():
    x = leaf([2.0])
    # analytic graph of x*c with c frozen at its baseline value 2
    frozen = 2.0
    live = lambda: (x * float(x.data[0])).sum()  # noqa: E731
    pinned = lambda: (x * frozen).sum()  # noqa: E731
    assert finite_diff_check(live, [x], numeric_fn=pinned).max_rel_error < 1e-9
    assert finite_diff_check(live, [x]).max_rel_error > 0.4


# -- Adam -------------------------------------------------------------------------
def test_zero_gradient_is_a_fixed_point(rng):
    p = leaf(rng.standard_normal(4))
    before = p.data.copy()
    state = AdamState.zeros_like([p])
    for _ in range(3):
        adam_step([p], [np.zeros(4)], state)
    np.testing.assert_array_equal(p.data, before)
    assert state.step_count == 3


def test_first_step_closed_form():
    p = leaf([0.0])
    state = AdamState.zeros_like([p], lr=1e-3)
    adam_step([p], [np.array([1.0])], state)
    assert p.data[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


def scripted_adam(x0, grad_fn, steps, lr, b1, b2, eps):
    x, m, v = x0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
    return x


@pytest.mark.parametrize("b1,b2", [(0.9, 0.999), (0.5, 0.9)])
def test_three_steps_match_recurrence(b1, b2):
    p = leaf([1.7])
    state = AdamState.zeros_like([p], lr=0.05, beta1=b1, beta2=b2, eps=1e-8)
    for _ in range(3):
        adam_step([p], [3.0 * p.data.copy()], state)
    expected = scripted_adam(1.7, lambda x: 3.0 * x, 3, 0.05, b1, b2, 1e-8)
    assert abs(p.data[0] - expected) < 1e-12


def test_adam_shape_mismatch():
    p = leaf(np.zeros(3))
    with pytest.raises(DimensionError):
        adam_step([p], [np.zeros(4)], AdamState.zeros_like([p]))


def test_moments_match_parameter_shapes(rng):
    params = [leaf(rng.standard_normal(s)) for s in [(2, 3), (4,)]]
    state = AdamState.zeros_like(params)
    assert [m.shape for m in state.first_moment] == [(2, 3), (4,)]
    assert [v.shape for v in state.second_moment] == [(2, 3), (4,)]


def test_clip_grad_norm_scales_in_place():
    grads = [np.array([3.0]), np.array([4.0])]
    norm = clip_grad_norm(grads, 1.0)
    assert norm == 5.0
    assert np.sqrt(sum(float(g @ g) for g in grads)) == pytest.approx(1.0)
    small = [np.array([0.3])]
    clip_grad_norm(small, 1.0)
    assert small[0][0] == 0.3


def test_noam_schedule_peaks_at_warmup():
    lrs = [noam_lr(s, 64, 400) for s in range(1, 1200)]
    assert int(np.argmax(lrs)) + 1 == 400
    assert noam_lr(400, 64, 400) == pytest.approx(64**-0.5 * 400**-0.5)
