import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from oracles import ols_lstsq
from supten.decomp import cp_als
from supten.errors import BadSpec
from supten.metrics import r2_score
from supten.synth import SynthSpec, generate


def test_noiseless_is_exact_cp():
    x, y, truth = generate(SynthSpec(N=30, J=8, K=6, rank=3, eta=0.0, seed=1))
    assert_array_equal(x.values, truth.x_clean)
    assert_array_equal(y, truth.U @ truth.q)
    m = cp_als(x, 3, tol=1e-12, max_iter=3000)
    assert m.fit >= 1 - 1e-6


@pytest.mark.parametrize("eta", [0.1, 0.25, 0.35])
def test_noise_ratio(eta):
    x, y, truth = generate(SynthSpec(N=40, J=6, K=5, eta=eta, seed=2))
    assert np.linalg.norm(x.values - truth.x_clean) / np.linalg.norm(truth.x_clean) == pytest.approx(eta, abs=1e-12)
    assert np.linalg.norm(y - truth.y_clean) / np.linalg.norm(truth.y_clean) == pytest.approx(eta, abs=1e-12)


def test_noise_ceiling_from_true_factors():
    # regressing y on the true U recovers roughly 1 / (1 + eta^2) of its variance
    eta = 0.35
    r2 = []
    for seed in range(50):
        _, y, truth = generate(SynthSpec(eta=eta, seed=seed))
        design = np.column_stack([truth.U, np.ones(len(y))])
        r2.append(r2_score(y, design @ ols_lstsq(design, y)))
    assert np.mean(r2) == pytest.approx(1 / (1 + eta**2), abs=0.02)
    _, y0, t0 = generate(SynthSpec(eta=0.0, seed=0))
    assert r2_score(y0, t0.U @ t0.q) == 1.0


def test_same_seed_bit_identical():
    a = generate(SynthSpec(seed=11, distractor_features=3, missing_rate=0.1))
    b = generate(SynthSpec(seed=11, distractor_features=3, missing_rate=0.1))
    assert_array_equal(a[0].values, b[0].values)
    assert_array_equal(a[0].mask, b[0].mask)
    assert_array_equal(a[1], b[1])
    c = generate(SynthSpec(seed=12))
    assert not np.array_equal(a[1], c[1])


def test_y_invariant_to_joint_column_permutation_of_b_and_c():
    _, y, t = generate(SynthSpec(seed=3))
    perm = [2, 0, 1]
    # permuting B and C together (and U to match) gives the same tensor, and
    # y is built from U and q alone, so it carries no trace of B or C
    assert_allclose(
        np.einsum("nr,jr,kr->njk", t.U[:, perm], t.B[:, perm], t.C[:, perm]), t.x_clean, atol=1e-12
    )
    assert_allclose(t.y_clean, t.U[:, perm] @ t.q[perm], atol=1e-12)
    assert_array_equal(t.y_clean, t.U @ t.q)


def test_distractors_and_missing_cells():
    x, _, truth = generate(SynthSpec(N=50, J=4, K=3, distractor_features=6, missing_rate=0.2, seed=4))
    assert x.shape == (50, 10, 3)
    assert truth.informative == (0, 1, 2, 3)
    assert 0.15 < x.missing_rate < 0.25
    assert np.all(np.isnan(x.values[~x.mask]))
    full, _, _ = generate(SynthSpec(N=50, J=4, K=3, distractor_features=6, seed=4))
    slabs = np.linalg.norm(full.values, axis=(0, 2))
    assert_allclose(slabs[4:], slabs[:4].mean(), rtol=1e-12)


def test_loading_floor():
    _, _, t = generate(SynthSpec(seed=5, loading_floor=0.5))
    assert np.abs(t.B).min() >= 0.5
    assert np.abs(t.q).min() >= 0.5
    # the floor only lifts small entries, so the other draws are unchanged
    _, _, t0 = generate(SynthSpec(seed=5))
    assert_array_equal(t.U, t0.U)
    big = np.abs(t0.B) >= 0.5
    assert_array_equal(t.B[big], t0.B[big])


def test_invalid_specs():
    for bad in (dict(eta=-0.1), dict(rank=0), dict(rank=16), dict(distractor_features=-1),
                dict(missing_rate=1.0), dict(N=0), dict(loading_floor=-1.0)):
        with pytest.raises(BadSpec):
            generate(SynthSpec(**bad))
