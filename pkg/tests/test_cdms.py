import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dualcd.cdms import (
    ConceptDimCD,
    IDEmbeddingCD,
    LatentDimCD,
    PositiveMLP,
    assign_mean_baseline,
    assign_nearest_baseline,
    concept_dim_adapter,
    latent_dim_adapter,
    make_head,
    mastery,
    nearest_index,
    simplecd_interaction,
    simplecd_predict,
)

@pytest.fixture(autouse=True)
def double_precision():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


def random_q(g, n, k):
    q = (torch.rand(n, k, generator=g) < 0.4).double()
    q[torch.arange(n), torch.randint(k, (n,), generator=g)] = 1.0
    return q


class TestPositiveMLP:
    def test_negative_weights_clamped(self):
        f = PositiveMLP(3, hidden=(4,), dropout=0.0)
        with torch.no_grad():
            f.hidden[0].weight.fill_(-1.0)
        assert torch.equal(f.hidden[0].effective_weight(), torch.zeros(4, 3))

    def test_initial_weights_nonnegative(self):
        f = PositiveMLP(5)
        assert all((lin.weight >= 0).all() for lin in [*f.hidden, f.out])

    def test_width_check(self):
        with pytest.raises(ValueError):
            PositiveMLP(3)(torch.zeros(2, 4))

    def test_monotone_1000_probes(self):
        torch.manual_seed(0)
        f = PositiveMLP(6).eval()
        with torch.no_grad():
            for lin in [*f.hidden, f.out]:
                lin.weight.normal_()  # negative entries included; relu must still keep it monotone
        g = torch.Generator().manual_seed(1)
        x = torch.randn(1000, 6, generator=g)
        i = torch.randint(6, (1000,), generator=g)
        bumped = x.clone()
        bumped[torch.arange(1000), i] += torch.rand(1000, generator=g) * 2
        with torch.no_grad():
            assert (f(bumped) - f(x) >= -1e-9).all()


class TestSimpleCD:
    def test_mastery_shape_and_range(self):
        m = mastery(torch.randn(3, 4), torch.randn(5, 4))
        assert m.shape == (3, 5) and ((m > 0) & (m < 1)).all()

    def test_all_zero_q_row(self):
        f = PositiveMLP(2)
        with pytest.raises(ValueError):
            simplecd_predict(torch.zeros(1, 3), torch.zeros(1, 3), torch.zeros(2, 3), torch.zeros(1, 2), f)

    def test_monotone_in_masked_mastery(self):
        torch.manual_seed(0)
        k = 5
        f = PositiveMLP(k).eval()
        g = torch.Generator().manual_seed(2)
        q = random_q(g, 1000, k)
        mas_s, mas_e = torch.rand(1000, k, generator=g), torch.rand(1000, k, generator=g)
        coord = torch.multinomial(q, 1, generator=g).squeeze(1)
        up = mas_s.clone()
        up[torch.arange(1000), coord] = torch.minimum(up[torch.arange(1000), coord] + 0.3, torch.ones(1000))
        with torch.no_grad():
            assert (simplecd_interaction(up, mas_e, q, f) - simplecd_interaction(mas_s, mas_e, q, f) >= -1e-9).all()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_q_masked_out_concepts_ignored(self, seed):
        g = torch.Generator().manual_seed(seed)
        torch.manual_seed(seed)
        k = 4
        f = PositiveMLP(k, hidden=(8, 4)).eval()
        hs, he, hc = torch.randn(3, 6, generator=g), torch.randn(3, 6, generator=g), torch.randn(k, 6, generator=g)
        q = torch.tensor([[1.0, 0, 0, 0]] * 3)
        hc2 = hc.clone()
        hc2[1:] = torch.randn(k - 1, 6, generator=g)
        with torch.no_grad():
            assert torch.allclose(simplecd_predict(hs, he, hc, q, f), simplecd_predict(hs, he, hc2, q, f), atol=0)

    def test_gradcheck_100_points(self):
        torch.manual_seed(0)
        f = PositiveMLP(3, hidden=(6, 4)).eval()
        g = torch.Generator().manual_seed(4)
        for _ in range(100):
            args = [torch.randn(*s, generator=g, requires_grad=True) for s in ((2, 4), (2, 4), (3, 4))]
            q = random_q(g, 2, 3)
            assert torch.autograd.gradcheck(lambda a, b, c: simplecd_predict(a, b, c, q, f), args,
                                            eps=1e-5, atol=1e-8, rtol=1e-4)


class TestOtherHeads:
    def test_concept_dim_shape_check(self):
        f = PositiveMLP(3)
        with pytest.raises(ValueError):
            concept_dim_adapter(torch.zeros(1, 4), torch.zeros(1, 4), torch.ones(1, 3), f)

    def test_concept_dim_mastery_is_transform(self):
        head = ConceptDimCD(4, 3).eval()
        hs = torch.randn(2, 4)
        expect = torch.sigmoid(head.transform(hs, "student"))
        assert torch.equal(head.mastery(hs, torch.zeros(3, 4)), expect)

    def test_latent_reference_forward(self):
        torch.manual_seed(0)
        d, k = 4, 3
        head = LatentDimCD(d, k, hidden=(5,)).eval()
        hs, he, hc = torch.randn(2, d), torch.randn(2, d), torch.randn(k, d)
        q = torch.tensor([[1.0, 0, 1], [0, 1, 0]])
        out = latent_dim_adapter(hs, he, hc, q, head)
        for i in range(2):
            stat = torch.stack([torch.sigmoid(head.stat_full(hs[i] * hc[c])).squeeze() for c in range(k)])
            kd = torch.stack([torch.sigmoid(head.k_diff_full(he[i] * hc[c])).squeeze() for c in range(k)])
            disc = torch.sigmoid(head.e_disc(he[i])).squeeze()
            assert torch.allclose(out[i], head.f((disc * (stat - kd) * q[i]).unsqueeze(0))[0], atol=1e-12)

    def test_latent_width_check(self):
        with pytest.raises(ValueError):
            LatentDimCD(4, 2)(torch.zeros(1, 3), torch.zeros(1, 4), torch.zeros(2, 4), torch.ones(1, 2))

    def test_make_head(self):
        for name in ("simplecd", "concept_dim", "latent_dim"):
            assert make_head(name, 4, 3) is not None
        with pytest.raises(ValueError):
            make_head("irt", 4, 3)


class TestBaselines:
    def test_mean(self):
        assert assign_mean_baseline([[0.0, 2.0], [2.0, 4.0]]).tolist() == [1.0, 3.0]
        with pytest.raises(ValueError):
            assign_mean_baseline(np.zeros((0, 2)))

    def test_nearest_ties_take_lowest_index(self):
        obs = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
        assert nearest_index([3.0, 0.0], obs) == 0

    def test_nearest_zero_norm(self):
        obs = np.array([[1.0, 0.0]])
        assert nearest_index([0.0, 0.0], obs) == -1
        with pytest.raises(ValueError):
            nearest_index([1.0, 0.0], np.zeros((2, 2)))
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            row = assign_nearest_baseline([0.0, 0.0], obs, np.array([[5.0, 6.0]]))
        assert row.tolist() == [5.0, 6.0] and w

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.1, 100))
    def test_nearest_scale_invariant(self, seed, scale):
        rng = np.random.default_rng(seed)
        obs, u = rng.normal(size=(6, 4)), rng.normal(size=4)
        assert nearest_index(u, obs) == nearest_index(u * scale, obs * np.sqrt(scale))

    def test_id_model_assign(self):
        m = IDEmbeddingCD(3, 2, 2, d=4)
        m.assign("student", [1], np.ones((1, 4)))
        assert m.table("student")[1].tolist() == [1.0] * 4
        out = m(torch.tensor([0, 1]), torch.tensor([0, 1]), torch.ones(2, 2))
        assert out.shape == (2,)
        assert m.mastery(torch.tensor([0, 2])).shape == (2, 2)
