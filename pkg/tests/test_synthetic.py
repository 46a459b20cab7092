import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import pdist

from invariot.core import InvalidInputError, InvarianceBall, LinearMap
from invariot.solver import SolverConfig
from invariot.synthetic import (
    CSV_FIELDS,
    extract_matching,
    generate_instance,
    map_recovery_error,
    matching_accuracy,
    parse_method,
    run_method,
    run_noise_sweep,
)

INF3 = InvarianceBall("inf", 3)


def bench_cfg(restarts=128):
    return SolverConfig(ball=INF3, restarts=restarts)


class TestGenerateInstance:
    def test_isometry(self):
        inst = generate_instance(3, 50, INF3, 0.0, seed=0)
        D_src = pdist(inst.source.data.T)
        T = inst.target.data[:, inst.planted_matching]
        np.testing.assert_allclose(pdist(T.T), D_src, atol=1e-9)
        P = inst.planted_map.matrix
        np.testing.assert_allclose(P.T @ P, np.eye(3), atol=1e-12)

    def test_identity_map_is_permutation(self):
        inst = generate_instance(3, 20, INF3, 0.0, seed=4, identity_map=True)
        np.testing.assert_array_equal(inst.target.data[:, inst.planted_matching], inst.source.data)

    def test_with_identity_map(self):
        inst = generate_instance(3, 20, INF3, 0.1, seed=4)
        ident = inst.with_identity_map()
        np.testing.assert_allclose(ident.target.data[:, inst.planted_matching] - inst.noise[:, inst.planted_matching],
                                   inst.source.data, atol=1e-15)

    def test_noise_scale(self):
        sigma = 0.1
        inst = generate_instance(3, 100, INF3, sigma, seed=1)
        clean = generate_instance(3, 100, INF3, 0.0, seed=1)
        msd = np.mean(np.sum((inst.target.data - clean.target.data) ** 2, axis=0))
        assert msd == pytest.approx(3 * sigma**2, rel=0.2)

    def test_reconstruction(self):
        inst = generate_instance(4, 30, InvarianceBall(2, 4), 0.3, seed=2)
        T = np.empty_like(inst.source.data)
        T[:, inst.planted_matching] = inst.planted_map.matrix @ inst.source.data
        np.testing.assert_allclose(inst.target.data, T + inst.noise, atol=1e-14)
        assert inst.noise_sigma == 0.3

    def test_frobenius_family(self):
        inst = generate_instance(4, 10, InvarianceBall(2, 4), 0.0, seed=0)
        assert np.linalg.norm(inst.planted_map.matrix) == pytest.approx(2.0, abs=1e-12)

    def test_deterministic(self):
        a = generate_instance(3, 10, INF3, 0.2, seed=9)
        b = generate_instance(3, 10, INF3, 0.2, seed=9)
        assert a.target.data.tobytes() == b.target.data.tobytes()
        np.testing.assert_array_equal(a.planted_matching, b.planted_matching)

    def test_common_noise_draw(self):
        a = generate_instance(3, 10, INF3, 0.1, seed=9)
        b = generate_instance(3, 10, INF3, 0.2, seed=9)
        np.testing.assert_allclose(b.noise, 2 * a.noise, atol=1e-15)

    @pytest.mark.parametrize("args", [(0, 10, 0.0), (3, 1, 0.0), (3, 10, -0.1), (3, 10, float("nan"))])
    def test_invalid(self, args):
        d, n, s = args
        with pytest.raises(InvalidInputError):
            generate_instance(d, n, InvarianceBall("inf", max(d, 1)), s, seed=0)

    def test_family_dim_mismatch(self):
        with pytest.raises(InvalidInputError):
            generate_instance(2, 10, INF3, 0.0, seed=0)


class TestMatching:
    def test_identity(self):
        np.testing.assert_array_equal(extract_matching(np.eye(4) / 4), np.arange(4))

    def test_reversal(self):
        np.testing.assert_array_equal(extract_matching(np.eye(4)[::-1] / 4), [3, 2, 1, 0])

    def test_ties_first_index(self):
        np.testing.assert_array_equal(extract_matching(np.full((3, 4), 1 / 12)), [0, 0, 0])

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8), m=st.integers(1, 8))
    def test_column_permutation_equivariance(self, seed, n, m):
        rng = np.random.default_rng(seed)
        G = rng.random((n, m))  # continuous entries, so no ties
        sigma = rng.permutation(m)
        # column j of G moves to position sigma[j]
        Gp = np.empty_like(G)
        Gp[:, sigma] = G
        np.testing.assert_array_equal(extract_matching(Gp), sigma[extract_matching(G)])

    def test_accuracy_examples(self):
        t = np.arange(10)
        assert matching_accuracy(t, t) == 1.0
        assert matching_accuracy((t + 1) % 10, t) == 0.0
        assert matching_accuracy(np.r_[t[:5], np.zeros(5, int)], t) == 0.5

    def test_accuracy_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            matching_accuracy([0, 1], [0, 1, 2])


class TestMapError:
    def test_examples(self, rng):
        P = rng.standard_normal((3, 3))
        assert map_recovery_error(P, P) == 0.0
        assert map_recovery_error(-P, P) == pytest.approx(2.0)
        E = rng.standard_normal((3, 3))
        E *= 0.1 * np.linalg.norm(P) / np.linalg.norm(E)
        assert map_recovery_error(LinearMap(P + E, InvarianceBall(2, 3, 10.0)), P) == pytest.approx(0.1)

    def test_errors(self):
        with pytest.raises(InvalidInputError):
            map_recovery_error(np.eye(2), np.eye(3))
        with pytest.raises(InvalidInputError):
            map_recovery_error(np.eye(2), np.zeros((2, 2)))


class TestParseMethod:
    def test_names(self):
        assert parse_method("invariant", INF3) == "invariant-inf"
        assert parse_method("invariant", InvarianceBall(2, 3)) == "invariant-2"
        assert parse_method("Invariant-Infinity") == "invariant-inf"
        assert parse_method("EMD") == "emd"

    @pytest.mark.parametrize("name", ["foo", "invariant-0.5", "invariant"])
    def test_invalid(self, name):
        with pytest.raises(InvalidInputError):
            parse_method(name)


class TestRunMethod:
    def test_oracle_noiseless(self):
        inst = generate_instance(3, 100, INF3, 0.0, seed=0)
        assert run_method(inst, "oracle", bench_cfg()) == (1.0, 0.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_invariant_beats_classic(self, seed):
        inst = generate_instance(3, 100, INF3, 0.0, seed=seed)
        cfg = bench_cfg()
        acc_inv, err_inv = run_method(inst, "invariant-inf", cfg)
        acc_emd, err_emd = run_method(inst, "emd", cfg)
        acc_sk, _ = run_method(inst, "sinkhorn", cfg)
        assert acc_inv == 1.0 and err_inv < 1e-3
        assert acc_inv >= acc_emd and acc_inv >= acc_sk
        assert acc_emd < 1.0

    def test_frobenius_method(self):
        inst = generate_instance(3, 60, InvarianceBall(2, 3), 0.0, seed=3)
        acc, err = run_method(inst, "invariant-2", bench_cfg(32))
        assert 0.0 <= acc <= 1.0 and err >= 0.0

    def test_unknown(self):
        with pytest.raises(InvalidInputError):
            run_method(generate_instance(3, 10, INF3, 0.0, seed=0), "magic", bench_cfg())


@pytest.fixture(scope="module")
def sweep():
    return run_noise_sweep(3, 40, INF3, [0.0, 0.1], ["emd", "sinkhorn", "invariant", "oracle"], 2, seed=0,
                           cfg=SolverConfig(ball=INF3, restarts=16))


class TestSweep:
    def test_shape(self, sweep):
        assert len(sweep.records) == 2 * 2 * 4
        assert len(sweep.reports) == 2 * 4
        assert all(len(row) == len(CSV_FIELDS) for row in sweep.csv_rows())

    def test_report_invariants(self, sweep):
        for r in sweep.reports:
            assert 0.0 <= r.accuracy_mean <= 1.0
            assert r.accuracy_std >= 0 and r.map_error_std >= 0
            assert r.repetitions == 2
        assert sweep.report("oracle", 0.0).accuracy_mean == 1.0
        assert sweep.report("oracle", 0.0).accuracy_std == 0.0

    def test_std_population(self, sweep):
        recs = [r.accuracy for r in sweep.records if r.method == "emd" and r.sigma == 0.1]
        assert sweep.report("emd", 0.1).accuracy_std == pytest.approx(np.std(recs, ddof=0))

    def test_summary_excludes_runtime(self, sweep):
        assert "runtime" not in str(sweep.summary())

    def test_deterministic(self, sweep):
        again = run_noise_sweep(3, 40, INF3, [0.0, 0.1], ["emd", "sinkhorn", "invariant", "oracle"], 2, seed=0,
                                cfg=SolverConfig(ball=INF3, restarts=16))
        assert again.summary() == sweep.summary()

    def test_errors(self):
        with pytest.raises(InvalidInputError):
            run_noise_sweep(3, 10, INF3, [0.0], ["emd"], 0, seed=0)
        with pytest.raises(InvalidInputError):
            run_noise_sweep(3, 10, INF3, [], ["emd"], 1, seed=0)
        with pytest.raises(InvalidInputError):
            run_noise_sweep(3, 10, INF3, [0.0], [], 1, seed=0)
