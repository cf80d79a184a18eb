import numpy as np
import pytest

from gatekit.bench import (BenchConfig, aggregate_and_report,
                           brute_force_optimal_gate, deviation_E,
                           run_multilayer_trial, run_single_layer_trial,
                           upper_bound_U)
from gatekit.gating import (GateMask, apply_gate, gate_magnitude, gate_wina,
                            sparsity_to_k, topk_mask)
from gatekit.linalg import (column_norms, gaussian_vector, kaiming_init,
                            svd_right_factor)
from gatekit.ortho import LinearChain, orthogonalize_chain
from gatekit.rng import derive_seed


def straight_line_gated_deviation(layers, x, masks):
    """Independent oracle: plain-Python gated/dense forward and deviation."""
    dense = [float(v) for v in x]
    gated = [float(v) for v in x]
    for w, mask in zip(layers, masks):
        rows, cols = w.shape
        nd = [0.0] * rows
        ng = [0.0] * rows
        for i in range(rows):
            sd = 0.0
            sg = 0.0
            for j in range(cols):
                sd += w[i, j] * dense[j]
                if mask.keep[j]:
                    sg += w[i, j] * gated[j]
            nd[i] = sd
            ng[i] = sg
        dense, gated = nd, ng
    return sum((a - b) ** 2 for a, b in zip(dense, gated)) ** 0.5


class TestRunSingleLayerTrial:
    def test_zero_sparsity_zero_deviation(self):
        for method in ("teal", "wina", "rsparse"):
            assert run_single_layer_trial(32, 32, 0.0, method, 3, True) == 0.0

    def test_invalid_sparsity(self):
        with pytest.raises(ValueError, match="sparsity"):
            run_single_layer_trial(8, 8, 1.0, "teal", 0, False)

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="method"):
            run_single_layer_trial(8, 8, 0.5, "cats", 0, False)

    def test_wina_beats_teal_per_trial_when_orthogonal(self):
        for seed in range(20):
            wina = run_single_layer_trial(64, 64, 0.5, "wina", seed, True)
            teal = run_single_layer_trial(64, 64, 0.5, "teal", seed, True)
            assert wina <= teal + 1e-12

    def test_deterministic(self):
        a = run_single_layer_trial(32, 48, 0.4, "rsparse", 7, True)
        b = run_single_layer_trial(32, 48, 0.4, "rsparse", 7, True)
        assert a == b

    def test_kaiming_input_dist_changes_scale_not_ratio(self):
        std = run_single_layer_trial(64, 64, 0.5, "teal", 3, True)
        kai = run_single_layer_trial(64, 64, 0.5, "teal", 3, True,
                                     input_dist="kaiming")
        np.testing.assert_allclose(kai, std * np.sqrt(2.0 / 64), rtol=1e-12)


class TestRunMultilayerTrial:
    def test_zero_sparsity_zero_deviation(self):
        cfg = BenchConfig(dims=(16, 16, 16), seeds=1)
        for method in ("teal", "wina", "rsparse"):
            assert run_multilayer_trial(cfg, 0.0, method, 5) == 0.0

    def test_matches_straight_line_oracle(self):
        cfg = BenchConfig(dims=(6, 6, 6), seeds=1, orthogonalize=True)
        seed = 13
        sparsity = 0.5
        got = run_multilayer_trial(cfg, sparsity, "teal", seed)

        from gatekit.bench import _chain_weights, _sample_input
        layers = _chain_weights((6, 6, 6), seed, True, "linear")
        x = _sample_input(6, seed, "standard_normal")
        masks = []
        u = x.copy()
        for w in layers:
            k = sparsity_to_k(sparsity, u.shape[0])
            g = gate_magnitude(u, k)
            masks.append(g)
            u = w @ apply_gate(u, g)
        expected = straight_line_gated_deviation(layers, x, masks)
        np.testing.assert_allclose(got, expected, rtol=1e-10)

    def test_silu_variant_runs(self):
        cfg = BenchConfig(dims=(12, 12, 12), seeds=1, activation="silu",
                          orthogonalize=True)
        dev = run_multilayer_trial(cfg, 0.5, "wina", 3)
        assert np.isfinite(dev) and dev > 0


class TestBruteForceOptimalGate:
    def test_full_keep_zero_error(self):
        w = kaiming_init(5, 5, 1)
        x = gaussian_vector(5, 2)
        mask, err = brute_force_optimal_gate(w, x, 5)
        assert err == 0.0
        assert mask.k == 5

    def test_matches_wina_on_orthogonal(self):
        w = kaiming_init(8, 8, derive_seed(4, 0))
        w = w @ svd_right_factor(w)
        x = gaussian_vector(8, derive_seed(4, 1))
        g = gate_wina(x, column_norms(w), 4)
        dev = float(np.linalg.norm(w @ x - w @ apply_gate(x, g)))
        _, best = brute_force_optimal_gate(w, x, 4)
        assert abs(dev - best) <= 1e-10

    def test_hand_evaluated_two_masks(self):
        w = np.array([[1.0, 0.0], [0.0, 3.0]])
        x = np.array([2.0, 1.0])
        mask, err = brute_force_optimal_gate(w, x, 1)
        assert mask.to_bits() == [0, 1]
        np.testing.assert_allclose(err, 2.0)

    def test_cap_enforced(self):
        with pytest.raises(ValueError, match="capped at n <= 20"):
            brute_force_optimal_gate(np.ones((2, 21)), np.ones(21), 3)

    def test_tie_resolves_lexicographically(self):
        # Symmetric instance: keeping either coordinate gives equal error.
        w = np.eye(2)
        x = np.array([1.0, 1.0])
        mask, _ = brute_force_optimal_gate(w, x, 1)
        assert mask.to_bits() == [1, 0]


class TestDeviationE:
    def test_all_ones_gates(self):
        chain = LinearChain(layers=(kaiming_init(4, 4, 0),))
        gates = [GateMask.from_bits([1] * 4)]
        assert deviation_E(chain, gates, gaussian_vector(4, 1)) == 0.0

    def test_single_layer_squares_trial_deviation(self):
        w = kaiming_init(6, 6, 3)
        x = gaussian_vector(6, 4)
        g = gate_magnitude(x, 3)
        dev = float(np.linalg.norm(w @ x - w @ apply_gate(x, g)))
        got = deviation_E(LinearChain(layers=(w,)), [g], x)
        np.testing.assert_allclose(got, dev ** 2, rtol=1e-12)

    def test_matches_straight_line_oracle(self):
        layers = (kaiming_init(5, 6, 1), kaiming_init(4, 5, 2))
        chain = LinearChain(layers=layers)
        x = gaussian_vector(6, 3)
        gates = [gate_magnitude(x, 4),
                 topk_mask(np.abs(gaussian_vector(5, 5)), 3)]
        expected = straight_line_gated_deviation(layers, x, gates) ** 2
        np.testing.assert_allclose(deviation_E(chain, gates, x), expected,
                                   rtol=1e-10)

    def test_gate_shape_validated(self):
        chain = LinearChain(layers=(kaiming_init(4, 4, 0),))
        with pytest.raises(ValueError, match="gate 1"):
            deviation_E(chain, [GateMask.from_bits([1, 1])], np.ones(4))


class TestUpperBoundU:
    def _ortho_chain(self, dims, seed):
        layers = tuple(kaiming_init(dims[l], dims[l - 1], derive_seed(seed, l))
                       for l in range(1, len(dims)))
        return orthogonalize_chain(LinearChain(layers=layers)).chain

    def test_all_ones_gates_zero_bound(self):
        chain = self._ortho_chain((4, 4, 4), 1)
        gates = [GateMask.from_bits([1] * 4)] * 2
        assert upper_bound_U(chain, gates, gaussian_vector(4, 2), 1.0) == 0.0

    def test_bound_dominates_deviation(self):
        for seed in range(30):
            chain = self._ortho_chain((6, 6, 6), derive_seed(seed, 0))
            x = gaussian_vector(6, derive_seed(seed, 1))
            gates = [topk_mask(np.abs(gaussian_vector(6, derive_seed(seed, 2, l))),
                               int(l + 2))
                     for l in range(2)]
            dev = deviation_E(chain, gates, x)
            for alpha in (0.5, 1.0, 2.0):
                assert dev <= upper_bound_U(chain, gates, x, alpha) + 1e-9

    def test_alpha_validated(self):
        chain = self._ortho_chain((4, 4), 3)
        with pytest.raises(ValueError, match="alpha"):
            upper_bound_U(chain, [GateMask.from_bits([1] * 4)], np.ones(4), 0.0)

    def test_non_orthogonal_rejected(self):
        layers = (kaiming_init(6, 6, 0), kaiming_init(6, 6, 1))
        chain = LinearChain(layers=layers)
        gates = [GateMask.from_bits([1] * 6)] * 2
        with pytest.raises(ValueError, match="column-orthogonal"):
            upper_bound_U(chain, gates, np.ones(6), 1.0)

    def test_wina_minimizes_layerwise_v_terms_exhaustively(self):
        # L=2, n=6, K=3: over all C(6,3)^2 mask pairs, the weight-informed
        # sequence minimizes each layer's dropped-coordinate sum.
        import itertools
        chain = self._ortho_chain((6, 6, 6), 17)
        w1, w2 = chain.layers
        x = gaussian_vector(6, 18)
        c1_sq = column_norms(w1) ** 2
        c2_sq = column_norms(w2) ** 2

        def v_term(c_sq, u, keep_set):
            return sum(c_sq[j] * u[j] ** 2 for j in range(6) if j not in keep_set)

        g1 = gate_wina(x, np.sqrt(c1_sq), 3)
        wina_v1 = v_term(c1_sq, x, set(g1.indices().tolist()))
        for keep in itertools.combinations(range(6), 3):
            assert wina_v1 <= v_term(c1_sq, x, set(keep)) + 1e-12

        y_g = w1 @ apply_gate(x, g1)
        g2 = gate_wina(y_g, np.sqrt(c2_sq), 3)
        wina_v2 = v_term(c2_sq, y_g, set(g2.indices().tolist()))
        for keep in itertools.combinations(range(6), 3):
            assert wina_v2 <= v_term(c2_sq, y_g, set(keep)) + 1e-12


class TestCrossTermIdentity:
    def test_squared_deviation_is_dropped_sum(self):
        for seed in range(20):
            w = kaiming_init(10, 8, derive_seed(seed, 0))
            w = w @ svd_right_factor(w)
            x = gaussian_vector(8, derive_seed(seed, 1))
            c = column_norms(w)
            for k in (0, 3, 6):
                g = gate_wina(x, c, k)
                dev_sq = float(np.linalg.norm(w @ x - w @ apply_gate(x, g)) ** 2)
                dropped = g.keep == 0
                separable = float(np.sum(x[dropped] ** 2 * c[dropped] ** 2))
                assert abs(dev_sq - separable) <= 1e-8 * (1 + abs(separable))


class TestAggregateAndReport:
    def test_single_seed_zero_std(self):
        cfg = BenchConfig(dims=(16, 16), seeds=1, methods=("teal",),
                          sparsity_levels=(0.5,))
        report = aggregate_and_report(cfg)
        assert report.rows[0].std == 0.0
        assert report.rows[0].n_trials == 1

    def test_deterministic_modulo_walltime(self):
        cfg = BenchConfig(dims=(16, 16), seeds=3, methods=("teal", "wina"),
                          sparsity_levels=(0.25, 0.5))
        a = aggregate_and_report(cfg).to_dict()
        b = aggregate_and_report(cfg).to_dict()
        a.pop("wall_time_s")
        b.pop("wall_time_s")
        assert a == b

    def test_wina_mean_strictly_below_teal(self):
        cfg = BenchConfig(dims=(64, 64), seeds=8, methods=("teal", "wina"),
                          sparsity_levels=(0.25, 0.5, 0.65), orthogonalize=True)
        report = aggregate_and_report(cfg)
        for s in cfg.sparsity_levels:
            assert report.row("wina", s).mean < report.row("teal", s).mean

    def test_csv_schema(self):
        cfg = BenchConfig(dims=(8, 8), seeds=2, methods=("teal",),
                          sparsity_levels=(0.5,))
        csv = aggregate_and_report(cfg).to_csv()
        header, row = csv.strip().split("\n")
        assert header == "method,sparsity,mean,std,n_trials"
        assert row.startswith("teal,0.5,")

    def test_config_validation(self):
        with pytest.raises(ValueError, match="seeds"):
            BenchConfig(dims=(8, 8), seeds=0)
        with pytest.raises(ValueError, match="sparsity"):
            BenchConfig(dims=(8, 8), sparsity_levels=(1.0,))
        with pytest.raises(ValueError, match="method"):
            BenchConfig(dims=(8, 8), methods=("magnitude",))


class TestGatesForPlan:
    def test_plan_sparsities_set_per_layer_k(self):
        from gatekit.allocator import AllocationPlan
        from gatekit.bench import gates_for_plan
        layers = (kaiming_init(8, 8, 1), kaiming_init(8, 8, 2))
        chain = LinearChain(layers=layers)
        plan = AllocationPlan(per_layer_sparsity=(0.25, 0.5),
                              global_achieved=0.375, step=0.25)
        x = gaussian_vector(8, 3)
        gates = gates_for_plan(chain, plan, x, method="wina")
        assert [g.k for g in gates] == [6, 4]
        assert deviation_E(chain, gates, x) > 0.0

    def test_allocator_plan_feeds_deviation(self):
        # Integration: a greedy plan's gates evaluate end to end.
        from gatekit.allocator import greedy_allocate
        from gatekit.bench import gates_for_plan
        layers = tuple(kaiming_init(10, 10, derive_seed(9, l)) for l in range(3))
        chain = LinearChain(layers=layers)
        calib = [gaussian_vector(10, derive_seed(10, i)) for i in range(4)]
        plan = greedy_allocate(chain, calib, target=0.4, step=0.1)
        x = gaussian_vector(10, 11)
        dev = deviation_E(chain, gates_for_plan(chain, plan, x), x)
        assert np.isfinite(dev) and dev >= 0.0

    def test_layer_count_mismatch(self):
        from gatekit.allocator import AllocationPlan
        from gatekit.bench import gates_for_plan
        chain = LinearChain(layers=(kaiming_init(4, 4, 0),))
        plan = AllocationPlan(per_layer_sparsity=(0.5, 0.5),
                              global_achieved=0.5, step=0.5)
        with pytest.raises(ValueError, match="plan has 2"):
            gates_for_plan(chain, plan, np.ones(4))


class TestNecessityWitness:
    def test_wina_suboptimal_without_orthogonality(self):
        from gatekit.verify import necessity_witness
        w, x, k = necessity_witness()
        g = gate_wina(x, column_norms(w), k)
        dev = float(np.linalg.norm(w @ x - w @ apply_gate(x, g)))
        mask, best = brute_force_optimal_gate(w, x, k)
        assert best < dev - 0.5
        assert mask.to_bits() == [0, 0, 1]
        np.testing.assert_allclose(best, 0.0, atol=1e-12)
