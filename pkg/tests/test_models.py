import numpy as np
import pytest

from ndec import (
    LIFParams,
    LIFState,
    init_model,
    lif_step,
    load_model,
    model_forward,
    predict_series,
    reset_state,
    save_model,
)
from ndec.errors import BadMagic, ConfigMismatch, NumericalFault, TruncatedFile


def lif_brute_force(currents, beta, u_thr, reset_mode, u_sub, u0=0.0, s0=0.0):
    """Literal scalar transcription of the membrane dynamics (test oracle)."""
    u, s_prev = u0, s0
    us, ss = [], []
    for c in currents:
        h = beta * u + c
        if reset_mode == "none":
            theta = 0.0
        elif reset_mode == "to_zero":
            theta = h
        else:
            theta = u_sub
        u = h - s_prev * theta
        s = 1.0 if u > u_thr else 0.0
        us.append(u)
        ss.append(s)
        s_prev = s
    return us, ss


class TestLIFStep:
    def test_pure_decay(self):
        st = LIFState(np.array([1.0]), np.array([0.0]))
        st2, s = lif_step(st, [0.0], LIFParams(beta=0.5, u_thr=10.0))
        assert st2.u[0] == 0.5
        assert s[0] == 0.0

    def test_threshold_crossing_then_zero_reset(self):
        params = LIFParams(beta=0.9, u_thr=1.0, reset_mode="to_zero")
        st = LIFState(np.array([0.0]), np.array([0.0]))
        st, s = lif_step(st, [2.0], params)
        assert st.u[0] == 2.0 and s[0] == 1.0
        # next step: the spike zeroes the carried term entirely
        st, s = lif_step(st, [0.0], params)
        assert st.u[0] == 0.0 and s[0] == 0.0

    def test_reset_by_subtraction_trace(self):
        params = LIFParams(beta=1.0 - 1e-15, u_thr=1.0, reset_mode="by_subtraction",
                           u_sub=1.0)
        # hand simulation with beta = 1: traces 0.6, 1.2 (spike), then 0.8
        us, ss = lif_brute_force([0.6, 0.6, 0.6], 1.0, 1.0, "by_subtraction", 1.0)
        assert us == pytest.approx([0.6, 1.2, 0.8])
        assert ss == [0.0, 1.0, 0.0]
        st = LIFState(np.array([0.0]), np.array([0.0]))
        trace = []
        for _ in range(3):
            st, s = lif_step(st, [0.6], params)
            trace.append(st.u[0])
        assert trace == pytest.approx([0.6, 1.2, 0.8], abs=1e-12)

    def test_strict_threshold_no_spike_at_equality(self):
        st = LIFState(np.array([0.0]), np.array([0.0]))
        st2, s = lif_step(st, [1.0], LIFParams(beta=0.5, u_thr=1.0))
        assert st2.u[0] == 1.0
        assert s[0] == 0.0

    def test_nonfinite_input_rejected(self):
        st = LIFState(np.zeros(2), np.zeros(2))
        with pytest.raises(NumericalFault):
            lif_step(st, [np.nan, 0.0], LIFParams())

    def test_matches_brute_force(self, rng):
        from ndec import _kernels

        for _ in range(200):
            T = 50
            cur = rng.normal(0, 1.5, size=T)
            beta = float(rng.uniform(0.02, 0.98))
            u_thr = float(rng.uniform(0.1, 2.0))
            mode = ("none", "to_zero", "by_subtraction")[int(rng.integers(3))]
            u_sub = float(rng.uniform(0.2, 1.5))
            U, S = _kernels.lif_sequence(
                cur.reshape(T, 1, 1), beta, u_thr,
                {"none": 0, "to_zero": 1, "by_subtraction": 2}[mode],
                u_sub, np.zeros((1, 1)), np.zeros((1, 1)),
            )
            us, ss = lif_brute_force(cur, beta, u_thr, mode, u_sub)
            np.testing.assert_array_equal(U[:, 0, 0], us)
            np.testing.assert_array_equal(S[:, 0, 0], ss)

    def test_bounded_state_without_reset(self, rng):
        from ndec import _kernels

        for _ in range(20):
            T = 400
            beta = float(rng.uniform(0.1, 0.95))
            cur = rng.normal(0, 2.0, size=(T, 1, 1))
            u0 = rng.normal(size=(1, 1)) * 3
            U, _ = _kernels.lif_sequence(cur, beta, 1e9, 0, 1.0, u0, np.zeros((1, 1)))
            bound = abs(u0[0, 0]) * beta ** np.arange(1, T + 1) \
                + np.abs(cur).max() / (1 - beta)
            assert np.all(np.abs(U[:, 0, 0]) <= bound + 1e-9)


class TestArchitectures:
    def test_ann_bias_passthrough(self):
        model = init_model("ann", n_ch=4, n1=3, n2=3, seed=0)
        for k in ("W1", "W2", "W3", "b1", "b2"):
            model.params[k][:] = 0.0
        model.params["b3"][:] = (0.1, -0.2)
        assert model_forward(model, np.zeros(4)) == pytest.approx((0.1, -0.2))

    def test_snn3d_stateless_across_stream_positions(self, rng):
        model = init_model("snn3d", n_ch=8, n1=6, n2=5, m=7, seed=1)
        window = rng.poisson(1.0, size=(8, 7)).astype(float)
        noise = rng.poisson(1.0, size=(30, 8, 7)).astype(float)
        early = np.concatenate([window[None], noise])
        late = np.concatenate([noise, window[None]])
        p_early = predict_series(model, early)[0]
        p_late = predict_series(model, late)[-1]
        np.testing.assert_array_equal(p_early, p_late)

    def test_snn_stream_state_persists_and_resets(self, rng):
        model = init_model("snn_stream", n_ch=8, n1=6, n2=5, seed=2)
        x = (rng.random((40, 8)) < 0.2).astype(float)
        reset_state(model)
        a = predict_series(model, x)
        b = predict_series(model, x)  # continues from carried state
        reset_state(model)
        a2 = predict_series(model, x)
        np.testing.assert_array_equal(a, a2)
        assert not np.array_equal(a, b)

    def test_lstm_state_persists_within_reach(self, rng):
        model = init_model("lstm", n_ch=8, n_lstm=10, seed=3)
        x = rng.poisson(1.0, size=(20, 8)).astype(float)
        reset_state(model)
        whole = predict_series(model, x)
        reset_state(model)
        first = predict_series(model, x[:10])
        second = predict_series(model, x[10:])  # no reset between strides
        np.testing.assert_allclose(np.vstack([first, second]), whole, rtol=0, atol=0)

    def test_snn_stream_output_decay_closed_form(self):
        model = init_model("snn_stream", n_ch=4, n1=3, n2=3, seed=4)
        beta3 = float(model.params["beta3"])
        scale = float(model.params["out_scale"])
        model.params["b1"][:] = 0.0
        model.params["b2"][:] = 0.0
        model.params["b3"][:] = 0.0
        reset_state(model)
        u0 = np.array([1.7, -0.9])
        model.state["u"][2] = u0.copy()
        preds = predict_series(model, np.zeros((25, 4)))
        expected = scale * u0[None, :] * beta3 ** np.arange(1, 26)[:, None]
        np.testing.assert_allclose(preds, expected, rtol=1e-12, atol=1e-15)

    def test_reset_then_repeat_is_deterministic(self, rng):
        for arch in ("snn_stream", "lstm"):
            model = init_model(arch, n_ch=6, n1=5, n2=4, n_lstm=8, seed=5)
            x = rng.poisson(0.8, size=(15, 6)).astype(float)
            reset_state(model)
            a = predict_series(model, x)
            reset_state(model)
            b = predict_series(model, x)
            np.testing.assert_array_equal(a, b)

    def test_base_and_tiny_shapes(self):
        base = init_model("ann", n_ch=96)
        assert (base.n1, base.n2) == (32, 48)
        tiny_ann = init_model("ann", n_ch=96, n1=16, n2=32)
        tiny_stream = init_model("snn_stream", n_ch=96, n1=16, n2=48)
        assert tiny_ann.params["W1"].shape == (16, 96)
        assert tiny_stream.params["W2"].shape == (48, 16)

    def test_ann_permutation_equivariant(self, rng):
        # relabeling hidden neurons consistently must not change outputs
        model = init_model("ann", n_ch=6, n1=5, n2=4, seed=9)
        X = rng.poisson(1.0, size=(10, 6)).astype(float)
        base = predict_series(model, X)
        perm = rng.permutation(model.n1)
        p = model.params
        for k in ("W1", "b1", "bn1_gamma", "bn1_beta"):
            p[k][:] = p[k][perm] if p[k].ndim == 1 else p[k][perm, :]
        for k in ("bn1_mean", "bn1_var"):
            model.buffers[k][:] = model.buffers[k][perm]
        p["W2"][:] = p["W2"][:, perm]
        np.testing.assert_allclose(predict_series(model, X), base, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        model = init_model("ann", n_ch=4)
        with pytest.raises(ConfigMismatch):
            model_forward(model, np.zeros(5))

    def test_nan_input_rejected(self):
        model = init_model("ann", n_ch=4)
        with pytest.raises(NumericalFault):
            model_forward(model, np.array([np.nan, 0, 0, 0]))


class TestCheckpoint:
    @pytest.mark.parametrize("arch", ["ann", "ann3d", "snn3d", "snn_stream", "lstm"])
    def test_round_trip(self, arch, tmp_path, rng):
        model = init_model(arch, n_ch=6, n1=5, n2=4, m=7, n_lstm=8, seed=11)
        path = tmp_path / f"{arch}.ndm"
        save_model(model, path, extra_meta={"note": "unit"})
        loaded = load_model(path)
        assert loaded.arch == arch
        assert set(loaded.params) == set(model.params)
        for k, v in model.params.items():
            np.testing.assert_array_equal(
                loaded.params[k], np.asarray(v, dtype=np.float32).astype(np.float64)
            )
        shape = {"ann": (6,), "ann3d": (6, 7), "snn3d": (6, 7),
                 "snn_stream": (6,), "lstm": (6,)}[arch]
        x = rng.poisson(1.0, size=(3,) + shape).astype(float)
        if arch == "snn_stream":
            x = (x > 0).astype(float)
        # f32 round trip shifts weights; predictions must match the f32 model
        ref = init_model(arch, n_ch=6, n1=5, n2=4, m=7, n_lstm=8, seed=11)
        for k in ref.params:
            ref.params[k] = np.asarray(ref.params[k], dtype=np.float32).astype(np.float64)
        reset_state(ref)
        reset_state(loaded)
        np.testing.assert_array_equal(predict_series(loaded, x), predict_series(ref, x))
        assert (tmp_path / f"{arch}.ndm.json").exists()
        assert loaded.meta["note"] == "unit"

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.ndm"
        p.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(BadMagic):
            load_model(p)

    def test_truncated(self, tmp_path):
        model = init_model("ann", n_ch=4)
        p = tmp_path / "y.ndm"
        save_model(model, p)
        raw = p.read_bytes()
        p.write_bytes(raw[: len(raw) - 40])
        with pytest.raises(TruncatedFile):
            load_model(p)
