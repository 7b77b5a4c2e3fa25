import numpy as np
import pytest

from csifeedback import autodiff as ad
from csifeedback import model as mdl
from csifeedback.autodiff import Tensor

from helpers import grad_check


def toy_config(**kw):
    args = dict(n_tx=4, n_subcarriers=8, embed_dim=16, depth=2, heads=4,
                channel_uses=8, constellation_points=4,
                subcarriers_per_subband=4)
    args.update(kw)
    return mdl.ModelConfig(**args).validate()


def random_h(rng, cfg, batch=2):
    shape = (batch, cfg.n_tx, cfg.n_subcarriers)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class TestConstellation:
    @pytest.mark.parametrize("k", [2, 4, 8, 16])
    def test_unit_average_power(self, k):
        pts = mdl.make_constellation(k)
        assert abs(np.mean(np.abs(pts) ** 2) - 1.0) < 1e-12
        assert len(set(np.round(pts, 12))) == k

    def test_default_is_quadrature(self):
        pts = mdl.make_constellation(4)
        expected = {complex(a, b) for a in (1, -1) for b in (1, -1)}
        assert {complex(np.round(p * np.sqrt(2), 9)) for p in pts} == expected

    def test_unsupported_size(self):
        with pytest.raises(mdl.ModelConfigError):
            mdl.make_constellation(5)


class TestConfig:
    def test_compression_ratio(self):
        cfg = mdl.ModelConfig(channel_uses=104).validate()
        assert abs(cfg.compression_ratio - 1.0 / 16.0) < 1e-15

    def test_tau_schedule(self):
        cfg = toy_config(tau_start=1.0, tau_end=0.1, tau_anneal_steps=100)
        assert cfg.tau_at(0) == 1.0
        assert abs(cfg.tau_at(50) - 0.55) < 1e-12
        assert cfg.tau_at(100) == 0.1
        assert cfg.tau_at(10 ** 6) == 0.1

    def test_invalid_heads(self):
        with pytest.raises(mdl.ModelConfigError):
            toy_config(embed_dim=10, heads=4)


class TestTokenize:
    def test_output_shape(self):
        cfg = toy_config()
        params = mdl.init_params(cfg, seed=0)
        h = random_h(np.random.default_rng(0), cfg, batch=3)
        out = mdl.tokenize_csi(h, params, cfg)
        assert out.shape == (3, cfg.tokens, cfg.embed_dim)

    def test_zero_input_zero_bias(self):
        cfg = toy_config()
        params = mdl.init_params(cfg, seed=0)
        params["enc.in_proj.b"] = Tensor(np.zeros(cfg.embed_dim), requires_grad=True)
        out = mdl.tokenize_csi(np.zeros((1, 4, 8), dtype=complex), params, cfg)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_linearity_with_zero_bias(self):
        cfg = toy_config()
        params = mdl.init_params(cfg, seed=1)
        params["enc.in_proj.b"] = Tensor(np.zeros(cfg.embed_dim), requires_grad=True)
        rng = np.random.default_rng(1)
        h1, h2 = random_h(rng, cfg), random_h(rng, cfg)
        lhs = mdl.tokenize_csi(h1 + h2, params, cfg).data
        rhs = mdl.tokenize_csi(h1, params, cfg).data + mdl.tokenize_csi(h2, params, cfg).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_dim_mismatch(self):
        cfg = toy_config()
        params = mdl.init_params(cfg, seed=0)
        with pytest.raises(mdl.ModelConfigError):
            mdl.tokenize_csi(np.zeros((1, 5, 8), dtype=complex), params, cfg)


class TestEmbedCqi:
    def test_mode_none_is_zero(self):
        cfg = toy_config(cqi_mode="none")
        params = mdl.init_params(cfg, seed=0)
        out = mdl.embed_cqi(None, params, cfg, "enc", batch=2)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_wideband_rows_identical(self):
        cfg = toy_config(cqi_mode="wideband")
        params = mdl.init_params(cfg, seed=0)
        out = mdl.embed_cqi(np.array([7, 3]), params, cfg, "enc", batch=2)
        full = np.broadcast_to(out.data, (2, cfg.tokens, cfg.embed_dim))
        for b in range(2):
            for l in range(cfg.tokens):
                np.testing.assert_array_equal(full[b, l], full[b, 0])

    def test_subband_all_equal_matches_wideband(self):
        cfg_s = toy_config(cqi_mode="subband")
        cfg_w = toy_config(cqi_mode="wideband")
        params = mdl.init_params(cfg_s, seed=0)
        sub = mdl.embed_cqi(np.array([[5, 5]]), params, cfg_s, "enc", batch=1)
        wide = mdl.embed_cqi(np.array([5]), params, cfg_w, "enc", batch=1)
        np.testing.assert_allclose(
            sub.data, np.broadcast_to(wide.data, sub.data.shape), atol=1e-12)

    def test_index_out_of_range(self):
        cfg = toy_config(cqi_mode="wideband")
        params = mdl.init_params(cfg, seed=0)
        with pytest.raises(mdl.ModelConfigError):
            mdl.embed_cqi(np.array([16]), params, cfg, "enc", batch=1)


class TestEncode:
    def test_jcm_output_shape(self):
        cfg = toy_config(cqi_mode="wideband")
        params = mdl.init_params(cfg, seed=0)
        h = random_h(np.random.default_rng(2), cfg, batch=3)
        out = mdl.encode(h, np.array([1, 5, 9]), params, cfg)
        assert out.shape == (3, cfg.channel_uses, cfg.constellation_points)

    def test_analog_output_shape_and_power(self):
        cfg = toy_config(mod_mode="analog")
        params = mdl.init_params(cfg, seed=0)
        h = random_h(np.random.default_rng(3), cfg, batch=4)
        out = mdl.encode(h, None, params, cfg)
        assert out.shape == (4, cfg.channel_uses, 2)
        assert abs(np.mean(out.data ** 2) - 1.0) < 1e-9

    def test_cqi_sensitivity(self):
        cfg = toy_config(cqi_mode="wideband")
        params = mdl.init_params(cfg, seed=0)
        h = random_h(np.random.default_rng(4), cfg, batch=1)
        a = mdl.encode(h, np.array([0]), params, cfg)
        b = mdl.encode(h, np.array([15]), params, cfg)
        assert np.max(np.abs(a.data - b.data)) > 0

    def test_positional_encoding_gradient(self):
        cfg = toy_config(cqi_mode="subband")
        params = mdl.init_params(cfg, seed=0)
        rng = np.random.default_rng(5)
        h = random_h(rng, cfg, batch=2)
        idx = rng.integers(0, 16, size=(2, cfg.n_subbands))
        target = mdl.realify_csi(h)
        gnoise = -np.log(-np.log(rng.uniform(
            size=(2, cfg.channel_uses, cfg.constellation_points)) + 1e-20) + 1e-20)

        def build():
            tokens, _ = mdl.feedback_forward(h, idx, params, cfg, mode="soft",
                                             tau=1.0, gumbel_noise=gnoise)
            diff = tokens - Tensor(target)
            return ad.tensor_sum(diff * diff)

        pos = params["enc.pos"]
        check = [(0, i) for i in range(0, pos.size, 7)]
        assert grad_check(build, [pos], indices=check) < 1e-4


class TestModulate:
    def test_hard_symbols_are_constellation_members(self):
        cfg = toy_config()
        rng = np.random.default_rng(6)
        logits = Tensor(rng.standard_normal((5, cfg.channel_uses, 4)))
        seq = mdl.modulate_jcm(logits, cfg, "hard", rng=rng)
        pts = mdl.constellation_real(cfg)
        flat = seq.symbols.reshape(-1, 2)
        for s in flat:
            assert any(np.array_equal(s, p) for p in pts)

    def test_soft_limit_matches_argmax(self):
        cfg = toy_config()
        rng = np.random.default_rng(7)
        logits = Tensor(rng.standard_normal((2, cfg.channel_uses, 4)))
        zero_noise = np.zeros(logits.shape)
        seq = mdl.modulate_jcm(logits, cfg, "soft", tau=1e-4,
                               gumbel_noise=zero_noise)
        pts = mdl.constellation_real(cfg)
        hard = pts[np.argmax(logits.data, axis=-1)]
        np.testing.assert_allclose(seq.symbols.data, hard, atol=1e-9)

    def test_soft_rows_sum_to_one(self):
        cfg = toy_config()
        rng = np.random.default_rng(8)
        logits = Tensor(5 * rng.standard_normal((3, cfg.channel_uses, 4)))
        seq = mdl.modulate_jcm(logits, cfg, "soft", tau=0.7, rng=rng)
        np.testing.assert_allclose(seq.probs.data.sum(axis=-1), 1.0, atol=1e-9)

    def test_small_tau_expectation_monte_carlo(self):
        # as tau -> 0 the relaxed draw approaches a categorical one-hot with
        # softmax(logits) probabilities, so the mean symbol approaches the
        # probability-weighted constellation point
        cfg = toy_config()
        rng = np.random.default_rng(9)
        logits = Tensor(rng.standard_normal((1, 1, 4)))
        p = np.exp(logits.data) / np.exp(logits.data).sum(axis=-1, keepdims=True)
        pts = mdl.constellation_real(cfg)
        expected = (p[0, 0, :, None] * pts).sum(axis=0)
        draws = np.empty((10 ** 4, 2))
        for i in range(10 ** 4):
            seq = mdl.modulate_jcm(logits, cfg, "soft", tau=0.01, rng=rng)
            draws[i] = seq.symbols.data[0, 0]
        se = draws.std(axis=0) / np.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - expected) < 4 * se + 1e-3)

    def test_hard_sampling_frequencies_match_softmax(self):
        cfg = toy_config()
        rng = np.random.default_rng(19)
        logits = Tensor(np.array([[[1.0, 0.0, -1.0, 0.5]]]))
        p = np.exp(logits.data[0, 0])
        p /= p.sum()
        pts = mdl.constellation_real(cfg)
        counts = np.zeros(4)
        n = 20000
        for _ in range(n):
            seq = mdl.modulate_jcm(logits, cfg, "hard", rng=rng)
            sym = seq.symbols.data if isinstance(seq.symbols, Tensor) else seq.symbols
            counts[int(np.argmin(np.sum((pts - sym[0, 0]) ** 2, axis=1)))] += 1
        freq = counts / n
        se = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(freq - p) < 4 * se + 1e-9)

    def test_straight_through_outputs_exact_points(self):
        cfg = toy_config(straight_through=True)
        rng = np.random.default_rng(10)
        logits = Tensor(rng.standard_normal((2, cfg.channel_uses, 4)),
                        requires_grad=True)
        with ad.Tape() as tape:
            seq = mdl.modulate_jcm(logits, cfg, "soft", tau=1.0, rng=rng)
            loss = ad.tensor_sum(seq.symbols * seq.symbols)
        pts = mdl.constellation_real(cfg)
        for s in seq.symbols.data.reshape(-1, 2):
            assert any(np.allclose(s, p, atol=1e-12) for p in pts)
        ad.backward(tape, loss, params=[logits])
        assert np.any(logits.grad != 0)


class TestAwgn:
    def test_noiseless(self):
        s = np.ones((4, 8, 2))
        out = mdl.awgn(s, None)
        np.testing.assert_array_equal(out, s)

    def test_variance_calibration(self):
        rng = np.random.default_rng(11)
        s = np.zeros((10 ** 5, 1, 2))
        out = mdl.awgn(s, -10.0, rng=rng)
        # per complex element: var = re^2 + im^2 summed
        var = np.mean(out[..., 0] ** 2 + out[..., 1] ** 2)
        assert abs(var - 10.0) / 10.0 < 0.02

    def test_zero_mean(self):
        rng = np.random.default_rng(12)
        s = np.full((10 ** 5, 1, 2), 0.7)
        out = mdl.awgn(s, 0.0, rng=rng)
        se = np.sqrt(0.5 / 10 ** 5)
        assert np.all(np.abs(out.mean(axis=0) - 0.7) < 3 * se)


class TestDecode:
    def test_output_shape(self):
        cfg = toy_config(cqi_mode="wideband")
        params = mdl.init_params(cfg, seed=0)
        rng = np.random.default_rng(13)
        received = rng.standard_normal((3, cfg.channel_uses, 2))
        tokens = mdl.decode(received, np.array([2, 4, 6]), params, cfg)
        h_hat = mdl.reconstruct(tokens, cfg)
        assert h_hat.shape == (3, cfg.n_tx, cfg.n_subcarriers)

    def test_zero_head_gives_unit_nmse(self):
        from csifeedback import metrics as met
        cfg = toy_config()
        params = mdl.init_params(cfg, seed=0)
        params["dec.head.w"] = Tensor(np.zeros((cfg.embed_dim, 2 * cfg.n_tx)),
                                      requires_grad=True)
        params["dec.head.b"] = Tensor(np.zeros(2 * cfg.n_tx), requires_grad=True)
        rng = np.random.default_rng(14)
        h = random_h(rng, cfg, batch=2)
        tokens, _ = mdl.feedback_forward(h, None, params, cfg, mode="soft",
                                         tau=1.0, rng=rng)
        h_hat = mdl.reconstruct(tokens, cfg)
        np.testing.assert_array_equal(h_hat, 0.0)
        linear, db, _ = met.nmse(h, h_hat)
        assert abs(linear - 1.0) < 1e-12

    def test_received_shape_check(self):
        cfg = toy_config()
        params = mdl.init_params(cfg, seed=0)
        with pytest.raises(mdl.ModelConfigError):
            mdl.decode(np.zeros((1, 3, 2)), None, params, cfg)


class TestInvariants:
    def test_cqi_none_equals_zeroed_wideband_table(self):
        cfg_n = toy_config(cqi_mode="none")
        cfg_w = toy_config(cqi_mode="wideband")
        params = mdl.init_params(cfg_w, seed=0)
        zeroed = dict(params)
        zeroed["enc.cqi.w"] = Tensor(np.zeros((16, cfg_w.embed_dim)), requires_grad=True)
        zeroed["enc.cqi.b"] = Tensor(np.zeros(cfg_w.embed_dim), requires_grad=True)
        h = random_h(np.random.default_rng(15), cfg_w, batch=2)
        a = mdl.encode(h, None, params, cfg_n)
        b = mdl.encode(h, np.array([3, 11]), zeroed, cfg_w)
        assert a.data.tobytes() == b.data.tobytes()

    def test_transformer_permutation_equivariance(self):
        cfg = toy_config(cqi_mode="subband")
        params = mdl.init_params(cfg, seed=3)
        rng = np.random.default_rng(16)
        h = random_h(rng, cfg, batch=1)
        idx = rng.integers(0, 16, size=(1, cfg.n_subbands))
        perm = rng.permutation(cfg.tokens)

        def transformer_out(h_in, cqi_idx, pos):
            tokens = mdl.tokenize_csi(h_in, params, cfg)
            local = dict(params)
            local["enc.pos"] = Tensor(pos)
            z0 = tokens + mdl.embed_cqi(cqi_idx, local, cfg, "enc", 1) + local["enc.pos"]
            return mdl._transformer(z0, params, "enc", cfg).data

        base = transformer_out(h, idx, params["enc.pos"].data)
        # permute subcarriers, positional encodings and per-token CQI jointly;
        # expand subband indices to per-token, permute, feed as 1-wide subbands
        cfg_tok = toy_config(cqi_mode="subband", subcarriers_per_subband=1)
        per_token = np.repeat(idx, cfg.subcarriers_per_subband, axis=1)

        def transformer_out_tok(h_in, cqi_tok, pos):
            tokens = mdl.tokenize_csi(h_in, params, cfg_tok)
            local = dict(params)
            local["enc.pos"] = Tensor(pos)
            z0 = tokens + mdl.embed_cqi(cqi_tok, local, cfg_tok, "enc", 1) + local["enc.pos"]
            return mdl._transformer(z0, params, "enc", cfg_tok).data

        same = transformer_out_tok(h, per_token, params["enc.pos"].data)
        np.testing.assert_allclose(same, base, atol=1e-12)
        permuted = transformer_out_tok(h[:, :, perm], per_token[:, perm],
                                       params["enc.pos"].data[perm])
        np.testing.assert_allclose(permuted, base[:, perm], atol=1e-10)

    def test_channel_use_accounting(self):
        for mode in ("jcm", "analog"):
            cfg = toy_config(mod_mode=mode)
            params = mdl.init_params(cfg, seed=0)
            rng = np.random.default_rng(17)
            h = random_h(rng, cfg, batch=2)
            _, seq = mdl.feedback_forward(h, None, params, cfg, mode="hard",
                                          rng=rng)
            sym = seq.symbols.data if isinstance(seq.symbols, Tensor) else seq.symbols
            assert sym.shape[1] == cfg.channel_uses


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        cfg = toy_config(cqi_mode="subband")
        params = mdl.init_params(cfg, seed=4)
        path = tmp_path / "m.smck"
        mdl.write_checkpoint(path, cfg, params, extra={"step": 17})
        cfg2, params2, meta = mdl.read_checkpoint(path)
        assert cfg2 == cfg
        assert meta["step"] == 17
        assert sorted(params2) == sorted(params)
        for name in params:
            assert params[name].data.tobytes() == params2[name].data.tobytes()

    def test_write_read_write_stable(self, tmp_path):
        cfg = toy_config()
        params = mdl.init_params(cfg, seed=5)
        p1, p2 = tmp_path / "a.smck", tmp_path / "b.smck"
        mdl.write_checkpoint(p1, cfg, params)
        cfg2, params2, meta = mdl.read_checkpoint(p1)
        mdl.write_checkpoint(p2, cfg2, params2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.smck"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(mdl.CheckpointFormatError, match="magic"):
            mdl.read_checkpoint(path)

    def test_truncated_record(self, tmp_path):
        cfg = toy_config()
        params = mdl.init_params(cfg, seed=6)
        path = tmp_path / "t.smck"
        mdl.write_checkpoint(path, cfg, params)
        raw = path.read_bytes()
        path.write_bytes(raw[:-10])
        with pytest.raises(mdl.CheckpointFormatError):
            mdl.read_checkpoint(path)
