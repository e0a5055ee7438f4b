import numpy as np
import pytest

from evfield import autodiff as ad
from evfield.field import (CheckpointFormatError, CorruptParametersError,
                           EncodingConfig, FieldArch, FieldParams, FieldSample,
                           encoding_dim, field_eval, field_forward,
                           init_params, layer_shapes, load_checkpoint,
                           positional_encode, save_checkpoint)


class TestEncoding:
    def test_zero_input(self):
        e = positional_encode(np.zeros((1, 3)), 4)
        sins = e[0, 3::6], e[0, 4::6], e[0, 5::6]
        # layout: [v, sin, cos] interleaved per frequency block of 3 dims
        assert e.shape == (1, 3 + 2 * 4 * 3)
        np.testing.assert_array_equal(e[0, :3], 0.0)
        # all sin blocks zero, all cos blocks one
        for k in range(4):
            np.testing.assert_array_equal(e[0, 3 + 6 * k:6 + 6 * k], 0.0)
            np.testing.assert_array_equal(e[0, 6 + 6 * k:9 + 6 * k], 1.0)

    def test_l0_identity(self):
        v = np.array([[0.3, -0.2, 0.9]])
        np.testing.assert_array_equal(positional_encode(v, 0, True), v)

    def test_hand_example(self):
        e = positional_encode(np.array([[0.5]]), 2, True)
        np.testing.assert_allclose(e[0], [0.5, 1.0, 0.0, np.sin(np.pi), -1.0],
                                   atol=1e-12)

    def test_dimension_formula(self):
        for dim in (1, 3):
            for l in (0, 2, 6):
                for inc in (True, False):
                    v = np.zeros((5, dim))
                    got = positional_encode(v, l, inc).shape[-1]
                    assert got == encoding_dim(dim, l, inc)


class TestInit:
    def test_deterministic(self):
        a = init_params(7)
        b = init_params(7)
        for ta, tb in zip(a.tensors, b.tensors):
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_seed_changes_values(self):
        a = init_params(7)
        b = init_params(8)
        assert any(not np.array_equal(ta.data, tb.data)
                   for ta, tb in zip(a.tensors, b.tensors))

    def test_glorot_bound(self):
        arch = FieldArch(depth=3, width=64, encoding=EncodingConfig(0, 0, True))
        p = init_params(0, arch)
        w2 = p.tensors[4]  # 64x64 trunk layer (after the skip layer)
        assert w2.data.shape == (64, 64)
        bound = np.sqrt(6.0 / 128.0)
        assert np.all(np.abs(w2.data) <= bound)
        assert np.max(np.abs(w2.data)) > 0.9 * bound  # actually fills the range

    def test_biases_zero(self):
        p = init_params(3)
        for b in p.tensors[1::2]:
            np.testing.assert_array_equal(b.data, 0.0)

    def test_skip_layer_shapes(self):
        arch = FieldArch(depth=4, width=32)
        shapes = layer_shapes(arch)
        pos = encoding_dim(3, arch.encoding.l_pos, True)
        assert shapes[0] == (pos, 32)
        assert shapes[2] == (32 + pos, 32)  # skip at D//2
        assert shapes[4] == (32, 1)

    def test_arch_validation(self):
        with pytest.raises(ValueError):
            FieldArch(depth=1)
        with pytest.raises(ValueError):
            FieldArch(width=4)


class TestEval:
    def test_zero_params_closed_form(self):
        p = init_params(0)
        for t in p.tensors:
            t.data[:] = 0.0
        s = field_eval(p, [0.3, -0.2, 0.5], [0.0, 0.0, 1.0])
        assert s.sigma == pytest.approx(np.log(2.0), abs=1e-12)
        assert s.c == pytest.approx(0.5, abs=1e-12)

    def test_ranges_hold_everywhere(self):
        rng = np.random.default_rng(1)
        p = init_params(2)
        enc = p.arch.encoding
        x = rng.normal(size=(10_000, 3))
        d = rng.normal(size=(10_000, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        with ad.no_grad():
            c, sigma = field_forward(
                p, positional_encode(x, enc.l_pos), positional_encode(d, enc.l_dir))
        assert np.all(sigma.data >= 0.0)
        assert np.all((c.data >= 0.0) & (c.data <= 1.0))

    def test_color_invariant_when_position_paths_cut(self):
        p = init_params(4)
        # zero the trunk and the direction-input rows of the color hidden layer
        for i in range(p.arch.depth):
            p.tensors[2 * i].data[:] = 0.0
        s1 = field_eval(p, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0])
        s2 = field_eval(p, [5.0, -3.0, 2.0], [0.0, 0.0, 1.0])
        assert s1.c == s2.c

    def test_direction_must_be_unit(self):
        p = init_params(5)
        with pytest.raises(ValueError, match="unit"):
            field_eval(p, [0.0, 0.0, 0.0], [0.0, 0.0, 2.0])

    def test_corrupt_params_error(self):
        p = init_params(6)
        p.tensors[0].data[0, 0] = np.nan
        with pytest.raises(CorruptParametersError):
            field_eval(p, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0])

    def test_pure_function_bitwise(self):
        p = init_params(7)
        a = field_eval(p, [0.1, 0.2, 0.3], [0.0, 1.0, 0.0])
        b = field_eval(p, [0.1, 0.2, 0.3], [0.0, 1.0, 0.0])
        assert a == b


class TestGradients:
    def test_forward_gradients_match_fd(self):
        """Spot-check field gradients against central differences."""
        arch = FieldArch(depth=2, width=16, encoding=EncodingConfig(2, 1, True))
        p = init_params(11, arch)
        rng = np.random.default_rng(12)
        enc = arch.encoding
        x = positional_encode(rng.normal(size=(20, 3)), enc.l_pos)
        d = rng.normal(size=(20, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        d = positional_encode(d, enc.l_dir)
        target = rng.uniform(0.2, 0.8, size=(20, 1))

        def loss_value():
            c, sigma = field_forward(p, x, d)
            return ((c - target) ** 2).mean() + 0.1 * sigma.mean()

        loss = loss_value()
        loss.backward()
        h = 1e-4
        rng2 = np.random.default_rng(13)
        n_checked = 0
        for ti, t in enumerate(p.tensors):
            flat = t.data.ravel()
            idxs = rng2.choice(flat.size, size=min(14, flat.size), replace=False)
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + h
                with ad.no_grad():
                    fp = loss_value().data.item()
                flat[i] = orig - h
                with ad.no_grad():
                    fm = loss_value().data.item()
                flat[i] = orig
                fd = (fp - fm) / (2 * h)
                got = t.grad.ravel()[i]
                denom = max(abs(fd), abs(got), 1e-8)
                assert abs(got - fd) / denom <= 1e-3, (ti, i, got, fd)
                n_checked += 1
        assert n_checked >= 100


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = init_params(21)
        path = tmp_path / "field.nfp1"
        save_checkpoint(path, p)
        q = load_checkpoint(path)
        assert q.arch == p.arch
        for ta, tb in zip(p.tensors, q.tensors):
            np.testing.assert_allclose(ta.data, tb.data, atol=1e-7)
            assert tb.requires_grad

    def test_header_layout(self, tmp_path):
        arch = FieldArch(depth=3, width=16, channels=1,
                         encoding=EncodingConfig(5, 2, True))
        p = init_params(0, arch)
        path = tmp_path / "f.nfp1"
        save_checkpoint(path, p)
        raw = path.read_bytes()
        assert raw[:4] == b"NFP1"
        ints = np.frombuffer(raw[4:28], "<u4")
        np.testing.assert_array_equal(ints, [3, 16, 1, 5, 2, 1])
        count = int.from_bytes(raw[28:36], "little")
        assert count == p.n_values
        assert len(raw) == 36 + 4 * count

    def test_save_is_deterministic(self, tmp_path):
        p = init_params(3)
        a, b = tmp_path / "a.nfp1", tmp_path / "b.nfp1"
        save_checkpoint(a, p)
        save_checkpoint(b, p)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.nfp1"
        path.write_bytes(b"XXXX" + b"\x00" * 40)
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_checkpoint(path)

    def test_truncated_body(self, tmp_path):
        p = init_params(4)
        path = tmp_path / "t.nfp1"
        save_checkpoint(path, p)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CheckpointFormatError, match="bytes"):
            load_checkpoint(path)

    def test_count_architecture_mismatch(self, tmp_path):
        p = init_params(5)
        path = tmp_path / "m.nfp1"
        save_checkpoint(path, p)
        raw = bytearray(path.read_bytes())
        # corrupt: drop one parameter from both count and body
        count = int.from_bytes(raw[28:36], "little") - 1
        raw[28:36] = count.to_bytes(8, "little")
        path.write_bytes(bytes(raw[:-4]))
        with pytest.raises(CheckpointFormatError, match="count"):
            load_checkpoint(path)
