from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bankfusion import bankio
from bankfusion.bankio import BankFormatError, FeatureBankDataset, SyntheticTaskSpec, gen_synthetic
from bankfusion.fusion import FusionModel
from bankfusion.training import TrainConfig


def nearest_centroid_accuracy(train_x, train_y, test_x, test_y):
    classes = np.unique(train_y)
    cents = np.stack([train_x[train_y == c].mean(axis=0) for c in classes])
    dist = ((test_x[:, None, :] - cents[None]) ** 2).sum(axis=2)
    return float(np.mean(classes[np.argmin(dist, axis=1)] == test_y))


def decode_bits(ds, emb):
    """Nearest latent bit per bank under the known embedding."""
    bits = []
    for i in range(ds.n_branches):
        d0 = ((ds.features[:, i] - emb.offsets[i] + emb.directions[i]) ** 2).sum(axis=1)
        d1 = ((ds.features[:, i] - emb.offsets[i] - emb.directions[i]) ** 2).sum(axis=1)
        bits.append((d1 < d0).astype(int))
    return np.stack(bits, axis=1)


class TestLoad:
    def test_minimal_file(self, tmp_path):
        p = tmp_path / "b.csv"
        p.write_text("N=1,d=2,C=2\na,1,0.5,-1\n")
        ds = bankio.load_bank(p)
        assert len(ds) == 1 and ds.labels.tolist() == [1] and ds.features.tolist() == [[[0.5, -1.0]]]

    def test_short_row_names_line_and_id(self):
        with pytest.raises(BankFormatError, match=r"line 3: row 'b' has 1 features, expected 2"):
            bankio.parse_bank("#bank N=1 d=2 C=2\na,0,1,2\nb,1,3\n")

    @pytest.mark.parametrize("text,match", [
        ("", "empty"),
        ("#bank N=1 d=2\n", "missing C"),
        ("#bank N=1 d=2 C=2\na,2,0,0\n", "sample a: label 2"),
        ("#bank N=1 d=2 C=2\na,0,nan,0\n", "sample a: non-finite"),
        ("#bank N=1 d=2 C=2\na,0,x,0\n", "line 2"),
        ("#bank N=1 d=2 C=2\na,0,1,0\na,1,1,0\n", "duplicate"),
    ])
    def test_invalid(self, text, match):
        with pytest.raises(BankFormatError, match=match):
            bankio.parse_bank(text)

    def test_round_trip(self, tmp_path):
        ds, _ = gen_synthetic(SyntheticTaskSpec(train_samples=30, test_samples=0, seed=4))
        bankio.save_bank(ds, tmp_path / "x.csv")
        assert bankio.load_bank(tmp_path / "x.csv").equals(ds)

    @settings(max_examples=30, deadline=None)
    @given(
        st.integers(1, 3), st.integers(1, 4), st.integers(1, 5),
        st.data(),
    )
    def test_round_trip_property(self, n_b, d, c, data):
        n = data.draw(st.integers(0, 6))
        feats = data.draw(arrays(np.float64, (n, n_b, d), elements=st.floats(allow_nan=False, allow_infinity=False)))
        labels = data.draw(arrays(np.int64, (n,), elements=st.integers(0, c - 1)))
        ds = FeatureBankDataset(feats, labels, c, split=data.draw(st.sampled_from([None, "train", "test"])))
        back = bankio.parse_bank(bankio.format_bank(ds))
        assert back.equals(ds)
        assert bankio.format_bank(back) == bankio.format_bank(ds)


class TestSynthetic:
    def test_xor_construction_audit(self):
        spec = SyntheticTaskSpec(noise=0.0, train_samples=200, test_samples=100, seed=2)
        emb = bankio.xor_embedding(spec)
        table = {bits: emb.encode(np.array([bits]))[0] for bits in product([0, 1], repeat=2)}
        # bank i depends on u_i alone
        for u1, u2 in product([0, 1], repeat=2):
            np.testing.assert_array_equal(table[(u1, u2)][0], table[(u1, 1 - u2)][0])
            np.testing.assert_array_equal(table[(u1, u2)][1], table[(1 - u1, u2)][1])
            assert not np.array_equal(table[(u1, u2)][0], table[(1 - u1, u2)][0])
        for ds in gen_synthetic(spec):
            for x, y in zip(ds.features, ds.labels):
                matches = [bits for bits, f in table.items() if np.array_equal(f, x)]
                assert len(matches) == 1
                assert y == (matches[0][0] ^ matches[0][1])

    def test_redundant_banks_identical(self):
        tr, _ = gen_synthetic(SyntheticTaskSpec(kind="redundant", classes=3, noise=0.0, train_samples=50))
        np.testing.assert_array_equal(tr.features[:, 0], tr.features[:, 1])

    def test_reproducible(self):
        spec = SyntheticTaskSpec(train_samples=40, test_samples=20, seed=8)
        a, b = gen_synthetic(spec), gen_synthetic(spec)
        assert a[0].equals(b[0]) and a[1].equals(b[1])

    def test_centroid_oracle(self):
        spec = SyntheticTaskSpec(noise=0.0, seed=0)
        tr, te = gen_synthetic(spec)
        assert nearest_centroid_accuracy(tr.features[:, 0], tr.labels, te.features[:, 0], te.labels) <= 0.55
        bits = decode_bits(te, bankio.xor_embedding(spec))
        assert np.mean(bits.sum(axis=1) % 2 == te.labels) == 1.0

    @pytest.mark.parametrize("kind", bankio.SYNTHETIC_KINDS)
    def test_generated_data_validates(self, kind, tmp_path):
        spec = SyntheticTaskSpec(kind=kind, n_branches=3, train_samples=20, test_samples=10)
        for ds in gen_synthetic(spec):
            bankio.save_bank(ds, tmp_path / "g.csv")
            assert bankio.load_bank(tmp_path / "g.csv").equals(ds)

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            SyntheticTaskSpec(noise=-1)
        with pytest.raises(ValueError):
            SyntheticTaskSpec(classes=3)


class TestCheckpoint:
    @pytest.mark.parametrize("arch,heads", [("SA2CA", 1), ("SCA", 2), ("SINGLE_SA1", 2), ("ADD", 1)])
    def test_round_trip(self, tmp_path, rng, arch, heads):
        m = FusionModel(arch, 2, 4, 3, heads=heads, seed=6)
        for _, p in m.parameters():
            p.data[...] = rng.normal(size=p.shape)
        m.set_normalization(rng.normal(size=(2, 4)), rng.uniform(0.5, 2, size=(2, 4)))
        bankio.save_checkpoint(m, tmp_path / "m.ckpt")
        back = bankio.load_checkpoint(tmp_path / "m.ckpt")
        assert bankio.format_checkpoint(back) == bankio.format_checkpoint(m)
        x = rng.normal(size=(5, 2, 4))
        assert back.logits(x).tobytes() == m.logits(x).tobytes()

    def test_header(self):
        text = bankio.format_checkpoint(FusionModel("CA2SA", 3, 2, 4, seed=9))
        assert text.splitlines()[0] == "#checkpoint kind=CA2SA N=3 d=2 classes=4 heads=1 seed=9"

    def test_wrong_parameter_rejected(self):
        text = bankio.format_checkpoint(FusionModel("ADD", 2, 2, 2)).replace("head.w", "head.x")
        with pytest.raises(BankFormatError):
            bankio.parse_checkpoint(text)


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = TrainConfig(batch_size=64, epochs=30, lr_drop_epochs=(10, 20), seed=4, label_fraction=0.1, standardize=True)
        bankio.save_config(cfg, tmp_path / "c.cfg")
        assert bankio.load_config(tmp_path / "c.cfg") == cfg

    def test_comments_and_defaults(self):
        cfg = bankio.parse_config("# comment\nepochs = 10  # inline\nlr_drop_epochs = 5\n")
        assert cfg.epochs == 10 and cfg.lr_drop_epochs == (5,) and cfg.momentum == 0.9

    @pytest.mark.parametrize("text", ["foo = 1\n", "epochs\n", "epochs = ten\n", "epochs = 5\n"])
    def test_invalid(self, text):
        with pytest.raises(BankFormatError):
            bankio.parse_config(text)
