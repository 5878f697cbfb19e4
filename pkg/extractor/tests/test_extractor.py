"""Extractor acceptance: EMB1 validity and the declared backbone dims.

The EMB1 outputs are validated by reading them back with the consumer
package's reader, which is the interface contract.
"""

import numpy as np
import pytest
from PIL import Image

from cxrembed.config import ExtractorConfig, IMAGENET_MEAN, IMAGENET_STD
from cxrembed.backbones import BACKBONE_DIMS
from cxrembed.extract import extract
from cxrembed.preprocessing import load_grayscale, prepare_tensor

from cxrtrees.store import read_embedding_file


@pytest.fixture(scope="module")
def image_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(0)
    for i in range(8):
        arr = rng.integers(0, 256, size=(96 + 8 * i, 120), dtype=np.uint8)
        Image.fromarray(arr, mode="L").save(d / f"img{i:02d}.png")
    arr16 = rng.integers(0, 65536, size=(80, 80), dtype=np.uint16)
    Image.fromarray(arr16).save(d / "img16bit.png")
    rgb = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    Image.fromarray(rgb, mode="RGB").save(d / "imgrgb.png")
    return d


class TestPreprocessing:
    def test_eight_bit_scaling(self, image_dir):
        gray = load_grayscale(str(image_dir / "img00.png"))
        assert gray.dtype == np.float32
        assert 0.0 <= gray.min() and gray.max() <= 1.0

    def test_sixteen_bit_scaling(self, image_dir):
        gray = load_grayscale(str(image_dir / "img16bit.png"))
        assert 0.0 <= gray.min() and gray.max() <= 1.0

    def test_tensor_shape_and_channel_replication(self):
        cfg = ExtractorConfig()
        t = prepare_tensor(np.random.default_rng(1).random((300, 200)).astype(np.float32), cfg)
        assert t.shape == (224, 224, 3)
        # All three channels come from the same grayscale plane.
        restored = t * np.asarray(IMAGENET_STD) + np.asarray(IMAGENET_MEAN)
        assert np.allclose(restored[:, :, 0], restored[:, :, 1], atol=1e-6)
        assert np.allclose(restored[:, :, 0], restored[:, :, 2], atol=1e-6)

    def test_constant_image_normalization(self):
        cfg = ExtractorConfig()
        t = prepare_tensor(np.full((64, 64), 0.5, dtype=np.float32), cfg)
        expected = (0.5 - np.asarray(IMAGENET_MEAN)) / np.asarray(IMAGENET_STD)
        assert np.allclose(t[0, 0], expected, atol=1e-6)


class TestConfig:
    def test_unknown_backbone_rejected(self):
        with pytest.raises(ValueError, match="backbone"):
            ExtractorConfig(backbone="ResNet50")

    def test_expected_dims_table(self):
        assert BACKBONE_DIMS["DenseNet121"] == 1024
        assert BACKBONE_DIMS["DenseNet169"] == 1664
        assert BACKBONE_DIMS["DenseNet201"] == 1920
        assert BACKBONE_DIMS["InceptionResNetV2"] == 1536
        assert BACKBONE_DIMS["Xception"] == 2048
        assert BACKBONE_DIMS["VGG16"] == 512
        assert BACKBONE_DIMS["VGG19"] == 512

    def test_bad_sizes_rejected(self):
        with pytest.raises(ValueError):
            ExtractorConfig(resize_size=200, input_size=224)
        with pytest.raises(ValueError):
            ExtractorConfig(batch_size=0)


class TestExtraction:
    def test_densenet121_on_ten_images(self, image_dir, tmp_path):
        out = str(tmp_path / "dn121.emb")
        cfg = ExtractorConfig(backbone="DenseNet121", batch_size=4)
        extract(str(image_dir), cfg, out)
        m = read_embedding_file(out)  # consumer-side validation
        assert m.n == 10
        assert m.dim == 1024
        assert m.source_model == "DenseNet121"
        assert all(sid.endswith(".png") for sid in m.sample_ids)

    def test_vgg16_dim(self, image_dir, tmp_path):
        out = str(tmp_path / "vgg16.emb")
        cfg = ExtractorConfig(backbone="VGG16", batch_size=4)
        extract(str(image_dir), cfg, out)
        m = read_embedding_file(out)
        assert m.dim == 512

    def test_duplicate_manifest_rows_identical(self, image_dir, tmp_path):
        manifest = tmp_path / "manifest.csv"
        target = str(image_dir / "img00.png")
        manifest.write_text(f"path\n{target}\n{target}\n", encoding="utf-8")
        out = str(tmp_path / "dup.emb")
        extract(str(manifest), ExtractorConfig(backbone="VGG16"), out)
        m = read_embedding_file(out)
        assert m.n == 2
        assert m.data[0].tobytes() == m.data[1].tobytes()

    def test_unreadable_image_skipped_with_sidecar(self, image_dir, tmp_path):
        broken_dir = tmp_path / "broken"
        broken_dir.mkdir()
        (broken_dir / "ok.png").write_bytes((image_dir / "img00.png").read_bytes())
        (broken_dir / "bad.png").write_bytes(b"not an image")
        out = str(tmp_path / "skip.emb")
        extract(str(broken_dir), ExtractorConfig(backbone="VGG16"), out)
        m = read_embedding_file(out)
        assert m.sample_ids == ("ok.png",)
        sidecar = (tmp_path / "skip.emb.skipped.txt").read_text()
        assert "bad.png" in sidecar

    def test_all_unreadable_fails(self, tmp_path):
        broken_dir = tmp_path / "allbad"
        broken_dir.mkdir()
        (broken_dir / "bad.png").write_bytes(b"nope")
        with pytest.raises(ValueError, match="unreadable"):
            extract(str(broken_dir), ExtractorConfig(backbone="VGG16"),
                    str(tmp_path / "x.emb"))

    def test_empty_input_fails(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(ValueError, match="no images"):
            extract(str(empty), ExtractorConfig(), str(tmp_path / "x.emb"))
