import json
import math
import struct
from dataclasses import replace

import numpy as np
import pytest

from lesion_attention import tensor as T
from lesion_attention.checkpoint import Checkpoint, checkpoint_load, checkpoint_save, decode, encode
from lesion_attention.data.augment import AugmentConfig
from lesion_attention.data.dataset import Sample
from lesion_attention.data.netpbm import load_pgm, quantize
from lesion_attention.data.synthetic import GenConfig, generate_dataset
from lesion_attention.errors import (
    CheckpointHeaderError,
    CheckpointMagicError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    DivergenceError,
    LesionAttentionError,
)
from lesion_attention.evaluation import evaluate, export_heatmap, heatmap_bytes
from lesion_attention.geometry import BoundingBox
from lesion_attention.losses import LossConfig
from lesion_attention.network import ConvBlock, NetConfig, build_network
from lesion_attention.training import (
    EarlyStopping,
    TrainConfig,
    batch_loss,
    cross_validate,
    inner_split,
    masks_for,
    prepare,
    sgd_step,
    summarize,
    train,
)

TINY_BLOCKS = (ConvBlock(4), ConvBlock(8))


def tiny(**kw):
    base = dict(epochs=3, batch_size=4, learning_rate=0.01, patience=2, input_side=16,
                blocks=TINY_BLOCKS, precision=64)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def samples():
    return generate_dataset(GenConfig(n_samples=30, image_side=32, seed=5))


@pytest.fixture(scope="module")
def split(samples):
    return inner_split(samples, seed=0, fraction_folds=3)


@pytest.fixture(scope="module")
def trained(split):
    fit, val = split
    return train(fit, val, tiny())


class TestUpdateRule:
    def test_sgd_example(self):
        w = T.Tensor(np.array([1.0]), requires_grad=True)
        w.grad = np.array([0.5])
        sgd_step([w], 0.1)
        assert w.data[0] == pytest.approx(0.95, abs=1e-15)

    def test_params_without_grad_untouched(self):
        w = T.Tensor(np.array([2.0]), requires_grad=True)
        sgd_step([w], 0.1)
        assert w.data[0] == 2.0


class TestEarlyStopping:
    def test_trace(self):
        stopper = EarlyStopping(5)
        trace = [0.60, 0.70, 0.70, 0.69, 0.68, 0.66, 0.65]
        stops = [stopper.update(v) for v in trace]
        assert stops == [False] * 6 + [True]
        assert stopper.best_epoch == 2 and stopper.best == 0.70

    def test_improvement_resets(self):
        stopper = EarlyStopping(2)
        assert [stopper.update(v) for v in (0.5, 0.4, 0.6, 0.6, 0.6)] == [False, False, False, False, True]
        assert stopper.best_epoch == 3


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(patience=40), dict(epochs=0), dict(learning_rate=0.0),
                                    dict(precision=16), dict(lam=2.0), dict(jaccard_variant="x")])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw).validate()

    def test_needs_both_classes(self, samples):
        negatives = [s for s in samples if s.label == 0]
        with pytest.raises(ConfigError):
            train(negatives, samples, tiny())


class TestTraining:
    def test_result_shape(self, trained):
        meta = trained.checkpoint.metadata
        assert 1 <= meta["best_epoch"] <= meta["epochs_run"] <= 3
        assert len(trained.log) == meta["epochs_run"]
        assert trained.log_csv().splitlines()[0] == "epoch,train_lt,train_lc,train_la,val_auc"
        assert meta["best_val_auc"] == max(r["val_auc"] for r in trained.log)

    def test_determinism(self, split, trained, tmp_path):
        fit, val = split
        again = train(fit, val, tiny())
        assert encode(again.checkpoint) == encode(trained.checkpoint)
        assert again.log_csv() == trained.log_csv()

    def test_best_weights_returned(self, split):
        fit, val = split
        res = train(fit, val, tiny(epochs=4, patience=4), record_history=True)
        best = res.checkpoint.metadata["best_epoch"]
        for name, w in res.checkpoint.weights.items():
            assert np.array_equal(w, res.history[best - 1][name])
        assert all(r["val_auc"] <= res.checkpoint.metadata["best_val_auc"] for r in res.log)

    def test_lambda_zero_matches_disabled_branch(self, split):
        fit, val = split
        a = train(fit, val, tiny(lam=0.0), record_history=True)
        b = train(fit, val, tiny(lam=0.66, attention=False), record_history=True)
        assert len(a.history) == len(b.history)
        for sa, sb in zip(a.history, b.history):
            for name in sa:
                assert sa[name].tobytes() == sb[name].tobytes()
        for ra, rb in zip(a.log, b.log):
            assert (ra["train_lt"], ra["train_lc"], ra["val_auc"]) == (rb["train_lt"], rb["train_lc"], rb["val_auc"])
            assert math.isnan(rb["train_la"]) and not math.isnan(ra["train_la"])

    def test_lambda_changes_trajectory(self, split, trained):
        fit, val = split
        other = train(fit, val, tiny(lam=0.2))
        assert encode(other.checkpoint) != encode(trained.checkpoint)

    def test_small_step_decreases_loss(self, samples):
        cfg = tiny()
        net = build_network(cfg.net_config(), seed=2)
        chunk = samples[:6]
        x, boxes = prepare(chunk, 16, np.float64)
        labels = np.array([[s.label] for s in chunk], dtype=float)
        masks = masks_for(boxes, 16, net.feature_side, np.float64)
        lc = LossConfig(pos_weight=2.0)

        def loss():
            return batch_loss(net, T.Tensor(x), labels, masks, lc, True, 7)[0]

        before = loss()
        T.backward(before)
        sgd_step(net.parameters(), 1e-6)
        net.zero_grad()
        assert float(loss().data) < float(before.data)

    def test_divergence_names_epoch_and_batch(self, samples):
        broken = list(samples)
        broken[3] = replace(broken[3], image=np.full_like(broken[3].image, np.nan))
        fit, val = broken[:20], samples[20:]
        with pytest.raises(DivergenceError) as info:
            train(fit, val, tiny(augment=AugmentConfig.off()))
        assert info.value.epoch == 1 and info.value.batch >= 1
        assert info.value.exit_code == 5

    def test_float32_training(self, split):
        fit, val = split
        res = train(fit, val, tiny(precision=32, epochs=2, patience=1))
        assert res.checkpoint.dtype == np.float32


class TestSummary:
    def test_all_ones(self):
        s = summarize([1.0] * 5)
        assert (s["mean"], s["std"], s["median"]) == (1.0, 0.0, 1.0)

    def test_two_values(self):
        s = summarize([0.8, 1.0])
        assert s["mean"] == pytest.approx(0.9) and s["median"] == pytest.approx(0.9)
        assert s["std"] == pytest.approx(0.1)

    def test_cross_validate_folds(self):
        data = generate_dataset(GenConfig(n_samples=100, melanoma_fraction=0.1, image_side=32, seed=3))
        reports, summary = cross_validate(data, 5, tiny(epochs=1, patience=1))
        assert len(reports) == 5 and summary["n"] == 5
        for fold, r in enumerate(reports):
            assert r.fold == fold
            assert len(r.records) == 20
            assert sum(rec["label"] for rec in r.records) == 2


class TestCheckpoint:
    def test_roundtrip_forward_bit_exact(self, trained, tmp_path):
        p = tmp_path / "m.ckpt"
        checkpoint_save(trained.checkpoint, p)
        loaded = checkpoint_load(p)
        x = np.random.default_rng(0).normal(size=(3, 3, 16, 16))
        with T.no_grad():
            a, fa = trained.checkpoint.to_network().forward(T.Tensor(x))
            b, fb = loaded.to_network().forward(T.Tensor(x))
        assert a.data.tobytes() == b.data.tobytes() and fa.data.tobytes() == fb.data.tobytes()
        assert loaded.metadata == json.loads(json.dumps(trained.checkpoint.metadata))
        checkpoint_save(loaded, tmp_path / "m2.ckpt")
        assert (tmp_path / "m2.ckpt").read_bytes() == p.read_bytes()

    def test_float32_roundtrip(self):
        net = build_network(NetConfig(input_side=8, blocks=(ConvBlock(2),)), seed=1, dtype=np.float32)
        ck = decode(encode(Checkpoint.from_network(net)))
        assert all(w.dtype == np.float32 for w in ck.weights.values())
        assert all(np.array_equal(w, net.params[n].data) for n, w in ck.weights.items())

    @pytest.fixture
    def blob(self):
        net = build_network(NetConfig(input_side=8, blocks=(ConvBlock(2),)), seed=1)
        return encode(Checkpoint.from_network(net, {"note": "x"}))

    def _header(self, blob):
        (n,) = struct.unpack("<Q", blob[8:16])
        return json.loads(blob[16:16 + n]), 16 + n

    def _rebuild(self, header, payload):
        h = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        return b"LSNATT01" + struct.pack("<Q", len(h)) + h + payload

    def test_bad_magic(self, blob):
        with pytest.raises(CheckpointMagicError) as info:
            decode(b"XSNATT01" + blob[8:])
        assert info.value.exit_code == 11

    def test_empty_file(self):
        with pytest.raises(CheckpointMagicError):
            decode(b"")

    def test_one_weight_short(self, blob):
        header, start = self._header(blob)
        n_weights = header["payload_bytes"] // 8
        with pytest.raises(CheckpointTruncatedError) as info:
            decode(blob[:-8])
        assert f"({n_weights} weights)" in str(info.value)
        assert info.value.exit_code == 12

    def test_truncated_header(self, blob):
        with pytest.raises(CheckpointTruncatedError):
            decode(blob[:20])

    def test_trailing_bytes(self, blob):
        with pytest.raises(CheckpointShapeError) as info:
            decode(blob + b"\0" * 8)
        assert info.value.exit_code == 13

    def test_layer_shape_disagrees_with_architecture(self, blob):
        header, start = self._header(blob)
        header["architecture"]["blocks"][0]["out_channels"] = 3
        with pytest.raises(CheckpointShapeError):
            decode(self._rebuild(header, blob[start:]))

    def test_version(self, blob):
        header, start = self._header(blob)
        header["format_version"] = 99
        with pytest.raises(CheckpointVersionError) as info:
            decode(self._rebuild(header, blob[start:]))
        assert info.value.exit_code == 14

    def test_garbage_header(self, blob):
        bad = b"LSNATT01" + struct.pack("<Q", 4) + b"\xff\xfe{]" + blob[16:]
        with pytest.raises(CheckpointHeaderError) as info:
            decode(bad)
        assert info.value.exit_code == 15

    def test_codes_are_distinct(self):
        classes = [CheckpointMagicError, CheckpointTruncatedError, CheckpointShapeError,
                   CheckpointVersionError, CheckpointHeaderError]
        assert len({c.exit_code for c in classes}) == len(classes)
        assert len({c.code for c in classes}) == len(classes)


class TestEvaluate:
    def test_deterministic_report(self, trained, split):
        _, val = split
        assert evaluate(trained.checkpoint, val).to_json() == evaluate(trained.checkpoint, val).to_json()

    def test_report_ranges(self, trained, samples):
        r = evaluate(trained.checkpoint, samples)
        assert 0 <= r.auc <= 1 and 0 <= r.cam_concentration_mean <= 1
        assert len(r.records) == len(samples)
        assert list(json.loads(r.to_json())) == sorted(json.loads(r.to_json()))

    def test_single_class_omits_auc(self, trained, samples):
        r = evaluate(trained.checkpoint, [s for s in samples if s.label == 1])
        assert r.auc is None and r.score_separation is None
        assert len(r.records) == sum(s.label for s in samples)

    def test_missing_box_warns(self, trained, samples):
        r = evaluate(trained.checkpoint, [replace(samples[0], box=None)] + list(samples[1:5]))
        assert r.records[0]["concentration"] is None
        assert r.warnings and r.warnings[0]["id"] == samples[0].id

    def test_perfect_separation(self):
        # one all-ones conv channel: the score grows with image brightness
        net = build_network(NetConfig(input_side=8, blocks=(ConvBlock(1),)), seed=0)
        net.params["conv0.weight"].data[:] = 1.0
        net.params["head.weight"].data[:] = 1.0
        data = []
        for k in range(6):
            level = 0.6 + 0.05 * k if k % 2 else 0.05 * k
            data.append(Sample(f"p{k}", np.full((3, 8, 8), level), k % 2, BoundingBox(2, 2, 6, 6)))
        assert evaluate(net, data).auc == 1.0


class TestHeatmap:
    def test_quantization_example(self, tmp_path):
        blob = heatmap_bytes(np.array([[0.0, 1.0], [0.5, 0.25]]))
        assert blob.endswith(bytes([0, 255, 128, 64]))

    def test_all_zero(self):
        assert heatmap_bytes(np.zeros((4, 4)), side=16).endswith(bytes(256))

    def test_export_native_and_upsampled(self, trained, samples, tmp_path):
        s = samples[1]
        cam = export_heatmap(trained.checkpoint, s.image, tmp_path / "n.pgm", box=s.box,
                             overlay_path=tmp_path / "o.ppm", native=True)
        native = load_pgm(tmp_path / "n.pgm")
        assert np.array_equal(native, quantize(cam))
        if cam.any():
            assert native.max() == 255
        export_heatmap(trained.checkpoint, s.image, tmp_path / "u.pgm")
        assert load_pgm(tmp_path / "u.pgm").shape == (16, 16)
        assert (tmp_path / "o.ppm").read_bytes().startswith(b"P6\n16 16\n255\n")

    def test_unwritable_path(self, trained, samples, tmp_path):
        with pytest.raises(LesionAttentionError, match="missing"):
            export_heatmap(trained.checkpoint, samples[0].image, tmp_path / "missing" / "x.pgm")
