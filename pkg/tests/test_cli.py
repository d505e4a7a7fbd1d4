import json
import shutil

import numpy as np
import pytest

from yolov1.cli import detections_to_json, main
from yolov1.dataset_io import ClassTable, read_ppm, read_yolo_labels, write_ppm
from yolov1.network import FLATTEN, ArchitectureDef, conv, fc, maxpool, random_weights, save_weights
from yolov1.tensor_codec import Detection, GridConfig, TargetTensor, encode

TABLE = ClassTable()


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def synth_dataset(tmp_path, n=4, size=64):
    root = tmp_path / "synth"
    assert main(["synth", "--out", str(root), "--n", str(n), "--size", str(size), "--seed", "3", "--quiet"]) == 0
    return root


class TestConvert:
    def test_golden(self, tmp_path, fixtures, capsys):
        code, out, _ = run(capsys, "convert", "--voc-dir", fixtures / "voc", "--out-dir", tmp_path)
        assert code == 0
        assert out.startswith("converted 3 files,")
        assert "0 skipped" in out
        golden = fixtures / "voc_golden" / "labels"
        produced = sorted(p.name for p in (tmp_path / "labels").iterdir())
        assert produced == sorted(p.name for p in golden.iterdir())
        for name in produced:
            assert (tmp_path / "labels" / name).read_bytes() == (golden / name).read_bytes()

    def test_empty_directory(self, tmp_path, capsys):
        (tmp_path / "voc" / "Annotations").mkdir(parents=True)
        code, out, _ = run(capsys, "convert", "--voc-dir", tmp_path / "voc", "--out-dir", tmp_path / "out")
        assert code == 0
        assert out == "converted 0 files, 0 objects, 0 skipped(difficult retained, flagged)\n"

    def test_malformed_file(self, tmp_path, fixtures, capsys):
        voc = tmp_path / "voc"
        shutil.copytree(fixtures / "voc", voc)
        (voc / "Annotations" / "000002.xml").write_text("<annotation><size>", encoding="utf-8")
        code, out, err = run(capsys, "convert", "--voc-dir", voc, "--out-dir", tmp_path / "out")
        assert code == 1
        assert out.startswith("converted 2 files,") and "1 skipped" in out
        assert "000002.xml" in err
        assert sorted(p.stem for p in (tmp_path / "out" / "labels").glob("*.txt")) == ["000001", "000003"]

    def test_missing_directory(self, tmp_path, capsys):
        code, _, err = run(capsys, "convert", "--voc-dir", tmp_path / "nope", "--out-dir", tmp_path)
        assert code == 1 and "error" in err


class TestAugment:
    def test_deterministic(self, tmp_path, capsys):
        root = synth_dataset(tmp_path)
        for out in ("a", "b"):
            assert run(capsys, "augment", "--dataset", root, "--out", tmp_path / out, "--seed", 11)[0] == 0
        for sub in ("images", "labels"):
            for p in sorted((tmp_path / "a" / sub).iterdir()):
                assert p.read_bytes() == (tmp_path / "b" / sub / p.name).read_bytes()

    def test_identity_config(self, tmp_path, capsys):
        root = synth_dataset(tmp_path)
        cfg = tmp_path / "identity.cfg"
        cfg.write_text("".join(f"{k} = 0\n" for k in (
            "jitter_p", "blur_p", "grayscale_p", "hflip_p", "vflip_p", "rotation_p", "scale_p")))
        assert run(capsys, "augment", "--dataset", root, "--out", tmp_path / "o", "--config", cfg)[0] == 0
        for p in sorted((root / "images").iterdir()):
            assert (tmp_path / "o" / "images" / p.name).read_bytes() == p.read_bytes()
        for p in sorted((root / "labels").iterdir()):
            got = read_yolo_labels((tmp_path / "o" / "labels" / p.name).read_text(), TABLE)
            want = read_yolo_labels(p.read_text(), TABLE)
            assert len(got) == len(want)
            for g, w in zip(got, want):
                assert g.class_id == w.class_id
                assert np.allclose(g.fields(), w.fields(), atol=5e-7, rtol=0)
        assert len(list((tmp_path / "o" / "previews").iterdir())) == 4

    def test_missing_label_is_reported(self, tmp_path, capsys):
        root = synth_dataset(tmp_path, n=2)
        (root / "labels" / "synth_000001.txt").unlink()
        code, _, err = run(capsys, "augment", "--dataset", root, "--out", tmp_path / "o")
        assert code == 1 and "synth_000001" in err
        assert (tmp_path / "o" / "images" / "synth_000000.ppm").exists()


class TestForward:
    def toy(self, tmp_path):
        layers = (conv(4, 3, stride=2, activation="leaky_relu"), maxpool(), FLATTEN, fc(1470))
        arch = ArchitectureDef("toy", layers, 16, 16, 3, GridConfig())
        arch_path = tmp_path / "toy.json"
        arch_path.write_text(json.dumps(arch.as_dict()))
        w_path = tmp_path / "toy.ywt"
        w_path.write_bytes(save_weights(arch, random_weights(arch, seed=1)))
        return arch_path, w_path

    def test_toy_arch(self, tmp_path, capsys):
        arch_path, w_path = self.toy(tmp_path)
        img = tmp_path / "img.ppm"
        img.write_bytes(write_ppm(np.random.default_rng(0).integers(0, 256, (30, 20, 3), dtype=np.uint8)))
        code, out, _ = run(capsys, "forward", "--arch", arch_path, "--weights", w_path, "--image", img,
                           "--conf", 0.0, "--annotate", tmp_path / "ann", "--tensor-out", tmp_path / "t")
        assert code == 0
        result = json.loads(out)
        assert [r["image"] for r in result] == ["img"]
        dets = result[0]["detections"]
        assert 0 < len(dets) <= 100
        assert all(set(d) == {"class", "name", "score", "cx", "cy", "w", "h"} for d in dets)
        assert read_ppm((tmp_path / "ann" / "img.ppm").read_bytes()).shape == (30, 20, 3)
        assert TargetTensor.from_bytes((tmp_path / "t" / "img.bin").read_bytes()).values.shape == (7, 7, 30)

    def test_weight_mismatch(self, tmp_path, capsys):
        _, w_path = self.toy(tmp_path)
        img = tmp_path / "img.ppm"
        img.write_bytes(write_ppm(np.zeros((4, 4, 3), np.uint8)))
        code, _, err = run(capsys, "forward", "--arch", "ms6", "--weights", w_path, "--image", img)
        assert code == 1 and "cannot load model" in err

    def test_detect_alias_and_bad_image(self, tmp_path, capsys):
        arch_path, w_path = self.toy(tmp_path)
        bad = tmp_path / "bad.ppm"
        bad.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        code, out, _ = run(capsys, "detect", "--arch", arch_path, "--weights", w_path, "--image", bad)
        assert code == 1 and json.loads(out) == []


class TestEval:
    def write_gt_detections(self, root, path, scores=None):
        entries = []
        for i, stem in enumerate(sorted(p.stem for p in (root / "labels").iterdir())):
            labels = read_yolo_labels((root / "labels" / f"{stem}.txt").read_text(), TABLE)
            dets = [Detection(b.class_id, 1.0 if scores is None else scores[i], b) for b in labels]
            entries.append(detections_to_json(stem, dets, TABLE))
        path.write_text(json.dumps(entries))

    def test_perfect_synthetic(self, tmp_path, capsys):
        root = synth_dataset(tmp_path, n=6)
        dets = tmp_path / "dets.json"
        self.write_gt_detections(root, dets)
        code, out, _ = run(capsys, "eval", "--detections", dets, "--dataset", root, "--pr-csv", tmp_path / "pr")
        assert code == 0
        report = json.loads(out)
        assert report["map"] == 1.0 and report["mode"] == "elevenpoint"
        assert set(report["per_class"].values()) == {1.0}
        assert len(list((tmp_path / "pr").iterdir())) == len(report["per_class"])

    def test_score_values_do_not_matter_for_perfect(self, tmp_path, capsys):
        root = synth_dataset(tmp_path, n=6)
        dets = tmp_path / "dets.json"
        self.write_gt_detections(root, dets, scores=[0.9, 0.1, 0.5, 0.3, 0.7, 0.2])
        code, out, _ = run(capsys, "eval", "--detections", dets, "--dataset", root, "--mode", "allpoint")
        assert code == 0 and json.loads(out)["map"] == 1.0

    def test_empty_detections(self, tmp_path, capsys):
        root = synth_dataset(tmp_path, n=2)
        dets = tmp_path / "dets.json"
        dets.write_text("[]")
        code, out, _ = run(capsys, "eval", "--detections", dets, "--dataset", root)
        assert code == 0 and json.loads(out)["map"] == 0.0


class TestCodecCommands:
    def test_encode_decode_round_trip(self, tmp_path, capsys):
        root = synth_dataset(tmp_path, n=1)
        labels = root / "labels" / "synth_000000.txt"
        assert run(capsys, "encode", "--labels", labels, "--out", tmp_path / "t.bin")[0] == 0
        tensor = TargetTensor.from_bytes((tmp_path / "t.bin").read_bytes())
        want = read_yolo_labels(labels.read_text(), TABLE)
        assert np.array_equal(tensor.values, encode(want, GridConfig()).values)
        code, out, _ = run(capsys, "decode", "--tensor", tmp_path / "t.bin")
        got = read_yolo_labels(out, TABLE)
        key = lambda b: (b.class_id, *b.fields())
        assert np.allclose([key(b) for b in sorted(got)], [key(b) for b in sorted(want)], atol=5e-7, rtol=0)

    def test_loss_eval(self, tmp_path, capsys):
        root = synth_dataset(tmp_path, n=1)
        labels = root / "labels" / "synth_000000.txt"
        run(capsys, "encode", "--labels", labels, "--out", tmp_path / "t.bin")
        code, out, _ = run(capsys, "loss-eval", "--pred", tmp_path / "t.bin", "--target", tmp_path / "t.bin")
        result = json.loads(out)
        assert code == 0
        assert set(result) == {"coord", "obj", "noobj", "class", "total"}
        assert result["total"] == 0.0


class TestSchedule:
    def test_rows(self, tmp_path, capsys):
        code, out, _ = run(capsys, "schedule", "--kind", "onecycle_cosine", "--lr", 0.01, "--steps", 1000)
        rows = out.splitlines()
        assert code == 0 and rows[0] == "step,lr" and len(rows) == 1001
        assert float(rows[1].split(",")[1]) == pytest.approx(0.0004)

    def test_multistep(self, capsys):
        code, out, _ = run(capsys, "schedule", "--kind", "multistep", "--lr", 0.01, "--steps", 251,
                           "--milestones", 100, 200)
        rates = [float(r.split(",")[1]) for r in out.splitlines()[1:]]
        assert rates[99] == 0.01 and rates[100] == 0.001 and rates[250] == 0.0001

    def test_bad_arguments_exit(self, capsys):
        with pytest.raises(SystemExit):
            main(["schedule", "--steps", "0"])


def test_custom_class_table(tmp_path, capsys, fixtures):
    names = tmp_path / "classes.txt"
    names.write_text("\n".join(TABLE.names))
    code, _, _ = run(capsys, "convert", "--voc-dir", fixtures / "voc", "--out-dir", tmp_path, "--classes", names)
    assert code == 0
