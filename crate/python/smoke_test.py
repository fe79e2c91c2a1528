"""Exercises the Python bindings end to end on small inputs.

Build first with `pip install --no-build-isolation -e crates/python`.
"""

import json
import math
import random
import sys
import tempfile

import autolabel_py as al


def check(cond, msg):
    if not cond:
        print(f"FAIL: {msg}")
        sys.exit(1)


def blobs(n, seed):
    rng = random.Random(seed)
    centers = [(0.0, 0.0), (5.0, 0.0), (2.5, 4.3)]
    x, y = [], []
    for i in range(n):
        c = centers[i % 3]
        x.append([c[0] + rng.gauss(0, 0.7), c[1] + rng.gauss(0, 0.7)])
        y.append(i % 3)
    return x, y


def main():
    cam = al.CameraModel([500.0, 500.0, 320.0, 240.0], [[1, 0, 0], [0, 1, 0], [0, 0, 1]], [0, 0, 0], 640, 480)
    check(cam.project([0.1, -0.05, 2.0]) == (345.0, 227.5, 2.0), "camera projection")
    back = cam.unproject(345.0, 227.5, 2.0)
    check(max(abs(a - b) for a, b in zip(back, [0.1, -0.05, 2.0])) < 1e-12, "camera round trip")

    check(abs(al.iou([0, 0, 9, 9], [5, 0, 14, 9]) - 1 / 3) < 1e-12, "iou")
    s = al.soften([0.8, 0.2], 2.0)
    check(abs(s[0] - 2 / 3) < 1e-6, "soften")
    loss, grad = al.distill_loss("sse", [0.0, 0.0], [0.5, 0.5], 2.0)
    check(abs(loss) < 1e-12 and len(grad) == 2, "sse loss")
    try:
        al.distill_loss("hinge", [0.0], [1.0], 1.0)
        check(False, "unknown loss accepted")
    except ValueError:
        pass

    c = al.connectability([0, 0, 0, 10, 10, 10], [0, 0, 1], [0.01, 0, 0, 14, 10, 10], [0, 0, 1])
    check(c[3] and abs(c[1] - 0.5) < 1e-12, "connectability")

    scene = al.generate_scene(3)
    check(len(scene.points) == len(scene.point_object), "scene ids")
    props = al.detect_objects(scene.points, list(scene.camera.unproject(320, 240, 0.0)))
    check(len(props) == len(scene.objects), f"{len(props)} proposals for {len(scene.objects)} objects")

    x, y = blobs(150, 1)
    teacher = al.Teacher.train(x, y, 3, num_inducing=16, epochs=60, seed=1)
    probs = teacher.predict_proba(x, mc_samples=16, seed=2)
    acc = sum(max(range(3), key=p.__getitem__) == t for p, t in zip(probs, y)) / len(y)
    check(acc >= 0.9, f"teacher accuracy {acc:.3f}")
    check(all(abs(sum(p) - 1) < 1e-9 for p in probs), "teacher rows sum to one")

    student = al.Student.train(x, probs, epochs=60, seed=1)
    sp = student.predict(x)
    sacc = sum(max(range(3), key=p.__getitem__) == t for p, t in zip(sp, y)) / len(y)
    check(sacc >= 0.9, f"student accuracy {sacc:.3f}")
    check(student.loss_trace[-1] < student.loss_trace[0], "student loss decreases")

    with tempfile.TemporaryDirectory() as root:
        p = al.Pipeline(workdir=root, seed=5)
        cfg = json.loads(p.config_json())
        cfg.update(train_scenes=10, test_scenes=4)
        cfg["hand_labels"].update(per_class=8, background=8)
        path = f"{root}/config.json"
        with open(path, "w") as f:
            json.dump(cfg, f)
        p = al.Pipeline(config_path=path)
        check(len(p.synth("train")) == 10, "synth train")
        p.synth("test")
        check(p.autolabel("train") > 0, "autolabel")
        p.simulate_hand_labels()
        examples, first, last = p.train_teacher()
        check(examples > 0 and math.isfinite(last), "teacher stage")
        p.label()
        p.train_student()
        report = json.loads(p.evaluate("student"))
        check(set(report["per_class"]) == set(cfg["class_names"]), "report classes")
        try:
            al.Pipeline(config_path=f"{root}/missing.json")
            check(False, "missing config accepted")
        except OSError:
            pass

    print("python smoke test: all checks passed")


if __name__ == "__main__":
    main()
