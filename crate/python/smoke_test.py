#!/usr/bin/env python3
"""Smoke test for the har_py extension module.

Build the module first:

    cargo build -p har-py --release

then run this script from the repository root:

    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile


def _import_har_py():
    """Load har_py from the cargo target directory."""
    here = os.path.dirname(os.path.abspath(__file__))
    root = os.path.dirname(here)
    candidates = [
        os.path.join(root, "target", profile, name)
        for profile in ("release", "debug")
        for name in ("libhar_py.so", "libhar_py.dylib", "har_py.dll")
    ]
    for built in candidates:
        if os.path.exists(built):
            link_dir = tempfile.mkdtemp(prefix="har_py_")
            suffix = ".pyd" if built.endswith(".dll") else ".so"
            link = os.path.join(link_dir, "har_py" + suffix)
            os.symlink(built, link)
            sys.path.insert(0, link_dir)
            import har_py

            return har_py
    sys.exit("har_py is not built; run `cargo build -p har-py --release` first")


har = _import_har_py()


def make_window(cls, instance, window_len, channels):
    rows = []
    for t in range(window_len):
        row = []
        for ch in range(channels):
            base = math.sin(t * (cls + 1) / 6.0 + ch * 0.9) * 0.8 + cls * 0.5
            jitter = math.sin(t * 7.31 + instance * 13.7 + ch) * 0.05
            row.append(base + jitter)
        rows.append(row)
    return rows


def main():
    # geometry arithmetic on the default configuration
    cfg_default = har.ModelConfig()
    trace = dict(har.shape_trace(cfg_default))
    assert trace["conv1"] == [60, 141], trace
    assert trace["pool"] == [60, 61], trace
    assert trace["conv2"] == [60, 56], trace
    assert trace["flatten"] == [3360], trace
    assert trace["fc1"] == [1000], trace
    assert trace["out"] == [20], trace
    print("shape_trace: ok", trace)

    # small utilities
    assert har.one_hot(2, 5) == [0.0, 0.0, 1.0, 0.0, 0.0]
    probs = har.softmax([0.0, 0.0, 0.0, 0.0])
    assert all(abs(p - 0.25) < 1e-12 for p in probs)
    big = har.softmax([1000.0, 1000.0])
    assert all(math.isfinite(p) for p in big) and abs(sum(big) - 1.0) < 1e-9
    print("one_hot/softmax: ok")

    # segmentation arithmetic
    rows = [[float(t)] for t in range(100)]
    windows = har.segment(rows, 40, 20)
    assert len(windows) == 4, len(windows)
    assert windows[1][0][0] == 20.0
    print("segment: ok")

    # train a tiny model on separable synthetic windows
    window_len, channels, num_classes = 40, 2, 3
    cfg = har.ModelConfig(
        window_len,
        channels,
        num_classes,
        conv1_kernel=8,
        conv1_channels=6,
        pool_window=4,
        pool_stride=2,
        conv2_kernel=3,
        conv2_channels=6,
        fc_units=24,
        stride=20,
    )
    data = [
        (make_window(cls, i, window_len, channels), cls)
        for cls in range(num_classes)
        for i in range(10)
    ]
    model = har.train_windows(
        data,
        cfg,
        epochs=40,
        batch_size=8,
        learning_rate=2e-3,
        seed=7,
        class_names=["jump", "walk", "wave"],
    )
    final = model.history[-1]
    print(f"train: epoch={final[0]} train_acc={final[2]:.3f} test_acc={final[4]:.3f}")
    assert final[2] == 1.0, "expected the toy set to be interpolated"

    label, probs = model.predict(make_window(1, 99, window_len, channels))
    assert model.class_names[label] == "walk", (label, probs)
    assert abs(sum(probs) - 1.0) < 1e-9
    print("predict: ok", model.class_names[label], max(probs))

    # checkpoint round trip preserves predictions bitwise
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.harn")
        model.save(path)
        back = har.load(path)
        for cls in range(num_classes):
            probe = make_window(cls, 77, window_len, channels)
            assert model.predict(probe) == back.predict(probe)
    print("checkpoint round trip: ok")

    # metrics helpers
    cm = har.confusion_matrix([0, 1, 1, 0], [0, 1, 0, 0], 2)
    assert cm == [[2, 1], [0, 1]], cm
    m = har.metrics([[3, 1], [2, 4]], averaging="weighted")
    assert abs(m["accuracy"] - 0.7) < 1e-12
    assert abs(m["recall"] - 0.7) < 1e-12
    assert abs(m["precision"] - 0.72) < 1e-12
    print("metrics: ok", m)

    print("smoke test passed")


if __name__ == "__main__":
    main()
