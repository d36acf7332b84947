"""Smoke test for the pyanysleep extension.

Build first (`cargo build -p anysleep-py`), then run
`python3 crates/python/python/smoke_test.py`. The script loads the shared
library straight from the cargo target directory; set PYANYSLEEP_LIB to
point at another build.
"""

import importlib.util
import math
import os
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[3]


def find_library():
    env = os.environ.get("PYANYSLEEP_LIB")
    if env:
        return pathlib.Path(env)
    names = ["libpyanysleep.so", "libpyanysleep.dylib", "pyanysleep.dll"]
    candidates = [ROOT / "target" / p / n for p in ("release", "debug") for n in names]
    found = [c for c in candidates if c.exists()]
    if not found:
        sys.exit("pyanysleep library not found; run `cargo build -p anysleep-py` first")
    return max(found, key=lambda p: p.stat().st_mtime)


def load():
    spec = importlib.util.spec_from_file_location("pyanysleep", find_library())
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    sl = load()

    assert sl.RESOLUTIONS[0] == 1 and sl.RESOLUTIONS[-1] == 3840 and len(sl.RESOLUTIONS) == 14
    assert all(math.isclose(a, b) for a, b in zip(sl.dataset_probs(0.5, [10, 30]), [0.375, 0.625]))
    assert all(math.isclose(a, b) for a, b in zip(sl.channel_count_probs(3), [6 / 11, 3 / 11, 2 / 11]))
    assert sl.steps("usleep", 6, 1) == 150
    assert sl.steps("mid", 5, 1) == 98

    rec = sl.synth(3, n_eeg=2, n_eog=1, epochs=4)
    assert len(rec["signal"]) == 3 and len(rec["labels"]) == 4

    model = sl.Model("mid", seed=1, depth=2, base_filters=4)
    probs = model.predict(rec["signal"], resolution=8)
    assert len(probs) == 4 * 8
    assert all(abs(sum(row) - 1.0) < 1e-9 for row in probs)
    weights = model.attention(rec["signal"])
    assert all(abs(sum(w) - 1.0) < 1e-9 for w in weights)

    hyp = model.hypnogram(rec["signal"])
    truth = rec["labels"]
    score = sl.macro_f1(hyp, truth, policy="zero")
    assert 0.0 <= score <= 1.0

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.ckpt")
        model.save(path)
        again = sl.Model.load(path)
        assert again.predict(rec["signal"], resolution=8) == probs

    # Wake from 10 s to 16 s on 1.875-s rows gives one candidate.
    stages = [2] * 32
    for i in range(6, 9):
        stages[i] = 0
    cands = sl.derive_arousals(stages, 16)
    assert cands == [(11.25, 5.625)], cands
    matches, fp, fn = sl.iou_match(cands, [(11.0, 6.0)])
    assert len(matches) == 1 and not fp and not fn
    assert math.isclose(sl.wake_overlap_fraction(stages, 16, [(11.25, 5.625)]), 1.0)
    assert sl.derive_arousals([0, 2, 2], 1) == []

    blocks = sl.triplet_features([0, 1, 2] * 120, 1, [1] * 360)
    assert len(blocks) == 2 and all(len(b) == 80 for b in blocks)

    try:
        sl.steps("usleep", 3, 0)
    except ValueError:
        pass
    else:
        raise AssertionError("U-Sleep without EOG must be rejected")

    print("pyanysleep smoke test passed:", model)


if __name__ == "__main__":
    main()
