"""Smoke test for the anchorbridge extension module.

Build and install first:

    cd crates/py && maturin develop --release

then run `python python/smoke_test.py` from the repository root.
"""

import json
import math
import sys
import tempfile
from pathlib import Path
import xml.etree.ElementTree as ET

import anchorbridge as ab


def small_config(workdir):
    suite = Path(workdir) / "suite.toml"
    suite.write_text(
        'kinds = ["lane-fork", "emergency-brake"]\n'
        "seed_start = 1000\n"
        "seed_count = 2\n"
        "route_length = 150.0\n"
        "cruise_speed = 8.0\n"
        "max_time = 40.0\n"
    )
    text = ab.RunConfig().to_toml()
    text = text.replace('out_dir = "runs"', f'out_dir = "{workdir}"\nsuite = "{suite}"')
    cfg = ab.RunConfig(text)
    cfg.episodes_per_kind = 4
    cfg.epochs = 1
    cfg.denoiser_hidden = [16, 16]
    return cfg


def main():
    sched = ab.Schedule()
    a, s = sched.alpha_sigma(0.5)
    assert abs(a * a + s * s - 1.0) < 1e-9
    assert sched.t_max == 1.0

    with tempfile.TemporaryDirectory() as workdir:
        cfg = small_config(workdir)
        assert ab.RunConfig(cfg.to_toml()).hash() == cfg.hash()

        data = ab.generate_dataset(cfg)
        assert len(data) > 0
        assert len(ab.Dataset.from_text(data.to_text())) == len(data)

        anchors = ab.fit_anchors(cfg, data)
        assert len(anchors) == 20
        assert anchors.inertia >= 0.0
        again = ab.AnchorSet.from_text(anchors.to_text(cfg.hash()))
        assert again.points() == anchors.points()
        assert len(data.states()) == len(data.contexts()) == len(data)

        policy, log = ab.train(cfg, data, anchors, "bridge")
        assert policy.variant == "bridge"
        assert log.count("\n") >= 2

        blob = policy.checkpoint(cfg)
        assert isinstance(blob, bytes)
        loaded = ab.Policy.from_checkpoint(blob, cfg, anchors)
        p1 = policy.plan(cfg, "lane-fork", 1000, noise_seed=3)
        p2 = loaded.plan(cfg, "lane-fork", 1000, noise_seed=3)
        assert p1 == p2
        assert all(math.isfinite(v) for pt in p1["points"] for v in pt)

        trace = policy.trace(cfg, "emergency-brake", 1001, tick=20)
        frames = ab.render(trace)
        assert len(frames) == 21
        for svg in frames:
            ET.fromstring(svg)

        report = json.loads(policy.evaluate(cfg))
        assert report["report"]["episodes"] == 4
        expert = json.loads(ab.evaluate_expert(cfg))
        assert 0.0 <= expert["success_rate"] <= 100.0

        try:
            ab.Policy.from_checkpoint(b"not a checkpoint", cfg)
        except ab.AnchorBridgeError:
            pass
        else:
            raise AssertionError("corrupt checkpoint was accepted")

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
