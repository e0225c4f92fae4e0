"""Smoke test for the meshseq extension module.

Build and install first, e.g. ``maturin develop -m crates/python/Cargo.toml``.
"""

import json
import os
import tempfile

import meshseq


def main():
    rest, frames = meshseq.synth_sequence("bend-bar", 20, vertices=12, around=5)
    assert rest.vertex_count == 12 and len(frames) == 20

    codec = meshseq.Codec(rest)
    feats = codec.encode_sequence(frames)
    anchors = [m.vertices[0] for m in frames]
    back = codec.decode_sequence(feats, anchors)
    per_frame, mean = meshseq.eval_position_error(back, frames)
    assert mean < 1e-6 * rest.bbox_diagonal(), mean
    print(f"codec roundtrip mean error {mean:.2e}")

    config = json.dumps({
        "iterations": 5, "batch": 2, "seq_len": 6, "seed": 1,
        "model": {"conv_widths": [4, 5, 6], "latent": 8, "lstm_layers": 1, "lstm_hidden": 16},
    })
    trainer = meshseq.Trainer(rest, [frames], config)
    trainer.run()
    assert trainer.iteration == 5 and len(trainer.log) == 5
    print("losses", [round(row[1], 4) for row in trainer.log])

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.ckpt")
        trainer.save(path)
        model = meshseq.TrainedModel.load(path)
    generated = model.generate(frames[:2], 4)
    assert len(generated) == 4
    done = model.complete(frames[0], frames[6], 7, diversity_seed=3)
    assert len(done) == 7 and done[0].vertices == frames[0].vertices

    star = [0.3, -0.2, 0.1]
    best, value, _ = meshseq.cmaes_minimize(
        lambda xs: [sum((a - b) ** 2 for a, b in zip(x, star)) for x in xs],
        [0.0, 0.0, 0.0], sigma0=0.2)
    assert value < 1e-10, value
    print("cmaes best", [round(x, 6) for x in best])
    print("ok")


if __name__ == "__main__":
    main()
