"""Parser tour: train small, decode trees, score, save and reload.

Run me:  python3 demos/03_parse_and_evaluate.py   (about half a minute)
"""

import tempfile
from dataclasses import replace
from pathlib import Path

import morphparse.autodiff as ad
from morphparse import (PipelineSpec, TrainConfig, gen_synthetic, load_model,
                        predict, relation_breakdown, report, run_base, uas_las)

train = gen_synthetic(seed=1, n_sentences=100, name="train")
test = gen_synthetic(seed=2, n_sentences=20, name="test")

# Desk profile: the paper-shaped model scaled down to laptop size. The
# stock 0.33 dropout is tuned for starving the model on tiny treebanks;
# relax it here so one minute of training shows a clear curve.
config = TrainConfig.desk(seed=1, epochs=60)
config = replace(config, encoder=replace(config.encoder, dropout=0.15))
print(f"profile={config.profile} encoder={config.encoder.lstm_hidden}x"
      f"{config.encoder.lstm_layers} epochs={config.epochs}")

result = run_base(PipelineSpec(train=train, test=test, run_name="demo"), config)
print(f"trained: UAS {result.score.uas:.2f}  LAS {result.score.las:.2f}")

# Decode one sentence by hand: predict returns heads and relation labels.
streams = ad.SeedStreams(0)
sent = test.sentences[0]
tree = predict(sent, result.model, streams)
print("\nforms:", " ".join(sent.forms))
print("gold heads:", list(sent.heads))
print("pred heads:", tree.heads)
print("pred rels: ", tree.labels)

# Scoring: attachment scores plus a per-relation breakdown.
trees = [predict(s, result.model, streams) for s in test]
score = uas_las(test, trees)
text, _ = report([("demo-run", score)],
                 {"demo-run": relation_breakdown(test, trees)})
print("\n" + text)

# Checkpoints round-trip bit-exactly (sidecar carries the architecture).
with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "model.bin"
    from morphparse import save_model
    save_model(result.model, path)
    clone = load_model(path)
    redo = [predict(s, clone, ad.SeedStreams(0)) for s in test]
    assert all(a.heads == b.heads for a, b in zip(trees, redo))
    print("reloaded checkpoint reproduces every parse")
