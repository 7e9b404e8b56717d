"""Self-training tour: the gated multi-encoder pipelines at small scale.

A weak base parser auto-parses unlabeled text; tagging tasks derived from
those trees (and from gold morphology) pretrain auxiliary encoders that a
gate blends into the parser. Run me:

    python3 demos/04_self_training.py       (a few minutes)
"""

from dataclasses import replace

from morphparse import (PipelineSpec, TrainConfig, gen_synthetic, report,
                        run_base, run_pipeline)

train = gen_synthetic(seed=31, n_sentences=25, name="train")
dev = gen_synthetic(seed=32, n_sentences=25, name="dev")
test = gen_synthetic(seed=33, n_sentences=80, name="test")
extra = gen_synthetic(seed=34, n_sentences=80, name="extra")  # "unlabeled"

config = replace(TrainConfig.desk(seed=1), epochs=30, tagger_epochs=20)

rows = []
for variant in ("base", "dcst", "lcm"):
    spec = PipelineSpec(variant=variant, train=train, dev=dev, test=test,
                        extra=None if variant == "base" else extra,
                        run_name=variant)
    result = run_pipeline(spec, config)
    rows.append((variant, result.score))
    extras = ""
    if "schemes" in result.metrics:
        extras = f"  aux schemes: {', '.join(result.metrics['schemes'])}"
    print(f"{variant:<5} done{extras}")

text, _ = report(rows)
print("\n" + text)
print("dcst pretrains on tags read off its own auto-parses;")
print("lcm adds gold morphology tasks and a label tagger on predicted trees.")
