"""Transfer tour: pretrain a hierarchical morph tagger, transplant its
BiLSTM layers into the parser, compare unfreezing schedules.

Run me:  python3 demos/05_transfer_schedules.py   (about a minute)
"""

from dataclasses import replace

from morphparse import (PipelineSpec, TrainConfig, base_star_config,
                        gen_synthetic, report, run_base, run_transeq,
                        train_hier_morph_tagger)

train = gen_synthetic(seed=51, n_sentences=20, name="train")
test = gen_synthetic(seed=52, n_sentences=40, name="test")
extra = gen_synthetic(seed=53, n_sentences=60, name="extra")

config = replace(TrainConfig.desk(seed=1), epochs=15)

# One three-layer BiLSTM, three tagging heads reading successive layers:
# number tags off layer 1, gender off layer 2, case off layer 3.
hier = train_hier_morph_tagger(extra, replace(config, epochs=25))
print("pretrained hierarchical tagger on the extra split")

rows = []
for schedule in ("FE", "FEA", "UF", "DL", "FT"):
    spec = PipelineSpec(variant=f"transeq_{schedule.lower()}", train=train,
                        test=test, hier_checkpoint=hier, run_name=schedule)
    result = run_transeq(spec, config, schedule)
    rows.append((f"transeq-{schedule}", result.score))
    print(f"{schedule:<4} n_parameters={result.metrics['n_parameters']}")

# Base* is the fair baseline: same 4-layer architecture, no transfer.
star = run_base(PipelineSpec(train=train, test=test, run_name="base-star"),
                base_star_config(config))
rows.append(("base-star", star.score))

text, _ = report(rows)
print("\n" + text)
print("FE freezes the transplant; FEA adds adapters; UF unfreezes top-down")
print("on a cadence; DL decays learning rates with depth; FT tunes all.")
