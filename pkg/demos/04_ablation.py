"""
With and without the extra terms
================================

Same teacher, same seeds; the baseline switches off both activation
regularizers and the mixup term.  We count how many outer steps each
needs to reach 95% agreement on held-out points.
"""

from dfkd import data, nn
from dfkd.distill import DistillConfig, final_agreement, run_distillation, steps_to_threshold

train = data.make_two_moons(1000, 0.1, seed=0)
heldout = data.make_two_moons(1000, 0.1, seed=1)
teacher = nn.init_network("input(2), dense(2,64), relu, dense(64,64), relu, dense(64,2)",
                          "teacher", seed=0)
nn.train_classifier(teacher, train.inputs, train.labels, steps=2000)
teacher.requires_grad_(False)

full = DistillConfig(total_steps=400)
variants = {
    "baseline": full.replace(w_logit_reg=0.0, w_feat_reg=0.0, w_mixup=0.0),
    "+reg": full.replace(w_mixup=0.0),
    "+mixup": full.replace(w_logit_reg=0.0, w_feat_reg=0.0),
    "+both": full,
}

print(f"{'seed':>4} " + " ".join(f"{v:>10}" for v in variants))
for seed in range(3):
    cells = []
    for cfg in variants.values():
        m = run_distillation(teacher, cfg.replace(seed=seed), eval_points=heldout.inputs,
                             eval_every=10).metrics
        hit = steps_to_threshold(m, 0.95)
        cells.append(f"{hit if hit else '-':>5}/{final_agreement(m):.2f}")
    print(f"{seed:>4} " + " ".join(f"{c:>10}" for c in cells))
