#!/usr/bin/env python3
# The fine-tuning attack: an adversary holds the locked model, guesses a key,
# and retrains on a small "manifest" dataset (here 10% of the training data).
# The wrong-key initialization is saturated with NaN/Inf weights, the first
# gradient step poisons everything else, and validation accuracy never leaves
# chance. The control arm proves the data budget is not the bottleneck: the
# same training from a fresh initialization works fine.
#
# Writes attack_curve.csv and control_curve.csv next to this script.

import os

from modellock import (
    TrainConfig,
    build_model,
    emit_report,
    fine_tune_attack,
    fine_tune_control,
    generate_wrong_keys,
    lock_model,
    manifest_split,
    parse_architecture,
    synthetic_dataset,
    train,
)

key = bytes.fromhex("000102030405060708090a0b0c0d0e0f")

arch = parse_architecture("""
input 1x16x16
conv 6 3x3 stride 1 pad valid relu
maxpool 2x2 stride 2
flatten
dense 32 relu
dense 10 linear
""")
train_set = synthetic_dataset(num_classes=10, per_class=100, image_size=16, seed=1)
val_set = synthetic_dataset(num_classes=10, per_class=40, image_size=16, seed=2)

owner_model = build_model(arch, seed=3)
owner_model, _ = train(owner_model, train_set, TrainConfig(epochs=8, learning_rate=0.1, seed=4))
locked = lock_model(owner_model, key)

manifest = manifest_split(train_set, 0.10, seed=5)
print(f"adversary's manifest: {len(manifest)} samples "
      f"({len(manifest) / len(train_set):.0%} of training data)")

wrong_key = generate_wrong_keys(1, seed=6, true_key=key)[0]
cfg = TrainConfig(epochs=30, batch_size=32, learning_rate=0.08, seed=7)

attack = fine_tune_attack(locked, wrong_key, manifest, val_set, cfg, fraction=0.10)
control = fine_tune_control(locked, init_seed=8, manifest=manifest, val=val_set,
                            cfg=cfg, fraction=0.10)

print("\nepoch  attack-val  control-val")
for i in range(0, cfg.epochs, 5):
    print(f"{i:5d}  {attack.per_epoch_val_accuracy[i]:10.3f}"
          f"  {control.per_epoch_val_accuracy[i]:11.3f}")
print(f"final  {attack.final_accuracy:10.3f}  {control.final_accuracy:11.3f}")
print(f"\nepochs with non-finite losses during the attack: "
      f"{attack.nonfinite_epochs}/{cfg.epochs}")

here = os.path.dirname(os.path.abspath(__file__))
emit_report(attack, "csv", os.path.join(here, "attack_curve.csv"))
emit_report(control, "csv", os.path.join(here, "control_curve.csv"))
print("wrote attack_curve.csv and control_curve.csv")
