"""
Baseline vs unsupervised attention vs mask-guided attention
===========================================================

All three variants start from the same weights for a given seed, so the only
difference is the attention branch and whether the mask supervises it.
"""

from mgattn import BackboneConfig, SynthSpec, TrainConfig, ablate, generate

spec = SynthSpec(num_classes=3, samples_per_class=30, inter_class_angle_delta=10.0)
data = generate(spec)
train_set = [s for s in data if int(s.name[1:]) < 20]
test_set = [s for s in data if int(s.name[1:]) >= 20]

result = ablate(
    train_set,
    test_set,
    TrainConfig(epochs=15, batch_size=4),
    BackboneConfig(),
    seeds=(0, 1),
)
print(result.table())
