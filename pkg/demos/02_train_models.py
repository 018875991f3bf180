"""
Standard and adversarially trained networks
===========================================

Trains the desk-scale network three times on the synthetic shapes dataset:
once normally and twice with l2 PGD adversarial training. Results are cached,
so later demos reuse these exact models.
"""

import numpy as np

from freqlens import experiment as ex
from freqlens.model import evaluate

train, test = ex.train_set(), ex.test_set()
print(f"{len(train)} training images, {len(test)} test images, classes {train.class_names}")

# %%
# A few pixels of one image per class give a feel for the data.
for c, name in enumerate(train.class_names):
    img = train.images[np.flatnonzero(train.labels == c)[0], 0]
    print(name, np.round(img[6:10, 6:10], 2).tolist())

# %%
# Standard training.
std, history = ex.load_or_train(ex.STANDARD)
for m in history:
    print(f"epoch {m.epoch:2d}  loss {m.loss:.4f}  train acc {m.train_accuracy:.3f}")
print("test accuracy:", evaluate(std, test))

# %%
# Adversarial training at the two budgets. Each batch is replaced by PGD
# examples before the update, so robust accuracy is bought with clean
# accuracy.
for eps in ex.ROBUST_EPSILONS:
    net, history = ex.load_or_train(ex.robust_config(eps))
    print(f"eps={eps}: train {history[-1].train_accuracy:.3f}, test {evaluate(net, test):.3f}")
