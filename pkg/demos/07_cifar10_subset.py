"""
Two CIFAR-10 classes
====================

The same pipeline on real images. Pass the directory holding the CIFAR-10
binary batches (``data_batch_*.bin`` and ``test_batch.bin``); no data ships
with the package.

    python3 07_cifar10_subset.py /path/to/cifar-10-batches-bin
"""

import sys
from pathlib import Path

from freqlens.attacks import AttackConfig, run_attack
from freqlens.datasets import load_cifar10
from freqlens.model import ConvNet, TrainConfig, evaluate, train

if len(sys.argv) != 2:
    sys.exit(__doc__)
root = Path(sys.argv[1])

# cat vs dog, the first 2000 training records of those classes
train_set = load_cifar10(root / "data_batch_1.bin", classes=[3, 5], limit=2000)
test_set = load_cifar10(root / "test_batch.bin", classes=[3, 5], limit=200)
print(len(train_set), "training images,", len(test_set), "test images")

net0 = ConvNet.initialize(train_set.image_shape, 2, seed=0)
net, history = train(net0, train_set, TrainConfig(epochs=20))
print("test accuracy:", evaluate(net, test_set))

rep = run_attack(net, test_set.images, test_set.labels, AttackConfig(kind="pgd", epsilon=0.15, steps=20, step_size=0.02))
print("accuracy under PGD:", rep.accuracy_after)
