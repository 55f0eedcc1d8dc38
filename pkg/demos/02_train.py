"""Pre-train and fine-tune a small k-degree network on the bundled MNIST subset.

Run:  python3 demos/02_train.py      (about a minute on one core)
"""
from kdegree import datasets, learning, netcore as nc

data = datasets.desk_splits(datasets.load_bundled_subset(), 100, 100, 300)
train, valid, test = (learning.LabeledBatch(d.images, d.labels)
                      for d in (data["train"], data["valid"], data["test"]))

spec = nc.TopologySpec((784, 200, 100, 10), (30, 20, 10), partition_layer=1, section_count=4)
model = nc.init_model(spec, nc.build_kdegree_mask(spec, seed=0), seed=0, kind="kdegree")
cfg = learning.TrainConfig(epochs_pretrain=5, epochs_finetune=15, batch_size=10,
                           learning_rate=1.0, pretrain_learning_rate=0.3)

# Greedy layer-wise RBM training; reconstruction error should go down.
model = learning.pretrain(model, train.inputs, cfg)
for layer, errs in enumerate(model.meta["pretrain_reconstruction"], 1):
    print(f"layer {layer} reconstruction: {errs[0]:.2f} -> {errs[-1]:.2f}")

# Supervised fine-tuning keeps the epoch with the best validation loss.
result = learning.finetune(model, train, cfg, learning.LossConfig(), valid)
print(result.trace_csv())
print(f"best epoch {result.best_epoch}, test error {learning.error_rate(result.model, test):.2f}%")
print("masked weights still zero:", result.model.masked_out_is_zero())
