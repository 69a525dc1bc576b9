// Minimal end-to-end use of the library: make a small synthetic dataset,
// train a head for a few epochs, and inspect one corrected prediction.

#include <cstdio>

#include "relbal/dataset.hpp"
#include "relbal/head.hpp"
#include "relbal/train.hpp"

int main() {
  relbal::SyntheticSpec spec;
  spec.num_classes = 4;
  spec.dim = 32;
  spec.samples_per_class = 160;  // 120 train + 40 heldout per class
  spec.cluster_spread = 1.0;
  spec.mean_separation = 3.0;
  spec.seed = 7;
  const relbal::Dataset full = relbal::generate_synthetic(spec);

  // Split inside each class block so both halves share the class means.
  relbal::Dataset train_ds, heldout;
  train_ds.num_classes = heldout.num_classes = spec.num_classes;
  train_ds.dim = heldout.dim = spec.dim;
  for (std::size_t c = 0; c < spec.num_classes; ++c)
    for (std::size_t i = 0; i < spec.samples_per_class; ++i)
      (i < 120 ? train_ds : heldout).samples.push_back(full.samples[c * 160 + i]);

  relbal::Rng noise_rng = relbal::Rng(7).split(17);
  train_ds = relbal::inject_label_noise(train_ds, 0.2, noise_rng);

  relbal::TrainConfig cfg;
  cfg.head.input_dim = spec.dim;
  cfg.head.reduced_dim = spec.dim;
  cfg.head.num_classes = spec.num_classes;
  cfg.head.anchors_per_class = 4;
  cfg.head.tokens = 4;
  cfg.head.heads = 2;
  cfg.epochs = 30;
  cfg.batch_size = 32;
  cfg.per_class = 80;
  cfg.eval_every = 10;
  cfg.seed = 7;

  const relbal::TrainResult result = relbal::train(train_ds, heldout, cfg);
  for (const relbal::EpochRecord& r : result.history)
    if (r.has_eval)
      std::printf("epoch %3zu  loss %.4f  heldout accuracy %.4f\n", r.epoch, r.total,
                  r.eval_accuracy);

  const relbal::PredictionRecord rec =
      relbal::predict(heldout.samples[0].embedding, result.params);
  std::printf("sample 0: true %d predicted %d  c_l %.3f c_g %.3f c_a %.3f\n",
              heldout.samples[0].label, rec.predicted, rec.c_l, rec.c_g, rec.c_a);
  std::printf("primary  [");
  for (double v : rec.primary) std::printf(" %.3f", v);
  std::printf(" ]\nfinal    [");
  for (double v : rec.final) std::printf(" %.3f", v);
  std::printf(" ]\n");
  return 0;
}
