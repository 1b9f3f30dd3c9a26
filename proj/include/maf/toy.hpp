#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "maf/model.hpp"

namespace maf {

/// Two-class synthetic images: class 0 holds a small Gaussian blob, class 1
/// a large one, at random positions and colors over low-amplitude noise.
struct ToyDataset {
  Tensor<float> images;  // (n, 3, size, size)
  std::vector<int> labels;
  Index size() const noexcept { return static_cast<Index>(labels.size()); }
};

ToyDataset make_blob_dataset(Index samples = 64, Index image_size = 32, std::uint64_t seed = 0);

/// Reduced-width model config used by the toy classifier (32x32 inputs).
ModelConfig toy_model_config(std::uint64_t seed = 0);

/// Model features N3/N4/N5 -> global average pool -> concat -> 1x1 conv -> logits.
class ToyClassifier {
 public:
  explicit ToyClassifier(const ModelConfig& cfg, Index classes = 2);

  /// Logits of shape (n, classes, 1, 1).
  VarF forward(const VarF& x);
  /// Every learnable tensor, including the classifier.
  std::vector<VarF> parameters();
  void set_training(bool on) { model_.set_training(on); }
  Model<float>& model() noexcept { return model_; }

 private:
  Model<float> model_;
  Conv<float> classifier_;
};

struct ToyOptions {
  Index steps = 500;
  double lr = 0.1;
  std::uint64_t seed = 0;
};

struct ToyResult {
  std::vector<double> losses;      // one per step, before the update
  std::vector<double> accuracies;  // training accuracy per step
  std::optional<Index> diverged_at;
  std::string divergence;

  double final_loss() const { return losses.empty() ? 0.0 : losses.back(); }
  double final_accuracy() const { return accuracies.empty() ? 0.0 : accuracies.back(); }
  /// First step whose accuracy reached `target`, if any.
  std::optional<Index> first_step_reaching(double target) const;
};

/// Full-batch plain SGD with batch-statistics BN.
ToyResult train_toy(ToyClassifier& net, const ToyDataset& data, const ToyOptions& opt);

/// Trailing moving average of `window` points; shorter prefixes are dropped.
std::vector<double> moving_average(const std::vector<double>& xs, std::size_t window);
bool non_increasing(const std::vector<double>& xs);

}  // namespace maf
