#include "maf/toy.hpp"

#include <cmath>
#include <random>

namespace maf {

ToyDataset make_blob_dataset(Index samples, Index image_size, std::uint64_t seed) {
  if (samples < 1 || image_size < 8) throw ConfigError("toy dataset: need samples >= 1 and size >= 8");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  ToyDataset d;
  d.images = Tensor<float>({samples, 3, image_size, image_size});
  for (Index i = 0; i < samples; ++i) {
    const int label = static_cast<int>(i % 2);
    d.labels.push_back(label);
    const double sigma = label == 0 ? 1.5 : 5.0;
    const double margin = label == 0 ? 4.0 : 8.0;
    const double cy = margin + unit(rng) * (static_cast<double>(image_size) - 2 * margin);
    const double cx = margin + unit(rng) * (static_cast<double>(image_size) - 2 * margin);
    double color[3];
    for (double& c : color) c = 0.5 + 0.5 * unit(rng);
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < image_size; ++y)
        for (Index x = 0; x < image_size; ++x) {
          const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          d.images(i, c, y, x) = static_cast<float>(color[c] * std::exp(-r2 / (2 * sigma * sigma)) + noise(rng));
        }
  }
  return d;
}

ModelConfig toy_model_config(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.stem_width = 8;
  cfg.widths = {8, 16, 32, 64};
  cfg.depths = {1, 1, 1, 1};
  cfg.expansion = 2.0;
  cfg.neck.widths = {16, 32, 64};
  cfg.neck.n_bottlenecks = 1;
  cfg.head_width = 8;
  cfg.head_outputs = 2;
  cfg.seed = seed;
  return cfg;
}

ToyClassifier::ToyClassifier(const ModelConfig& cfg, Index classes) : model_(build_model<float>(cfg)) {
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const Index features = cfg.neck.widths[0] + cfg.neck.widths[1] + cfg.neck.widths[2];
  classifier_ = Conv<float>("classifier", ConvSpec{features, classes, 1, 1, -1, 1, true}, rng);
}

VarF ToyClassifier::forward(const VarF& x) {
  auto taps = model_.forward_features(x);
  const std::size_t n = taps.size();
  std::vector<VarF> pooled;
  for (std::size_t i = n - 3; i < n; ++i) pooled.push_back(global_avg_pool(taps[i].second));
  return classifier_.forward(concat_channels(pooled));
}

std::vector<VarF> ToyClassifier::parameters() {
  std::vector<VarF> out;
  auto collect = [&](const std::string&, VarF& v, bool learnable) {
    if (learnable) out.push_back(v);
  };
  model_.visit(collect);
  classifier_.visit(collect);
  return out;
}

std::optional<Index> ToyResult::first_step_reaching(double target) const {
  for (std::size_t i = 0; i < accuracies.size(); ++i)
    if (accuracies[i] >= target) return static_cast<Index>(i);
  return std::nullopt;
}

ToyResult train_toy(ToyClassifier& net, const ToyDataset& data, const ToyOptions& opt) {
  if (opt.steps < 0) throw ConfigError("toy: steps must be >= 0");
  if (!std::isfinite(opt.lr) || opt.lr < 0.0) throw ConfigError("toy: lr must be finite and >= 0");
  ToyResult result;
  net.set_training(true);
  std::vector<VarF> params = net.parameters();
  const float lr = static_cast<float>(opt.lr);
  for (Index step = 0; step < opt.steps; ++step) {
    for (auto& p : params) p.zero_grad();
    VarF logits, loss;
    try {
      logits = net.forward(VarF(data.images));
      loss = softmax_cross_entropy(logits, std::span<const int>(data.labels));
    } catch (const NumericError& e) {
      result.diverged_at = step;
      result.divergence = e.what();
      break;
    }
    const double value = loss.value()[0];
    if (!std::isfinite(value)) {
      result.diverged_at = step;
      result.divergence = "loss is not finite";
      break;
    }
    Index correct = 0;
    const Shape s = logits.shape();
    for (Index b = 0; b < s.n; ++b) {
      Index best = 0;
      for (Index k = 1; k < s.c; ++k)
        if (logits.value()(b, k, 0, 0) > logits.value()(b, best, 0, 0)) best = k;
      correct += best == data.labels[static_cast<std::size_t>(b)];
    }
    result.losses.push_back(value);
    result.accuracies.push_back(static_cast<double>(correct) / static_cast<double>(s.n));
    backward(loss);
    for (auto& p : params)
      if (p.has_grad()) p.mutable_value().data() -= lr * p.grad().data();
  }
  net.set_training(false);
  return result;
}

std::vector<double> moving_average(const std::vector<double>& xs, std::size_t window) {
  std::vector<double> out;
  if (window == 0 || xs.size() < window) return out;
  for (std::size_t i = window; i <= xs.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = i - window; j < i; ++j) acc += xs[j];
    out.push_back(acc / static_cast<double>(window));
  }
  return out;
}

bool non_increasing(const std::vector<double>& xs) {
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] > xs[i - 1]) return false;
  return true;
}

}  // namespace maf
