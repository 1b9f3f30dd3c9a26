#include "maf/analysis.hpp"

#include <algorithm>
#include <set>
#include <vector>

namespace maf {

KernelSchedule kernel_schedule(const std::vector<LayerInfo>& inventory) {
  std::set<Index> backbone, neck, head;
  for (const auto& l : inventory) {
    if (l.kind != "rephdw") continue;
    const std::string stage = l.stage();
    if (stage == "backbone") backbone.insert(l.kernel);
    if (stage == "neck") neck.insert(l.kernel);
    if (stage == "head") head.insert(l.kernel);
  }
  return {{backbone.begin(), backbone.end()}, {neck.begin(), neck.end()}, {head.begin(), head.end()}};
}

double erf_radius(const Eigen::ArrayXXd& map, double mass) {
  const Index rows = map.rows(), cols = map.cols();
  const Index ci = rows / 2, cj = cols / 2;
  const Index rmax = std::max({ci, rows - 1 - ci, cj, cols - 1 - cj});
  std::vector<double> ring(static_cast<std::size_t>(rmax + 1), 0.0);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      ring[static_cast<std::size_t>(std::max(std::abs(i - ci), std::abs(j - cj)))] += map(i, j);
  const double total = map.sum();
  if (total <= 0.0) return 0.0;
  double acc = 0.0;
  for (Index r = 0; r <= rmax; ++r) {
    acc += ring[static_cast<std::size_t>(r)];
    if (acc >= mass * total * (1.0 - 1e-12)) return static_cast<double>(r);
  }
  return static_cast<double>(rmax);
}

Index erf_support_radius(const Eigen::ArrayXXd& map) {
  const Index ci = map.rows() / 2, cj = map.cols() / 2;
  Index r = 0;
  for (Index i = 0; i < map.rows(); ++i)
    for (Index j = 0; j < map.cols(); ++j)
      if (map(i, j) != 0.0) r = std::max({r, std::abs(i - ci), std::abs(j - cj)});
  return r;
}

namespace {

struct Variant {
  std::string label;
  std::vector<std::pair<std::string, bool>> toggles;
  ModelConfig cfg;
};

AblationRow measure(const Variant& v, Index input_size) {
  AblationRow row{v.label, v.toggles};
  Model<float> model = build_model<float>(v.cfg);
  const CostReport train = count_costs(model, input_size, input_size);
  model.fuse();
  const CostReport fused = count_costs(model, input_size, input_size);
  row.train_params = train.total_params();
  row.train_macs = train.total_macs();
  row.fused_params = fused.total_params();
  row.fused_macs = fused.total_macs();
  return row;
}

}  // namespace

std::vector<std::string> ablation_presets() { return {"table2", "table3", "table5"}; }

std::vector<AblationRow> run_ablation(const std::string& preset, const ModelConfig& base, Index input_size) {
  std::vector<Variant> variants;
  if (preset == "table2") {
    const bool grid[][3] = {{false, false, false}, {true, false, false}, {true, false, true},
                            {true, true, false},   {false, true, true},  {true, true, true}};
    for (const auto& g : grid) {
      ModelConfig c = base;
      c.use_elan = g[0];
      c.use_large = g[1];
      c.use_rep = g[2];
      std::string label = std::string(g[0] ? "ELAN" : "-") + " " + (g[1] ? "LK" : "-") + " " + (g[2] ? "Rep" : "-");
      variants.push_back({label, {{"elan", g[0]}, {"large_kernel", g[1]}, {"rep", g[2]}}, c});
    }
  } else if (preset == "table3") {
    const bool grid[][2] = {{false, false}, {true, false}, {false, true}, {true, true}};
    for (const auto& g : grid) {
      ModelConfig c = base;
      c.neck.enable_saf = g[0];
      c.neck.enable_aaf = g[1];
      std::string label = std::string(g[0] ? "SAF" : "-") + " " + (g[1] ? "AAF" : "-");
      variants.push_back({label, {{"saf", g[0]}, {"aaf", g[1]}}, c});
    }
  } else if (preset == "table5") {
    const bool grid[][3] = {{false, false, false}, {true, false, false}, {true, true, false}, {true, true, true}};
    for (const auto& g : grid) {
      ModelConfig c = base;
      c.neck.enable_saf = g[0];
      c.neck.enable_aaf = g[0];
      c.use_elan = g[1];
      c.use_rep = g[1];
      c.use_large = g[2];
      std::string label =
          std::string(g[0] ? "MAFPN" : "-") + " " + (g[1] ? "RepHELAN" : "-") + " " + (g[2] ? "GHKS" : "-");
      variants.push_back({label, {{"mafpn", g[0]}, {"rephelan", g[1]}, {"ghks", g[2]}}, c});
    }
  } else {
    throw ConfigError("ablate: unknown preset '" + preset + "' (expected table2, table3 or table5)");
  }
  std::vector<AblationRow> rows;
  for (const auto& v : variants) rows.push_back(measure(v, input_size));
  return rows;
}

}  // namespace maf
