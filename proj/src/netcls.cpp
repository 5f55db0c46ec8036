#include "paiconv/netcls.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "paiconv/kernels.hpp"

namespace paiconv {
namespace {

constexpr const char* kCheckpointMagic = "paiconv-checkpoint";
constexpr int kCheckpointVersion = 1;

DenseLayer make_dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  return {Param(name + ".weight", fan_in_uniform(in, out, in, rng)),
          Param(name + ".bias", Matrix(1, out))};
}

Matrix dense_forward(const DenseLayer& layer, const Matrix& in) {
  Matrix pre = kernels::matmul(in, layer.weight.value);
  for (std::size_t r = 0; r < pre.rows(); ++r)
    for (std::size_t c = 0; c < pre.cols(); ++c) pre(r, c) += layer.bias.value(0, c);
  return pre;
}

/// Accumulates parameter gradients; returns d(in).
Matrix dense_backward(DenseLayer& layer, const Matrix& in, const Matrix& d_pre) {
  accumulate(layer.weight.grad, kernels::matmul_tn(in, d_pre));
  for (std::size_t r = 0; r < d_pre.rows(); ++r)
    for (std::size_t c = 0; c < d_pre.cols(); ++c) layer.bias.grad(0, c) += d_pre(r, c);
  return kernels::matmul_nt(d_pre, layer.weight.value);
}

void multiply_inplace(Matrix& a, const Matrix& b) {
  auto x = a.data();
  auto y = b.data();
  for (std::size_t k = 0; k < x.size(); ++k) x[k] *= y[k];
}

NeighborIndex build_neighbors(const PointCloud& cloud, std::size_t k) {
  const std::size_t n = cloud.size();
  if (n <= 2048) return knn_bruteforce(cloud, k);
  // Cell sized so that a cell holds about k points for a surface-like cloud.
  double extent = 0.0;
  for (int a = 0; a < 3; ++a) {
    double lo = cloud.coords(0, a), hi = lo;
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, cloud.coords(i, a));
      hi = std::max(hi, cloud.coords(i, a));
    }
    extent = std::max(extent, hi - lo);
  }
  const double cell = extent > 0.0 ? extent * std::sqrt(static_cast<double>(k) / n) : 1.0;
  return knn_grid(cloud, k, cell);
}

StageGeometry make_geometry(PointCloud cloud, SampleMap sample, const ClassifierState& state,
                            const ForwardOptions& options) {
  StageGeometry g;
  g.nbr = build_neighbors(cloud, state.config.neighbors);
  if (options.neighbor_hook) options.neighbor_hook(g.nbr);
  g.local = local_positions(cloud, g.nbr);
  g.permutation = std::make_shared<const PermutationTensor>(build_permutation(
      g.local, state.config.neighbors, state.kernel.value, state.variant.normalizer));
  g.cloud = std::move(cloud);
  g.sample = std::move(sample);
  return g;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s.empty() ? "-" : s;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  if (s == "-") return out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoul(tok));
  return out;
}

}  // namespace

std::string_view pooling_name(Pooling p) {
  switch (p) {
    case Pooling::kMax: return "max";
    case Pooling::kSum: return "sum";
    case Pooling::kMaxAndSum: return "max_and_sum";
  }
  return "unknown";
}

Pooling parse_pooling(std::string_view name) {
  for (Pooling p : {Pooling::kMax, Pooling::kSum, Pooling::kMaxAndSum})
    if (pooling_name(p) == name) return p;
  throw ContractError("unknown pooling '" + std::string(name) + "' (expected max, sum, max_and_sum)");
}

void ClassifierConfig::validate() const {
  if (conv_channels.empty()) throw ContractError("config: need at least one conv layer");
  if (fc_widths.empty()) throw ContractError("config: need at least one fully connected layer");
  for (auto c : conv_channels)
    if (c == 0) throw ContractError("config: conv channel widths must be >= 1");
  for (auto c : fc_widths)
    if (c == 0) throw ContractError("config: fc widths must be >= 1");
  if (aggregate_width == 0) throw ContractError("config: aggregate_width must be >= 1");
  if (neighbors == 0) throw ContractError("config: neighbors (K) must be >= 1");
  if (kernel_points < 2) throw ContractError("config: kernel_points (L) must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("config: dropout must be in [0, 1)");
  if (!downsample_ratios.empty() && downsample_ratios.size() != conv_channels.size())
    throw ContractError("config: downsample_ratios needs one entry per conv layer");
  for (auto r : downsample_ratios)
    if (r == 0) throw ContractError("config: downsample ratios must be >= 1");
}

ClassifierConfig ClassifierConfig::desk(std::size_t num_classes) {
  ClassifierConfig c;
  c.conv_channels = {16, 16, 32};
  c.aggregate_width = 64;
  c.fc_widths = {32, num_classes};
  c.neighbors = 16;
  c.kernel_points = 16;
  c.pooling = Pooling::kMax;
  return c;
}

void ClassifierState::zero_grad() {
  kernel.zero_grad();
  for_each_trainable([](Param& p) { p.zero_grad(); });
}

ClassifierState build(const ClassifierConfig& config, Rng& rng) {
  config.validate();
  ClassifierState s;
  s.config = config;
  Rng kernel_rng = rng.stream(Stream::kKernel);
  s.variant = make_variant(config.variant, config.kernel_points, kernel_rng);
  s.kernel = Param("kernel", s.variant.kernel.points);

  Rng init = rng.stream(Stream::kInit);
  std::size_t feature_width = 0;
  std::size_t concat_width = 0;
  for (std::size_t i = 0; i < config.conv_channels.size(); ++i) {
    s.convs.emplace_back("conv" + std::to_string(i), feature_width, config.conv_channels[i],
                         config.kernel_points, config.position_width, s.variant.anisotropic, init);
    feature_width = config.conv_channels[i];
    concat_width += feature_width;
  }
  s.aggregate = make_dense("aggregate", concat_width, config.aggregate_width, init);
  std::size_t in = config.pooled_width();
  for (std::size_t i = 0; i < config.fc_widths.size(); ++i) {
    s.fcs.push_back(make_dense("fc" + std::to_string(i), in, config.fc_widths[i], init));
    in = config.fc_widths[i];
  }
  for (std::size_t c = 0; c < config.num_classes(); ++c)
    s.class_names.push_back("class" + std::to_string(c));
  return s;
}

std::size_t count_params(const ClassifierState& state) {
  std::size_t total = 0;
  auto& mutable_state = const_cast<ClassifierState&>(state);
  mutable_state.for_each_trainable([&](const Param& p) {
    total += &p == &state.kernel ? (p.value.rows() - 1) * p.value.cols() : p.size();
  });
  return total;
}

std::size_t ClassifierTape::bytes() const {
  std::size_t b = concat.bytes() + aggregate_pre.bytes() + aggregate_out.bytes() + pooled.bytes() +
                  logits.bytes() + argmax.size() * sizeof(std::uint32_t);
  for (const auto& g : geometry) {
    b += g.cloud.coords.bytes() + g.sample.kept.size() * sizeof(std::uint32_t) +
         g.nbr.idx.size() * sizeof(std::uint32_t) + g.local.bytes() + g.permutation->bytes();
  }
  for (const auto& rows : final_rows) b += rows.size() * sizeof(std::uint32_t);
  for (const auto& t : conv) b += t.bytes();
  for (const auto& m : conv_out) b += m.bytes();
  for (const auto* v : {&fc_in, &fc_mask, &fc_pre})
    for (const auto& m : *v) b += m.bytes();
  return b;
}

ClassifierTape forward_logits(const ClassifierState& state, const PointCloud& cloud, Rng& rng,
                              const ForwardOptions& options) {
  cloud.validate();
  if (cloud.size() == 0) throw ContractError("forward_logits: empty point cloud");
  const ClassifierConfig& cfg = state.config;
  const std::size_t stages = cfg.conv_channels.size();

  ClassifierTape t;
  t.input_points = cloud.size();
  PointCloud coords_only{cloud.coords, std::nullopt};
  if (cfg.downsample_ratios.empty()) {
    SampleMap identity;
    identity.kept.resize(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) identity.kept[i] = static_cast<std::uint32_t>(i);
    t.geometry.push_back(make_geometry(std::move(coords_only), std::move(identity), state, options));
    t.stage_geometry.assign(stages, 0);
  } else {
    const PointCloud* prev = &coords_only;
    for (std::size_t s = 0; s < stages; ++s) {
      auto [down, map] = random_downsample(*prev, cfg.downsample_ratios[s], rng);
      t.geometry.push_back(make_geometry(std::move(down), std::move(map), state, options));
      t.stage_geometry.push_back(s);
      prev = &t.geometry.back().cloud;
    }
  }

  // Rows of each geometry's point set that survive into the final set.
  std::vector<std::vector<std::uint32_t>> geo_rows(t.geometry.size());
  {
    const std::size_t last = t.geometry.size() - 1;
    geo_rows[last].resize(t.geometry[last].cloud.size());
    for (std::size_t i = 0; i < geo_rows[last].size(); ++i)
      geo_rows[last][i] = static_cast<std::uint32_t>(i);
    for (std::size_t g = last; g > 0; --g) {
      geo_rows[g - 1].resize(geo_rows[g].size());
      for (std::size_t i = 0; i < geo_rows[g].size(); ++i)
        geo_rows[g - 1][i] = t.geometry[g].sample.kept[geo_rows[g][i]];
    }
  }

  t.conv.resize(stages);
  for (std::size_t s = 0; s < stages; ++s) {
    const StageGeometry& g = t.geometry[t.stage_geometry[s]];
    PointCloud input{g.cloud.coords, std::nullopt};
    if (s > 0) {
      const bool same = t.stage_geometry[s] == t.stage_geometry[s - 1];
      input.features = same ? t.conv_out[s - 1] : gather_rows(t.conv_out[s - 1], g.sample.kept);
    }
    t.conv_out.push_back(state.convs[s].forward(input, g.nbr, g.permutation, t.conv[s]));
    t.final_rows.push_back(geo_rows[t.stage_geometry[s]]);
  }

  // Shortcut concatenation of every stage's features on the final point set.
  const std::size_t n_final = t.final_rows.back().size();
  std::size_t width = 0;
  for (const auto& o : t.conv_out) width += o.cols();
  t.concat = Matrix(n_final, width);
  std::size_t offset = 0;
  for (std::size_t s = 0; s < stages; ++s) {
    for (std::size_t i = 0; i < n_final; ++i) {
      const auto src = t.conv_out[s].row(t.final_rows[s][i]);
      std::copy(src.begin(), src.end(), t.concat.row(i).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += t.conv_out[s].cols();
  }

  t.aggregate_pre = dense_forward(state.aggregate, t.concat);
  t.aggregate_out = elu(t.aggregate_pre);

  const std::size_t A = cfg.aggregate_width;
  t.pooled = Matrix(1, cfg.pooled_width());
  std::size_t sum_offset = 0;
  if (cfg.pooling != Pooling::kSum) {
    t.argmax.assign(A, 0);
    for (std::size_t c = 0; c < A; ++c) {
      double best = t.aggregate_out(0, c);
      for (std::size_t i = 1; i < n_final; ++i) {
        if (t.aggregate_out(i, c) > best) {
          best = t.aggregate_out(i, c);
          t.argmax[c] = static_cast<std::uint32_t>(i);
        }
      }
      t.pooled(0, c) = best;
    }
    sum_offset = A;
  }
  if (cfg.pooling != Pooling::kMax) {
    for (std::size_t i = 0; i < n_final; ++i)
      for (std::size_t c = 0; c < A; ++c) t.pooled(0, sum_offset + c) += t.aggregate_out(i, c);
  }

  Matrix x = t.pooled;
  for (std::size_t f = 0; f < state.fcs.size(); ++f) {
    if (f > 0) x = elu(t.fc_pre[f - 1]);
    Matrix mask;
    if (options.training && cfg.dropout > 0.0) {
      mask = Matrix(x.rows(), x.cols());
      const double keep_scale = 1.0 / (1.0 - cfg.dropout);
      for (double& m : mask.data()) m = rng.uniform() < cfg.dropout ? 0.0 : keep_scale;
      multiply_inplace(x, mask);
    }
    t.fc_mask.push_back(std::move(mask));
    t.fc_pre.push_back(dense_forward(state.fcs[f], x));
    t.fc_in.push_back(std::move(x));
  }
  t.logits = t.fc_pre.back();
  require_finite(t.logits, "class logits");
  return t;
}

void backward(ClassifierState& state, const ClassifierTape& t, const Matrix& d_logits,
              Matrix* d_coords) {
  const ClassifierConfig& cfg = state.config;
  if (d_logits.rows() != 1 || d_logits.cols() != cfg.num_classes())
    throw ContractError("backward: d_logits must be 1 x num_classes");

  Matrix d_pre = d_logits;
  Matrix d_pooled;
  for (std::size_t f = state.fcs.size(); f-- > 0;) {
    Matrix d_in = dense_backward(state.fcs[f], t.fc_in[f], d_pre);
    if (!t.fc_mask[f].empty()) multiply_inplace(d_in, t.fc_mask[f]);
    if (f > 0) {
      d_pre = elu_grad(t.fc_pre[f - 1]);
      multiply_inplace(d_pre, d_in);
    } else {
      d_pooled = std::move(d_in);
    }
  }

  const std::size_t A = cfg.aggregate_width;
  const std::size_t n_final = t.aggregate_out.rows();
  Matrix d_agg(n_final, A);
  std::size_t sum_offset = 0;
  if (cfg.pooling != Pooling::kSum) {
    for (std::size_t c = 0; c < A; ++c) d_agg(t.argmax[c], c) += d_pooled(0, c);
    sum_offset = A;
  }
  if (cfg.pooling != Pooling::kMax) {
    for (std::size_t i = 0; i < n_final; ++i)
      for (std::size_t c = 0; c < A; ++c) d_agg(i, c) += d_pooled(0, sum_offset + c);
  }
  Matrix d_agg_pre = elu_grad(t.aggregate_pre);
  multiply_inplace(d_agg_pre, d_agg);
  const Matrix d_concat = dense_backward(state.aggregate, t.concat, d_agg_pre);

  const std::size_t stages = state.convs.size();
  const bool want_geometry = d_coords != nullptr || state.variant.learnable_kernel;
  std::vector<Matrix> d_out(stages);
  std::size_t offset = 0;
  for (std::size_t s = 0; s < stages; ++s) {
    d_out[s] = Matrix(t.conv_out[s].rows(), t.conv_out[s].cols());
    for (std::size_t i = 0; i < n_final; ++i) {
      auto dst = d_out[s].row(t.final_rows[s][i]);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += d_concat(i, offset + c);
    }
    offset += t.conv_out[s].cols();
  }


  std::vector<Matrix> d_weights(t.geometry.size());
  std::vector<Matrix> d_geo_coords(t.geometry.size());
  for (std::size_t g = 0; g < t.geometry.size(); ++g) {
    d_weights[g] = Matrix(t.geometry[g].permutation->weights.rows(), t.geometry[g].permutation->L);
    d_geo_coords[g] = Matrix(t.geometry[g].cloud.size(), 3);
  }

  for (std::size_t s = stages; s-- > 0;) {
    const std::size_t gi = t.stage_geometry[s];
    const StageGeometry& g = t.geometry[gi];
    LayerGrads lg = state.convs[s].backward(t.conv[s], g.nbr, d_out[s], want_geometry);
    if (want_geometry) {
      accumulate(d_weights[gi], lg.d_weights);
      if (d_coords) position_input_backward(lg.d_position_in, t.conv[s].position, g.nbr, d_geo_coords[gi]);
    }
    if (s == 0) continue;
    if (t.stage_geometry[s - 1] == gi) {
      accumulate(d_out[s - 1], lg.d_features);
    } else {
      for (std::size_t r = 0; r < g.sample.kept.size(); ++r) {
        auto dst = d_out[s - 1].row(g.sample.kept[r]);
        const auto src = lg.d_features.row(r);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
      }
    }
  }

  if (!want_geometry) return;
  for (std::size_t gi = 0; gi < t.geometry.size(); ++gi) {
    const StageGeometry& g = t.geometry[gi];
    PermutationGrad pg = permutation_backward(*g.permutation, g.local, state.kernel.value, d_weights[gi]);
    if (state.variant.learnable_kernel) {
      for (std::size_t c = 0; c < 3; ++c) pg.d_kernel(0, c) = 0.0;
      accumulate(state.kernel.grad, pg.d_kernel);
    }
    if (d_coords) local_positions_backward(pg.d_local, g.nbr, d_geo_coords[gi]);
  }
  if (!d_coords) return;

  // Geometry coordinates are gathered from the previous set; push back to the input.
  for (std::size_t gi = t.geometry.size(); gi-- > 1;) {
    const auto& kept = t.geometry[gi].sample.kept;
    for (std::size_t r = 0; r < kept.size(); ++r)
      for (std::size_t c = 0; c < 3; ++c) d_geo_coords[gi - 1](kept[r], c) += d_geo_coords[gi](r, c);
  }
  // Geometry 0 was gathered from the input cloud (identity without downsampling).
  *d_coords = Matrix(t.input_points, 3);
  const auto& kept = t.geometry[0].sample.kept;
  for (std::size_t r = 0; r < kept.size(); ++r)
    for (std::size_t c = 0; c < 3; ++c) (*d_coords)(kept[r], c) += d_geo_coords[0](r, c);
}

LossAndGrad cross_entropy(const Matrix& logits, std::size_t label) {
  const std::size_t C = logits.cols();
  if (logits.rows() != 1 || C == 0) throw ContractError("cross_entropy: logits must be 1 x C");
  if (label >= C)
    throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range [0, " +
                        std::to_string(C) + ")");
  const auto z = logits.row(0);
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  LossAndGrad out;
  out.loss = lse - z[label];
  out.d_logits = Matrix(1, C);
  for (std::size_t c = 0; c < C; ++c) out.d_logits(0, c) = std::exp(z[c] - lse);
  out.d_logits(0, label) -= 1.0;
  return out;
}

std::size_t argmax_class(const Matrix& logits) {
  const auto z = logits.row(0);
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

void save_checkpoint(const ClassifierState& state, std::ostream& out) {
  const ClassifierConfig& c = state.config;
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "conv_channels " << join(c.conv_channels) << '\n';
  out << "aggregate_width " << c.aggregate_width << '\n';
  out << "fc_widths " << join(c.fc_widths) << '\n';
  out << "neighbors " << c.neighbors << '\n';
  out << "kernel_points " << c.kernel_points << '\n';
  out << "position_width " << c.position_width << '\n';
  out << "dropout " << std::setprecision(17) << c.dropout << '\n';
  out << "downsample_ratios " << join(c.downsample_ratios) << '\n';
  out << "pooling " << pooling_name(c.pooling) << '\n';
  out << "variant " << variant_name(c.variant) << '\n';
  out << "classes";
  for (const auto& name : state.class_names) out << ' ' << name;
  out << '\n';
  const_cast<ClassifierState&>(state).for_each_tensor([&](const Param& p) {
    out << "tensor " << p.name << ' ' << p.value.rows() << ' ' << p.value.cols() << '\n';
    for (std::size_t r = 0; r < p.value.rows(); ++r) {
      for (std::size_t col = 0; col < p.value.cols(); ++col)
        out << (col ? " " : "") << std::setprecision(17) << p.value(r, col);
      out << '\n';
    }
  });
  out << "end\n";
}

void save_checkpoint(const ClassifierState& state, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  save_checkpoint(state, f);
  if (!f) throw std::runtime_error("error writing checkpoint '" + path + "'");
}

ClassifierState load_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic)
    throw std::runtime_error("not a paiconv checkpoint");
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

  ClassifierConfig cfg;
  std::vector<std::string> classes;
  std::map<std::string, Matrix> tensors;
  std::string key;
  while (in >> key) {
    if (key == "end") break;
    if (key == "tensor") {
      std::string name;
      std::size_t rows = 0, cols = 0;
      if (!(in >> name >> rows >> cols)) throw std::runtime_error("checkpoint: bad tensor header");
      Matrix m(rows, cols);
      for (double& v : m.data())
        if (!(in >> v)) throw std::runtime_error("checkpoint: truncated tensor " + name);
      tensors[name] = std::move(m);
      continue;
    }
    std::string line;
    std::getline(in, line);
    std::stringstream ss(line);
    std::string value;
    ss >> value;
    if (key == "conv_channels") cfg.conv_channels = split_sizes(value);
    else if (key == "aggregate_width") cfg.aggregate_width = std::stoul(value);
    else if (key == "fc_widths") cfg.fc_widths = split_sizes(value);
    else if (key == "neighbors") cfg.neighbors = std::stoul(value);
    else if (key == "kernel_points") cfg.kernel_points = std::stoul(value);
    else if (key == "position_width") cfg.position_width = std::stoul(value);
    else if (key == "dropout") cfg.dropout = std::stod(value);
    else if (key == "downsample_ratios") cfg.downsample_ratios = split_sizes(value);
    else if (key == "pooling") cfg.pooling = parse_pooling(value);
    else if (key == "variant") cfg.variant = parse_variant(value);
    else if (key == "classes") {
      std::stringstream names(line);
      std::string name;
      while (names >> name) classes.push_back(name);
    } else {
      throw std::runtime_error("checkpoint: unknown key '" + key + "'");
    }
  }
  if (key != "end") throw std::runtime_error("checkpoint: missing end marker");

  Rng rng(0);
  ClassifierState state = build(cfg, rng);
  if (!classes.empty()) {
    if (classes.size() != cfg.num_classes())
      throw std::runtime_error("checkpoint: class list does not match fc_widths");
    state.class_names = classes;
  }
  state.for_each_tensor([&](Param& p) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint: missing tensor " + p.name);
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols())
      throw std::runtime_error("checkpoint: shape mismatch for tensor " + p.name);
    p.value = it->second;
  });
  state.variant.kernel.points = state.kernel.value;
  return state;
}

ClassifierState load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return load_checkpoint(f);
}

}  // namespace paiconv
