#include "normlab/saturation.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <json.hpp>
#include <limits>
#include <map>
#include <memory>

#include "normlab/error.hpp"
#include "normlab/simd.hpp"
#include "normlab/stats.hpp"

namespace normlab::sat {

namespace {

constexpr double kRowSumTolerance = 1e-6;
// Absorbs rounding in the running mass so that e.g. ten weights of 0.1 reach
// 0.9 after nine of them.
constexpr double kMassSlack = 1e-12;

// Mean row cosine per probed slot.
std::vector<double> slot_similarities(const LayerProbe& probe, std::size_t n_inputs, const ParameterSet& theta,
                                      double c) {
  if (!(c >= 1.0)) throw ContractError("saturation_level: c must be at least 1");
  if (n_inputs == 0) throw ContractError("saturation_level: no inputs");
  const ParameterSet scaled = scale_params(theta, c);
  std::vector<double> sum;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n_inputs; ++i) {
    const std::vector<Tensor> a = probe(theta, i);
    const std::vector<Tensor> b = probe(scaled, i);
    if (a.size() != b.size() || (!sum.empty() && a.size() != sum.size())) {
      throw StructuralError("saturation_level: probe returned a varying number of layers");
    }
    sum.resize(a.size(), 0.0);
    rows.resize(a.size(), 0);
    for (std::size_t l = 0; l < a.size(); ++l) {
      if (!b[l].all_finite()) {
        throw NumericError("saturation_level: layer " + std::to_string(l) + " is not finite at c = " +
                           std::to_string(c));
      }
      if (a[l].shape() != b[l].shape()) throw StructuralError("saturation_level: layer shape changed with scale");
      const std::size_t r = a[l].rows(), w = a[l].cols();
      for (std::size_t p = 0; p < r; ++p) {
        sum[l] += cosine(a[l].data().subspan(p * w, w), b[l].data().subspan(p * w, w));
      }
      rows[l] += r;
    }
  }
  for (std::size_t l = 0; l < sum.size(); ++l) sum[l] /= static_cast<double>(rows[l]);
  return sum;
}

SaturationReport make_report(const std::vector<double>& per_layer, double c, std::string probe) {
  SaturationReport r;
  r.c = c;
  r.probe = std::move(probe);
  for (std::size_t l = 0; l < per_layer.size(); ++l) r.per_layer.push_back({l, per_layer[l]});
  r.overall = per_layer.empty() ? 1.0 : mean(per_layer);
  return r;
}

// One encoder program per sequence length.
class ProgramCache {
 public:
  explicit ProgramCache(const tf::TransformerConfig& cfg) : cfg_(cfg) {}
  const tf::EncoderProgram& get(std::size_t length) {
    auto it = programs_.find(length);
    if (it == programs_.end()) {
      it = programs_.emplace(length, std::make_unique<tf::EncoderProgram>(cfg_, length)).first;
    }
    return *it->second;
  }

 private:
  tf::TransformerConfig cfg_;
  std::map<std::size_t, std::unique_ptr<tf::EncoderProgram>> programs_;
};

std::string real(double v) { return fmt::format("{}", v); }

}  // namespace

ParameterSet scale_params(const ParameterSet& theta, double c) {
  if (!(c > 0.0)) throw ContractError("scale_params: c must be positive");
  return theta.scaled(c);
}

SaturationReport saturation_level(const LayerProbe& probe, std::size_t n_inputs, const ParameterSet& theta,
                                  double c, std::string probe_name) {
  return make_report(slot_similarities(probe, n_inputs, theta, c), c, std::move(probe_name));
}

std::string_view probe_name(Probe p) { return p == Probe::layers ? "layers" : "heads"; }

SaturationReport saturation_level(const tf::TransformerConfig& cfg, const ParameterSet& theta,
                                  std::span<const std::vector<int>> inputs, double c, Probe probe) {
  ProgramCache cache(cfg);
  const LayerProbe fn = [&](const ParameterSet& p, std::size_t i) {
    const tf::Encoding e = cache.get(inputs[i].size()).run(inputs[i], p);
    std::vector<Tensor> out;
    if (probe == Probe::layers) {
      for (std::size_t l = 0; l < cfg.n_layers; ++l) out.push_back(e.sublayers[2 * l + 1]);
    } else {
      for (const auto& layer : e.heads) out.insert(out.end(), layer.begin(), layer.end());
    }
    return out;
  };
  const std::vector<double> slots = slot_similarities(fn, inputs.size(), theta, c);
  if (probe == Probe::layers) return make_report(slots, c, std::string(probe_name(probe)));
  std::vector<double> layers;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    layers.push_back(mean(std::span<const double>(slots).subspan(l * cfg.n_heads, cfg.n_heads)));
  }
  return make_report(layers, c, std::string(probe_name(probe)));
}

std::vector<double> hard_argmax(std::span<const double> scores, double tau) {
  double top = -std::numeric_limits<double>::infinity();
  double low = std::numeric_limits<double>::infinity();
  for (double s : scores) {
    if (std::isnan(s) || s == std::numeric_limits<double>::infinity()) {
      throw ContractError("hard_argmax: scores must be finite or -inf");
    }
    if (std::isfinite(s)) {
      top = std::max(top, s);
      low = std::min(low, s);
    }
  }
  if (!std::isfinite(top)) throw ContractError("hard_argmax: row has no finite score");
  const double cut = top - tau * (top - low);
  std::vector<double> out(scores.size(), 0.0);
  std::size_t n = 0;
  for (double s : scores) n += std::isfinite(s) && s >= cut;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (std::isfinite(scores[j]) && scores[j] >= cut) out[j] = 1.0 / static_cast<double>(n);
  }
  return out;
}

namespace {

struct Attn {
  Tensor scores;  // [T, T], -inf where masked
  Tensor values;  // H V
};

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw StructuralError("attention: cannot multiply " + shape_string(a.shape()) + " by " +
                          shape_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()}, 0.0);
  simd::active().matmul(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(), b.cols());
  return out;
}

Attn prepare(const Tensor& h, const Tensor& q, const Tensor& k, const Tensor& v, bool causal) {
  const Tensor hq = matmul(h, q), hk = matmul(h, k);
  if (hq.cols() != hk.cols()) throw StructuralError("attention: query and key widths differ");
  const std::size_t t = h.rows();
  Tensor s({t, t}, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      if (causal && j > i) {
        s.at(i, j) = -std::numeric_limits<double>::infinity();
        continue;
      }
      double acc = 0.0;
      for (std::size_t m = 0; m < hq.cols(); ++m) acc += hq.at(i, m) * hk.at(j, m);
      s.at(i, j) = acc;
    }
  }
  return {std::move(s), matmul(h, v)};
}

}  // namespace

Tensor saturated_attention_forward(const Tensor& h, const Tensor& q, const Tensor& k, const Tensor& v,
                                   bool causal, double tau) {
  const Attn a = prepare(h, q, k, v, causal);
  const std::size_t t = a.scores.rows();
  Tensor w({t, t}, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    const auto row = hard_argmax(a.scores.data().subspan(i * t, t), tau);
    std::copy(row.begin(), row.end(), w.data().begin() + static_cast<std::ptrdiff_t>(i * t));
  }
  return matmul(w, a.values);
}

Tensor softmax_attention_forward(const Tensor& h, const Tensor& q, const Tensor& k, const Tensor& v, double c,
                                 bool causal) {
  Attn a = prepare(h, q, k, v, causal);
  for (auto& s : a.scores.data()) s *= c;
  return matmul(activate(Activation::softmax, a.scores, 1), a.values);
}

std::string_view head_class_name(HeadClass c) {
  switch (c) {
    case HeadClass::argmax_like:
      return "argmax-like";
    case HeadClass::mean_like:
      return "mean-like";
    case HeadClass::intermediate:
      break;
  }
  return "intermediate";
}

HeadAttentionStats head_attention_stats(const std::vector<HeadAttention>& heads, double mass, bool causal,
                                        HeadCutoffs cutoffs) {
  if (!(mass > 0.0 && mass < 1.0)) throw ContractError("head_attention_stats: mass must lie in (0, 1)");
  HeadAttentionStats out;
  out.mass = mass;
  for (const HeadAttention& h : heads) {
    HeadStats st;
    st.name = h.name;
    double visible = 0.0;
    std::vector<double> row;
    for (const Tensor& a : h.matrices) {
      if (a.rank() != 2 || a.rows() != a.cols()) {
        throw StructuralError("head " + h.name + ": attention matrix " + shape_string(a.shape()) + " is not square");
      }
      const std::size_t t = a.rows();
      for (std::size_t i = 0; i < t; ++i) {
        row.assign(a.data().begin() + static_cast<std::ptrdiff_t>(i * t),
                   a.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * t));
        double total = 0.0;
        for (double w : row) total += w;
        if (std::abs(total - 1.0) > kRowSumTolerance) {
          throw ContractError("head " + h.name + ": attention row " + std::to_string(i) + " sums to " +
                              real(total));
        }
        std::sort(row.begin(), row.end(), std::greater<>());
        double acc = 0.0;
        std::size_t n = 0;
        while (n < row.size() && acc < mass - kMassSlack) acc += row[n++];
        st.counts.push_back(std::max<std::size_t>(n, 1));
        visible += causal ? static_cast<double>(i + 1) : static_cast<double>(t);
      }
    }
    if (st.counts.empty()) throw ContractError("head " + h.name + ": no attention rows");
    std::vector<double> c(st.counts.begin(), st.counts.end());
    st.median_count = median(c);
    st.mean_visible = visible / static_cast<double>(st.counts.size());
    if (st.median_count <= cutoffs.argmax_max_count) {
      st.classification = HeadClass::argmax_like;
    } else if (st.median_count >= cutoffs.mean_min_fraction * st.mean_visible) {
      st.classification = HeadClass::mean_like;
    }
    out.heads.push_back(std::move(st));
  }
  return out;
}

std::vector<HeadAttention> collect_attention(const tf::TransformerConfig& cfg, const ParameterSet& theta,
                                             std::span<const std::vector<int>> inputs) {
  std::vector<HeadAttention> out;
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    for (std::size_t h = 0; h < cfg.n_heads; ++h)
      out.push_back({"l" + std::to_string(l) + ".h" + std::to_string(h), {}});
  ProgramCache cache(cfg);
  for (const auto& seq : inputs) {
    const tf::Encoding e = cache.get(seq.size()).run(seq, theta);
    for (std::size_t l = 0; l < cfg.n_layers; ++l)
      for (std::size_t h = 0; h < cfg.n_heads; ++h) out[l * cfg.n_heads + h].matrices.push_back(e.attention[l][h]);
  }
  return out;
}

std::string report_json(const SaturationReport& r) {
  nlohmann::ordered_json j;
  j["c"] = r.c;
  j["probe"] = r.probe;
  j["per_layer"] = nlohmann::ordered_json::array();
  for (const auto& l : r.per_layer) j["per_layer"].push_back({{"layer", l.layer}, {"similarity", l.similarity}});
  j["overall"] = r.overall;
  return j.dump(2);
}

std::string head_stats_json(const HeadAttentionStats& s) {
  nlohmann::ordered_json j;
  j["mass"] = s.mass;
  j["rule"] = "smallest set of positions holding at least the given attention mass";
  j["heads"] = nlohmann::ordered_json::array();
  for (const auto& h : s.heads) {
    j["heads"].push_back({{"head", h.name},
                          {"median_count", h.median_count},
                          {"mean_visible", h.mean_visible},
                          {"class", head_class_name(h.classification)}});
  }
  return j.dump(2);
}

std::string head_histogram_csv(const HeadAttentionStats& s) {
  std::string out = "head,count,frequency\n";
  for (const auto& h : s.heads) {
    std::map<std::size_t, std::size_t> hist;
    for (std::size_t c : h.counts) ++hist[c];
    for (const auto& [count, n] : hist) {
      out += h.name + "," + std::to_string(count) + "," +
             real(static_cast<double>(n) / static_cast<double>(h.counts.size())) + "\n";
    }
  }
  return out;
}

}  // namespace normlab::sat
