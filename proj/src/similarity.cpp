#include "hublab/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>

#include "hublab/rng.hpp"

namespace hublab {

std::vector<float> last_token_representation(const HiddenTrace& trace, std::size_t layer) {
  if (trace.seq_len == 0) throw UsageError("last_token_representation: empty trace");
  const auto s = trace.state(layer, trace.seq_len - 1);
  return {s.begin(), s.end()};
}

double cosine(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) throw DimensionError("cosine: vectors differ in length");
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += static_cast<double>(u[i]) * v[i];
    uu += static_cast<double>(u[i]) * u[i];
    vv += static_cast<double>(v[i]) * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw NumericError("cosine: similarity undefined for a zero vector");
  return std::clamp(uv / std::sqrt(uu * vv), -1.0, 1.0);
}

std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw UsageError("derangement: need at least 2 items");
  auto rng = make_rng(seed, "similarity.derangement");
  // Sattolo's algorithm: a uniform random n-cycle, which has no fixed point.
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_index(rng, i)]);
  return p;
}

std::vector<std::size_t> stratified_derangement(const std::vector<std::size_t>& keys, std::uint64_t seed) {
  const auto n = keys.size();
  if (n < 2) throw UsageError("derangement: need at least 2 items");
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[keys[i]].push_back(i);
  std::vector<std::vector<std::size_t>> cycles;
  std::vector<std::size_t> pool;
  for (auto& [key, members] : groups) {
    if (members.size() == 1) pool.push_back(members[0]);
    else cycles.push_back(std::move(members));
  }
  if (pool.size() == 1) {
    auto largest = std::max_element(cycles.begin(), cycles.end(),
                                    [](const auto& a, const auto& b) { return a.size() < b.size(); });
    largest->push_back(pool[0]);
  } else if (!pool.empty()) {
    cycles.push_back(std::move(pool));
  }
  auto rng = make_rng(seed, "similarity.derangement");
  std::vector<std::size_t> p(n);
  for (auto& members : cycles) {
    auto order = members;
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i)]);
    for (std::size_t i = 0; i < members.size(); ++i) p[members[i]] = order[i];
  }
  return p;
}

std::vector<double> matched_win_fractions(const std::vector<std::vector<double>>& sim) {
  const auto n = sim.size();
  if (n < 2) throw UsageError("win fractions: need at least 2 items");
  std::vector<double> out(n);
  std::vector<double> row;
  for (std::size_t i = 0; i < n; ++i) {
    if (sim[i].size() != n) throw DimensionError("win fractions: similarity matrix is not square");
    row.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) row.push_back(sim[i][j]);
    }
    std::sort(row.begin(), row.end());
    const auto below = std::lower_bound(row.begin(), row.end(), sim[i][i]) - row.begin();
    out[i] = static_cast<double>(below) / static_cast<double>(n - 1);
  }
  return out;
}

namespace {

// Last-token states of `seq` at every layer, optionally through the final norm.
std::vector<std::vector<float>> last_states(const Parameters& params, const ModelConfig& config,
                                            std::span<const TokenId> seq, bool apply_final_norm) {
  const auto r = forward_with_trace(params, config, seq);
  std::vector<std::vector<float>> out;
  const auto w = params.final_norm.data();
  for (std::size_t l = 0; l <= r.trace.n_layers; ++l) {
    auto h = last_token_representation(r.trace, l);
    if (apply_final_norm) {
      double ms = 0.0;
      for (auto x : h) ms += static_cast<double>(x) * x;
      const auto inv = static_cast<float>(1.0 / std::sqrt(ms / static_cast<double>(h.size()) + config.rms_eps));
      for (std::size_t j = 0; j < h.size(); ++j) h[j] = h[j] * inv * w[j];
    }
    out.push_back(std::move(h));
  }
  return out;
}

}  // namespace

SimilarityResult parallel_similarity_curve(const std::vector<ParallelPair>& pairs, const Parameters& params,
                                           const ModelConfig& config, std::uint64_t seed,
                                           const std::vector<std::size_t>* pairing, bool apply_final_norm) {
  const auto n = pairs.size();
  if (n < 2) throw UsageError("parallel_similarity_curve: need at least 2 pairs");
  std::vector<std::size_t> lengths(n);
  for (std::size_t i = 0; i < n; ++i) lengths[i] = pairs[i].b.size();
  const auto perm = pairing ? *pairing : stratified_derangement(lengths, seed);
  if (perm.size() != n) throw UsageError("parallel_similarity_curve: pairing size mismatch");
  std::vector<std::vector<std::vector<float>>> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = last_states(params, config, pairs[i].a, apply_final_norm);
    b[i] = last_states(params, config, pairs[i].b, apply_final_norm);
  }
  const std::string exp = "sim-parallel";
  SimilarityResult out{{exp, "matched", {}}, {exp, "baseline", {}}, {exp, "delta", {}}, {exp, "win_rate", {}}};
  const auto layers = static_cast<std::size_t>(config.n_layers) + 1;
  std::vector<std::vector<double>> sim(n, std::vector<double>(n));
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<double> matched(n), base(n), delta(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) sim[i][j] = cosine(a[i][l], b[j][l]);
      matched[i] = sim[i][i];
      base[i] = sim[i][perm[i]];
      delta[i] = matched[i] - base[i];
    }
    const auto wins = matched_win_fractions(sim);
    const int layer = static_cast<int>(l);
    out.matched.points.push_back(summarize(layer, matched, seed, "matched"));
    out.baseline.points.push_back(summarize(layer, base, seed, "baseline"));
    out.delta.points.push_back(summarize(layer, delta, seed, "delta"));
    out.win_rate.points.push_back(summarize(layer, wins, seed, "win_rate"));
  }
  return out;
}

const char* to_string(ArithBucket b) {
  switch (b) {
    case ArithBucket::ExactTranslation: return "exact_translation";
    case ArithBucket::SameValue: return "same_value";
    case ArithBucket::DifferentValue: return "different_value";
  }
  return "?";
}

namespace {
int rhs_value(const ArithmeticItem& x) { return x.op == ArithOp::Add ? x.b + x.c : x.b * x.c; }
}  // namespace

ArithBucket classify_arith_pair(const ArithmeticItem& x, const ArithmeticItem& y) {
  if (x.b == y.b && x.c == y.c && x.op == y.op) return ArithBucket::ExactTranslation;
  return rhs_value(x) == rhs_value(y) ? ArithBucket::SameValue : ArithBucket::DifferentValue;
}

std::vector<TokenId> render_rhs(const ArithmeticItem& item, DataType form, const Lexicon& lex) {
  const auto op = item.op == ArithOp::Add ? lex.plus() : lex.times();
  if (form == DataType::Numeral) {
    return {lex.bos(), lex.numeral(item.b), lex.surface(op, DataType::A), lex.numeral(item.c)};
  }
  return {lex.bos(), lex.word_for_number(item.b, form), lex.surface(op, form), lex.word_for_number(item.c, form)};
}

ArithSimilarityResult arithmetic_similarity_buckets(const std::vector<ArithmeticItem>& items, const Lexicon& lex,
                                                    DataType word_language, const Parameters& params,
                                                    const ModelConfig& config, std::uint64_t seed,
                                                    bool apply_final_norm) {
  const auto n = items.size();
  {
    std::vector<int> values;
    for (const auto& it : items) values.push_back(rhs_value(it));
    std::sort(values.begin(), values.end());
    if (std::unique(values.begin(), values.end()) - values.begin() < 2) {
      throw UsageError("arithmetic_similarity_buckets: items must cover at least 2 values");
    }
  }
  std::vector<std::vector<std::vector<float>>> num(n), word(n);
  for (std::size_t i = 0; i < n; ++i) {
    num[i] = last_states(params, config, render_rhs(items[i], DataType::Numeral, lex), apply_final_norm);
    word[i] = last_states(params, config, render_rhs(items[i], word_language, lex), apply_final_norm);
  }
  const std::string exp = "sim-arith";
  ArithSimilarityResult out;
  for (const char* s : {"exact_translation", "same_value", "different_value"}) out.buckets.push_back({exp, s, {}});
  out.deltas.push_back({exp, "delta_exact_minus_same_value", {}});
  out.deltas.push_back({exp, "delta_exact_minus_different_value", {}});
  const auto layers = static_cast<std::size_t>(config.n_layers) + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<double> all[3];
    std::vector<double> d_same, d_diff;
    for (std::size_t i = 0; i < n; ++i) {
      double exact = 0.0, same = 0.0, diff = 0.0;
      std::size_t n_exact = 0, n_same = 0, n_diff = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double c = cosine(num[i][l], word[j][l]);
        const auto bucket = classify_arith_pair(items[i], items[j]);
        all[static_cast<int>(bucket)].push_back(c);
        if (bucket == ArithBucket::ExactTranslation) exact += c, ++n_exact;
        if (bucket == ArithBucket::SameValue) same += c, ++n_same;
        if (bucket == ArithBucket::DifferentValue) diff += c, ++n_diff;
      }
      exact /= static_cast<double>(n_exact);
      if (n_same) d_same.push_back(exact - same / static_cast<double>(n_same));
      if (n_diff) d_diff.push_back(exact - diff / static_cast<double>(n_diff));
    }
    const int layer = static_cast<int>(l);
    for (int bkt = 0; bkt < 3; ++bkt) {
      if (!all[bkt].empty()) out.buckets[static_cast<std::size_t>(bkt)].points.push_back(summarize(layer, all[bkt], seed, out.buckets[static_cast<std::size_t>(bkt)].series));
    }
    if (!d_same.empty()) out.deltas[0].points.push_back(summarize(layer, d_same, seed, out.deltas[0].series));
    if (!d_diff.empty()) out.deltas[1].points.push_back(summarize(layer, d_diff, seed, out.deltas[1].series));
  }
  std::erase_if(out.buckets, [](const LayerCurve& c) { return c.points.empty(); });
  std::erase_if(out.deltas, [](const LayerCurve& c) { return c.points.empty(); });
  return out;
}

PcaBasis pca_fit(const std::vector<std::vector<double>>& vectors, std::size_t k, std::uint64_t seed,
                 std::string source) {
  const auto n = vectors.size();
  if (n < k + 1) throw UsageError("pca_fit: need at least k + 1 vectors");
  const auto d = vectors.front().size();
  if (k == 0 || k > d) throw UsageError("pca_fit: k must lie in [1, d]");
  PcaBasis basis;
  basis.source = std::move(source);
  basis.mean.assign(d, 0.0);
  for (const auto& v : vectors) {
    if (v.size() != d) throw DimensionError("pca_fit: vectors differ in length");
    for (std::size_t j = 0; j < d; ++j) basis.mean[j] += v[j];
  }
  for (auto& m : basis.mean) m /= static_cast<double>(n);
  std::vector<double> cov(d * d, 0.0);
  for (const auto& v : vectors) {
    for (std::size_t i = 0; i < d; ++i) {
      const double ci = v[i] - basis.mean[i];
      for (std::size_t j = 0; j < d; ++j) cov[i * d + j] += ci * (v[j] - basis.mean[j]);
    }
  }
  for (auto& c : cov) c /= static_cast<double>(n);
  for (std::size_t i = 0; i < d; ++i) basis.total_variance += cov[i * d + i];

  auto rng = make_rng(seed, "similarity.pca");
  std::vector<double> x(d), y(d);
  for (std::size_t c = 0; c < k; ++c) {
    for (auto& xi : x) xi = normal01(rng);
    double lambda = 0.0;
    for (int it = 0; it < 200; ++it) {
      // Re-orthogonalize against found components to stop drift back into them.
      for (const auto& comp : basis.components) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += comp[j] * x[j];
        for (std::size_t j = 0; j < d; ++j) x[j] -= dot * comp[j];
      }
      double norm = 0.0;
      for (auto xi : x) norm += xi * xi;
      norm = std::sqrt(norm);
      if (norm == 0.0) break;
      for (auto& xi : x) xi /= norm;
      for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += cov[i * d + j] * x[j];
        y[i] = s;
      }
      double next = 0.0;
      for (std::size_t j = 0; j < d; ++j) next += x[j] * y[j];
      const bool converged = it > 0 && std::abs(next - lambda) <= 1e-8 * std::max(1.0, std::abs(next));
      lambda = next;
      x.swap(y);
      if (converged) break;
    }
    for (const auto& comp : basis.components) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += comp[j] * x[j];
      for (std::size_t j = 0; j < d; ++j) x[j] -= dot * comp[j];
    }
    double norm = 0.0;
    for (auto xi : x) norm += xi * xi;
    norm = std::sqrt(norm);
    if (norm == 0.0 || lambda <= 1e-12 * std::max(basis.total_variance, 1e-300)) {
      basis.reduced_rank = true;
      break;
    }
    for (auto& xi : x) xi /= norm;
    // Rayleigh quotient of the final unit vector.
    double rq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += cov[i * d + j] * x[j];
      rq += x[i] * s;
    }
    basis.components.push_back(x);
    basis.explained_variance.push_back(rq);
    // Deflate.
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) cov[i * d + j] -= rq * x[i] * x[j];
    }
  }
  return basis;
}

std::vector<double> pca_project(const PcaBasis& basis, std::span<const double> v) {
  if (v.size() != basis.mean.size()) throw DimensionError("pca_project: vector length differs from basis");
  std::vector<double> out;
  for (const auto& comp : basis.components) {
    double s = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) s += comp[j] * (v[j] - basis.mean[j]);
    out.push_back(s);
  }
  return out;
}

PcaBasis unembedding_basis(const Parameters& params, const std::vector<TokenId>& tokens, std::size_t k,
                           std::uint64_t seed) {
  const auto d = params.unembed.shape()[1];
  const auto o = params.unembed.data();
  std::vector<std::vector<double>> rows;
  for (auto t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= params.unembed.shape()[0]) throw UsageError("unembedding_basis: unknown token");
    rows.emplace_back(o.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t) * d),
                      o.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(t) + 1) * d));
  }
  return pca_fit(rows, k, seed, "unembedding rows");
}

Trajectory trajectory_export(const std::vector<std::vector<TokenId>>& prefixes, const Parameters& params,
                             const ModelConfig& config, const PcaBasis& basis,
                             const std::vector<std::pair<std::string, TokenId>>& anchors) {
  Trajectory traj;
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto o = params.unembed.data();
  for (const auto& [label, tok] : anchors) {
    if (tok < 0 || tok >= config.vocab_size) throw UsageError("trajectory_export: anchor token outside vocabulary");
    std::vector<double> row(o.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(tok) * d),
                            o.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(tok) + 1) * d));
    traj.anchors.push_back({label, tok, pca_project(basis, row)});
  }
  for (std::size_t p = 0; p < prefixes.size(); ++p) {
    const auto states = last_states(params, config, prefixes[p], true);
    for (std::size_t l = 0; l < states.size(); ++l) {
      std::vector<double> h(states[l].begin(), states[l].end());
      traj.points.push_back({p, static_cast<int>(l), pca_project(basis, h)});
    }
  }
  return traj;
}

void write_trajectory(const std::string& path, const Trajectory& traj) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write " + path);
  os << kTrajectoryHeader << '\n' << std::setprecision(9);
  auto xy = [&](const std::vector<double>& c) {
    os << ',' << (c.size() > 0 ? c[0] : 0.0) << ',' << (c.size() > 1 ? c[1] : 0.0) << '\n';
  };
  for (const auto& p : traj.points) {
    os << "state," << p.prefix_id << ',' << p.layer;
    xy(p.coords);
  }
  for (const auto& a : traj.anchors) {
    os << "anchor," << a.label << ',';
    xy(a.coords);
  }
}

std::size_t nearest_anchor(const Trajectory& traj, std::span<const double> coords) {
  if (traj.anchors.empty()) throw UsageError("nearest_anchor: no anchors");
  std::size_t best = 0;
  double best_d = INFINITY;
  for (std::size_t i = 0; i < traj.anchors.size(); ++i) {
    double dd = 0.0;
    for (std::size_t j = 0; j < coords.size() && j < traj.anchors[i].coords.size(); ++j) {
      const double diff = coords[j] - traj.anchors[i].coords[j];
      dd += diff * diff;
    }
    if (dd < best_d) best_d = dd, best = i;
  }
  return best;
}

}  // namespace hublab
