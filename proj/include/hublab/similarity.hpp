#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hublab/corpora.hpp"
#include "hublab/model.hpp"
#include "hublab/stats.hpp"

namespace hublab {

// Residual state at the last position of the traced sequence.
std::vector<float> last_token_representation(const HiddenTrace& trace, std::size_t layer);

// NumericError on a zero vector.
double cosine(std::span<const float> u, std::span<const float> v);

// Seeded permutation of [0, n) with no fixed point; UsageError for n < 2.
std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed);

// Derangement that only pairs items with equal keys. Keys held by a single
// item are pooled (or, when only one, joined to the largest group) so every
// item still moves.
std::vector<std::size_t> stratified_derangement(const std::vector<std::size_t>& keys, std::uint64_t seed);

// Rows: first-data-type items; columns: second-data-type items; the diagonal
// holds matched pairs. Returns, per row, the fraction of off-diagonal entries
// strictly below the diagonal entry.
std::vector<double> matched_win_fractions(const std::vector<std::vector<double>>& sim);

struct SimilarityResult {
  LayerCurve matched;   // mean cosine of matched pairs
  LayerCurve baseline;  // mean cosine under the non-matching pairing
  LayerCurve delta;     // matched - baseline, per pair
  LayerCurve win_rate;  // matched beats every other item, averaged over pairs
};

// Last-token cosine of each A rendering with its B rendering at every layer.
// The non-matching baseline pairs each A rendering with a B rendering of
// another sentence of the same token length, so position embeddings cancel;
// `pairing` replaces it.
SimilarityResult parallel_similarity_curve(const std::vector<ParallelPair>& pairs, const Parameters& params,
                                           const ModelConfig& config, std::uint64_t seed,
                                           const std::vector<std::size_t>* pairing = nullptr,
                                           bool apply_final_norm = false);

enum class ArithBucket { ExactTranslation, SameValue, DifferentValue };
const char* to_string(ArithBucket b);

// Exact translation: identical (b, c, op); same value: different expression
// with equal b op c.
ArithBucket classify_arith_pair(const ArithmeticItem& x, const ArithmeticItem& y);

// Right-hand side expression "b op c" after BOS, as numerals or words.
std::vector<TokenId> render_rhs(const ArithmeticItem& item, DataType form, const Lexicon& lex);

struct ArithSimilarityResult {
  std::vector<LayerCurve> buckets;  // exact_translation, same_value, different_value
  std::vector<LayerCurve> deltas;   // exact minus same_value, exact minus different_value
};

ArithSimilarityResult arithmetic_similarity_buckets(const std::vector<ArithmeticItem>& items, const Lexicon& lex,
                                                    DataType word_language, const Parameters& params,
                                                    const ModelConfig& config, std::uint64_t seed,
                                                    bool apply_final_norm = false);

struct PcaBasis {
  std::vector<std::vector<double>> components;  // k x d, orthonormal
  std::vector<double> mean;
  std::vector<double> explained_variance;  // per component, non-increasing
  double total_variance = 0.0;
  std::string source;
  bool reduced_rank = false;  // fewer than the requested components were found
};

// Power iteration (200 iterations, tolerance 1e-8) with deflation on the
// covariance of mean-centred vectors.
PcaBasis pca_fit(const std::vector<std::vector<double>>& vectors, std::size_t k, std::uint64_t seed,
                 std::string source = {});
std::vector<double> pca_project(const PcaBasis& basis, std::span<const double> v);

struct TrajectoryAnchor {
  std::string label;
  TokenId token = 0;
  std::vector<double> coords;
};

struct TrajectoryPoint {
  std::size_t prefix_id = 0;
  int layer = 0;
  std::vector<double> coords;
};

struct Trajectory {
  std::vector<TrajectoryPoint> points;  // prefix-major, layers 0..L
  std::vector<TrajectoryAnchor> anchors;
};

// Basis over the given unembedding rows (final-norm-free), used by
// trajectory_export.
PcaBasis unembedding_basis(const Parameters& params, const std::vector<TokenId>& tokens, std::size_t k,
                           std::uint64_t seed);

// Last-token states pass through the final norm before projection so they
// share the scale of the readout space.
Trajectory trajectory_export(const std::vector<std::vector<TokenId>>& prefixes, const Parameters& params,
                             const ModelConfig& config, const PcaBasis& basis,
                             const std::vector<std::pair<std::string, TokenId>>& anchors);

// Columns: kind,id,layer,x,y ("state" rows carry the prefix id and layer,
// "anchor" rows the anchor label and an empty layer).
inline constexpr const char* kTrajectoryHeader = "kind,id,layer,x,y";
void write_trajectory(const std::string& path, const Trajectory& traj);

// Index of the anchor nearest (Euclidean, in the basis coordinates) to `coords`.
std::size_t nearest_anchor(const Trajectory& traj, std::span<const double> coords);

}  // namespace hublab
