#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "mdmf/autograd.hpp"
#include "mdmf/mmfe.hpp"

namespace mdmf {

struct Prototype {
  ag::Var data;  // (T+1) x D
  std::string class_name;
  ViewKind view = ViewKind::none;

  ag::Var prompt_row() const { return ag::slice_rows(data, 0, 1); }
  ag::Var visual_rows() const { return ag::slice_rows(data, 1, data.rows() - 1); }
};

// Per-view and fused query-by-class distances, each P x N.
struct DistanceTable {
  std::map<ViewKind, ag::Var> per_view;
  ag::Var fused;
};

Prototype prototype(std::span<const FusedFeatures> samples, std::string class_name = {});

// C[i][j] = 1 - cos(A_i, B_j).
ag::Var frame_cost(const ag::Var& a, const ag::Var& b);

// Ordered temporal alignment score of a cost matrix C (rows: first sequence,
// columns: second). A path enters at any row of column 0, then each step moves
// one row down while staying in its column or advancing one column; the last
// column may also be entered horizontally. The path exits at any row of the
// last column. The score is the gamma-smoothed minimum path cost,
// -gamma * log(sum over paths of exp(-cost / gamma)).
double otam_alignment(const ag::Matrix& cost, double gamma);
// d(score)/d(cost): expected cell occupancy under the smoothed path weights.
ag::Matrix otam_alignment_grad(const ag::Matrix& cost, double gamma);

struct OtamOptions {
  double gamma = 0.1;
  bool bidirectional = true;
};

// Bidirectional form averages the scores of C and C^T.
ag::Var otam(const ag::Var& cost, const OtamOptions& opts = {});
double otam_value(const ag::Matrix& cost, const OtamOptions& opts = {});

// Distance between the frame rows of a fused query and a prototype; the
// prompt row (row 0) is not compared.
ag::Var view_distance(const FusedFeatures& query, const Prototype& proto,
                      const OtamOptions& opts = {});

double fuse_distance(double d_global, double d_local);
ag::Var fuse_distance(std::span<const ag::Var> view_distances);

// Softmax over negated distances, per row.
ag::Var classify(const ag::Var& distances);
std::vector<double> classify(const std::vector<double>& distances);

// Mean over rows of -log probs[r][truth[r]].
ag::Var main_loss(const ag::Var& probs, std::span<const int> truth);
double main_loss(const std::vector<std::vector<double>>& probs, std::span<const int> truth);
// Same loss computed from distances through a log-softmax.
ag::Var cross_entropy_from_distances(const ag::Var& distances, std::span<const int> truth);

}  // namespace mdmf
