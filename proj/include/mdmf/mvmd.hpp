#pragma once

// Multi-view mutual distillation between the local and global context views.
// Each view yields a visual posterior (from OTAM distances) and a text
// posterior (from the fused prompt rows). Where one view is strictly more
// confident in the enabled modes, it teaches the other through a
// confidence-weighted KL term.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mdmf/autograd.hpp"
#include "mdmf/temporal_views.hpp"

namespace mdmf::mvmd {

struct ViewPosteriors {
  ag::Var visual;  // 1 x N
  ag::Var text;    // 1 x N
  ViewKind view = ViewKind::local;
  int query = 0;
};

struct DiscriminantScores {
  double c_hat = 0.0;    // max visual posterior
  double c_tilde = 0.0;  // max text posterior
  ViewKind view = ViewKind::local;
};

struct QueryScores {
  int query = 0;
  DiscriminantScores local;
  DiscriminantScores global;
};

struct ReliabilityPartition {
  std::vector<int> omega_g;
  std::vector<int> omega_l;
};

enum class Direction { bidirectional, up_down, down_up };

Direction parse_direction(const std::string& s);
const char* to_string(Direction d);

struct GatingOptions {
  bool t_compare = true;
  bool v_compare = true;
  double margin = 0.0;
};

ag::Var posterior_visual(const ag::Var& view_distances);
std::vector<double> posterior_visual(const std::vector<double>& view_distances);

// Softmax over cosine similarity between a query prompt row and each class
// prompt row (one row per class).
ag::Var posterior_text(const ag::Var& query_token, const ag::Var& class_tokens);

DiscriminantScores discriminants(const ViewPosteriors& p);
DiscriminantScores discriminants(std::span<const double> visual, std::span<const double> text,
                                 ViewKind view);

ReliabilityPartition partition(std::span<const QueryScores> scores, const GatingOptions& opts = {});

// KL(teacher || student) with both sides clamped at 1e-9.
ag::Var kl_divergence(const ag::Var& teacher, const ag::Var& student);
double kl_divergence(std::span<const double> teacher, std::span<const double> student);

struct DistillInputs {
  std::vector<ag::Var> global_visual;  // per query, 1 x N
  std::vector<ag::Var> local_visual;
  std::vector<QueryScores> scores;     // indexed like the posteriors
};

struct DistillLosses {
  ag::Var global_to_local;
  ag::Var local_to_global;
};

// Teacher posteriors are detached unless `detach_teacher` is false.
DistillLosses distill_losses(const ReliabilityPartition& part, const DistillInputs& in,
                             bool detach_teacher = true);

ag::Var total_loss(const ag::Var& main, const ag::Var& g2l, const ag::Var& l2g, double lambda);
double total_loss(double main, double g2l, double l2g, double lambda);

}  // namespace mdmf::mvmd
