#include "mdmf/mvmd.hpp"

#include <algorithm>
#include <cmath>

#include "mdmf/errors.hpp"
#include "mdmf/matching.hpp"

namespace mdmf::mvmd {

namespace {
constexpr double kClamp = 1e-9;
}

Direction parse_direction(const std::string& s) {
  if (s == "bidirectional") return Direction::bidirectional;
  if (s == "up_down") return Direction::up_down;
  if (s == "down_up") return Direction::down_up;
  throw ParamError("mvmd.direction must be bidirectional, up_down or down_up");
}

const char* to_string(Direction d) {
  switch (d) {
    case Direction::bidirectional: return "bidirectional";
    case Direction::up_down: return "up_down";
    case Direction::down_up: return "down_up";
  }
  return "?";
}

ag::Var posterior_visual(const ag::Var& view_distances) { return classify(view_distances); }

std::vector<double> posterior_visual(const std::vector<double>& view_distances) {
  return classify(view_distances);
}

ag::Var posterior_text(const ag::Var& query_token, const ag::Var& class_tokens) {
  if (query_token.rows() != 1 || query_token.cols() != class_tokens.cols()) {
    throw ShapeError("posterior_text: token shapes disagree");
  }
  ag::Var cos = ag::matmul(ag::normalize_rows(query_token),
                           ag::transpose(ag::normalize_rows(class_tokens)));
  return ag::softmax_rows(cos);
}

DiscriminantScores discriminants(std::span<const double> visual, std::span<const double> text,
                                 ViewKind view) {
  if (visual.empty() || text.empty()) throw InputError("discriminants: empty posterior");
  return {*std::max_element(visual.begin(), visual.end()),
          *std::max_element(text.begin(), text.end()), view};
}

DiscriminantScores discriminants(const ViewPosteriors& p) {
  const auto& v = p.visual.value();
  const auto& t = p.text.value();
  return discriminants(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())),
                       std::span<const double>(t.data(), static_cast<std::size_t>(t.size())), p.view);
}

ReliabilityPartition partition(std::span<const QueryScores> scores, const GatingOptions& opts) {
  ReliabilityPartition out;
  const double m = opts.margin;
  const bool use_v = opts.v_compare || !opts.t_compare;  // no conditions: visual comparison
  const bool use_t = opts.t_compare;
  for (const auto& s : scores) {
    const bool v_local = s.local.c_hat > s.global.c_hat + m;
    const bool v_global = s.global.c_hat > s.local.c_hat + m;
    const bool t_local = s.local.c_tilde > s.global.c_tilde + m;
    const bool t_global = s.global.c_tilde > s.local.c_tilde + m;
    const bool local = (!use_v || v_local) && (!use_t || t_local);
    const bool global = (!use_v || v_global) && (!use_t || t_global);
    if (local && !global) out.omega_l.push_back(s.query);
    if (global && !local) out.omega_g.push_back(s.query);
  }
  return out;
}

ag::Var kl_divergence(const ag::Var& teacher, const ag::Var& student) {
  if (teacher.rows() != student.rows() || teacher.cols() != student.cols()) {
    throw ShapeError("kl_divergence: shape mismatch");
  }
  ag::Var log_ratio = ag::sub(ag::log(ag::clamp_min(teacher, kClamp)),
                              ag::log(ag::clamp_min(student, kClamp)));
  return ag::sum(ag::mul(teacher, log_ratio));
}

double kl_divergence(std::span<const double> teacher, std::span<const double> student) {
  if (teacher.size() != student.size()) throw ShapeError("kl_divergence: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    acc += teacher[i] * (std::log(std::max(teacher[i], kClamp)) - std::log(std::max(student[i], kClamp)));
  }
  return acc;
}

namespace {

const QueryScores& find_scores(const DistillInputs& in, int query, std::size_t* index) {
  for (std::size_t i = 0; i < in.scores.size(); ++i) {
    if (in.scores[i].query == query) {
      *index = i;
      return in.scores[i];
    }
  }
  throw InputError("distill_losses: no scores for query " + std::to_string(query));
}

ag::Var weighted_kl(const std::vector<int>& members, const DistillInputs& in, bool teacher_global,
                    bool detach_teacher) {
  if (members.empty()) return ag::constant_scalar(0.0);
  ag::Var acc;
  double weight_sum = 0.0;
  for (int q : members) {
    std::size_t i = 0;
    const QueryScores& s = find_scores(in, q, &i);
    const DiscriminantScores& t = teacher_global ? s.global : s.local;
    const double w = t.c_hat + t.c_tilde;
    ag::Var teacher = teacher_global ? in.global_visual.at(i) : in.local_visual.at(i);
    ag::Var student = teacher_global ? in.local_visual.at(i) : in.global_visual.at(i);
    if (detach_teacher) teacher = ag::detach(teacher);
    ag::Var term = ag::scale(kl_divergence(teacher, student), w);
    acc = acc.defined() ? ag::add(acc, term) : term;
    weight_sum += w;
  }
  return ag::scale(acc, 1.0 / weight_sum);
}

}  // namespace

DistillLosses distill_losses(const ReliabilityPartition& part, const DistillInputs& in,
                             bool detach_teacher) {
  if (in.global_visual.size() != in.scores.size() || in.local_visual.size() != in.scores.size()) {
    throw ShapeError("distill_losses: posterior and score counts differ");
  }
  return {weighted_kl(part.omega_g, in, true, detach_teacher),
          weighted_kl(part.omega_l, in, false, detach_teacher)};
}

ag::Var total_loss(const ag::Var& main, const ag::Var& g2l, const ag::Var& l2g, double lambda) {
  if (lambda < 0.0) throw ParamError("mvmd.lambda must be >= 0");
  return ag::add(main, ag::scale(ag::add(g2l, l2g), lambda));
}

double total_loss(double main, double g2l, double l2g, double lambda) {
  if (lambda < 0.0) throw ParamError("mvmd.lambda must be >= 0");
  return main + lambda * (g2l + l2g);
}

}  // namespace mdmf::mvmd
