#include "mdmf/model.hpp"

#include <algorithm>

#include "mdmf/errors.hpp"
#include "mdmf/rng.hpp"

namespace mdmf {

namespace {

std::string view_prefix(ViewKind v) { return std::string("mmfe.") + to_string(v) + "."; }

ag::Var stack(const std::vector<ag::Var>& parts) { return ag::concat_rows(parts); }

}  // namespace

MdmfModel::MdmfModel(const RunConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  encoders = make_encoders(cfg_.encoder);
  const Eigen::Index dim = cfg_.encoder.dim;
  if (encoders.visual->dim() != dim || encoders.text->dim() != dim) {
    throw ShapeError("visual and text encoders must share the embedding dimension");
  }
  if (cfg_.has_view(ViewKind::local)) {
    ltce = LocalContextExtractor(dim, cfg_.ltce_kernel, derive_seed(cfg_.seed, "ltce"));
  }
  if (cfg_.has_view(ViewKind::global)) {
    gtce = GlobalContextExtractor(dim, cfg_.tcn_dilations, derive_seed(cfg_.seed, "gtce"));
    warning_ = tcn_coverage_warning(cfg_.tcn_dilations, 2, cfg_.frames);
  }
  for (ViewKind v : cfg_.views) {
    mmfe.emplace(v, FusionEncoder(cfg_.frames, dim, cfg_.mmfe,
                                  derive_seed(cfg_.seed, view_prefix(v))));
  }
  Rng rng(derive_seed(cfg_.seed, "null-token"));
  null_token = ag::parameter(gaussian_matrix(rng, 1, dim, cfg_.mmfe.pos_init_std));
}

NamedVars MdmfModel::parameters() const {
  NamedVars out;
  append_prefixed(out, "", encoders.visual->parameters());
  if (cfg_.has_view(ViewKind::local)) append_prefixed(out, "ltce.", ltce.parameters());
  if (cfg_.has_view(ViewKind::global)) append_prefixed(out, "gtce.", gtce.parameters());
  for (const auto& [v, enc] : mmfe) append_prefixed(out, view_prefix(v), enc.parameters());
  if (!cfg_.pps_enabled) out.emplace_back("null_token", null_token);
  return out;
}

NamedVars MdmfModel::buffers() const {
  NamedVars out;
  if (cfg_.has_view(ViewKind::local)) append_prefixed(out, "ltce.", ltce.buffers());
  return out;
}

std::vector<ag::Var> MdmfModel::context(ViewKind view, const std::vector<ag::Var>& clips,
                                        bool training) {
  if (view == ViewKind::none) return clips;
  const Eigen::Index t = clips.front().rows();
  // All clips of the episode go through together so batch norm sees batch x time.
  ag::Var x = stack(clips);
  ag::Var y = view == ViewKind::local ? ltce.forward(x, t, training) : gtce.forward(x, t);
  std::vector<ag::Var> out;
  out.reserve(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    out.push_back(ag::slice_rows(y, static_cast<Eigen::Index>(i) * t, t));
  }
  return out;
}

EpisodeOutput MdmfModel::forward_episode(const Episode& ep, const ForwardOptions& opts) {
  const int n = ep.way;
  const int k = ep.shot;
  const int p = static_cast<int>(ep.queries.size());
  if (n < 2 || k < 1 || p < 1) throw InputError("forward_episode: empty episode");
  if (static_cast<int>(ep.class_set.size()) != n || static_cast<int>(ep.support.size()) != n * k ||
      static_cast<int>(ep.query_truth.size()) != p) {
    throw InputError("forward_episode: episode fields disagree on N, K or P");
  }

  // Encode every clip; supports first, then queries.
  std::vector<const VideoSample*> clips;
  for (const auto& s : ep.support) clips.push_back(&s);
  for (const auto& q : ep.queries) clips.push_back(&q);
  std::vector<ag::Var> frames;
  frames.reserve(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto idx = sample_frames(*clips[i], cfg_.frames, !opts.training,
                                   derive_seed(ep.seed, "frames", i));
    frames.push_back(encoders.visual->encode_video(*clips[i], idx).data);
  }

  std::vector<PromptEmbedding> class_tokens;
  for (const auto& c : ep.class_set) class_tokens.push_back(encoders.text->encode_label(c));

  std::vector<PromptEmbedding> tokens;  // one per clip
  for (int c = 0; c < n; ++c) {
    for (int j = 0; j < k; ++j) tokens.push_back(class_tokens[static_cast<std::size_t>(c)]);
  }
  for (int q = 0; q < p; ++q) {
    const ag::Var& fq = frames[static_cast<std::size_t>(n * k + q)];
    if (cfg_.pps_enabled) {
      const ag::RowVector v = pps::query_video_vector(fq.value());
      std::vector<double> sims;
      for (const auto& t : class_tokens) sims.push_back(pps::similarity(v, t.data.value()));
      const auto dist = pps::prompt_distribution(sims, cfg_.pps_temperature, ep.class_set);
      tokens.push_back(pps::select_prompt(dist, class_tokens, cfg_.pps_mode,
                                          derive_seed(ep.seed, "pps", static_cast<std::uint64_t>(q))));
    } else {
      tokens.push_back({null_token, {}, PromptOrigin::null_token});
    }
  }

  EpisodeOutput out;
  std::map<ViewKind, std::vector<FusedFeatures>> query_feats;
  std::map<ViewKind, std::vector<Prototype>> protos;
  std::vector<ag::Var> view_dists;
  for (ViewKind v : cfg_.views) {
    const auto ctx = context(v, frames, opts.training);
    const FusionEncoder& enc = mmfe.at(v);
    std::vector<FusedFeatures> fused;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      const SampleRole role = static_cast<int>(i) < n * k ? SampleRole::support : SampleRole::query;
      fused.push_back(enc.fuse(concat_token(tokens[i], ctx[i]), concat_token(tokens[i], frames[i]), v, role));
      if (opts.collect_embeddings) {
        out.embeddings.push_back({clips[i]->id, clips[i]->label, v, role,
                                  fused.back().visual_rows().value().colwise().mean()});
      }
    }
    auto& pr = protos[v];
    for (int c = 0; c < n; ++c) {
      pr.push_back(prototype(std::span<const FusedFeatures>(fused.data() + c * k, static_cast<std::size_t>(k)),
                             ep.class_set[static_cast<std::size_t>(c)]));
    }
    auto& qf = query_feats[v];
    qf.assign(fused.begin() + n * k, fused.end());

    std::vector<ag::Var> rows;
    for (int q = 0; q < p; ++q) {
      std::vector<ag::Var> cells;
      for (int c = 0; c < n; ++c) {
        cells.push_back(view_distance(qf[static_cast<std::size_t>(q)], pr[static_cast<std::size_t>(c)], cfg_.otam));
      }
      rows.push_back(ag::concat_cols(cells));
    }
    ag::Var d = ag::concat_rows(rows);
    out.distances.per_view[v] = d;
    view_dists.push_back(d);
  }
  out.distances.fused = fuse_distance(view_dists);
  out.probs = classify(out.distances.fused);
  out.main_loss = cross_entropy_from_distances(out.distances.fused, ep.query_truth);

  int correct = 0;
  const ag::Matrix& probs = out.probs.value();
  for (int q = 0; q < p; ++q) {
    Eigen::Index best = 0;
    probs.row(q).maxCoeff(&best);
    out.predictions.push_back(static_cast<int>(best));
    if (best == ep.query_truth[static_cast<std::size_t>(q)]) ++correct;
  }
  out.accuracy = static_cast<double>(correct) / p;

  out.loss_g2l = ag::constant_scalar(0.0);
  out.loss_l2g = ag::constant_scalar(0.0);
  if (cfg_.mvmd_enabled && cfg_.multi_view()) {
    mvmd::DistillInputs in;
    std::map<ViewKind, ag::Var> class_rows;
    for (ViewKind v : {ViewKind::local, ViewKind::global}) {
      std::vector<ag::Var> r;
      for (const auto& u : protos[v]) r.push_back(u.prompt_row());
      class_rows[v] = ag::concat_rows(r);
    }
    for (int q = 0; q < p; ++q) {
      mvmd::QueryScores qs;
      qs.query = q;
      for (ViewKind v : {ViewKind::local, ViewKind::global}) {
        mvmd::ViewPosteriors post;
        post.view = v;
        post.query = q;
        post.visual = mvmd::posterior_visual(ag::slice_rows(out.distances.per_view[v], q, 1));
        {
          ag::NoGradGuard guard;
          post.text = mvmd::posterior_text(query_feats[v][static_cast<std::size_t>(q)].prompt_row(),
                                           class_rows[v]);
        }
        const auto s = mvmd::discriminants(post);
        (v == ViewKind::local ? qs.local : qs.global) = s;
        (v == ViewKind::local ? in.local_visual : in.global_visual).push_back(post.visual);
        out.posteriors.push_back(post);
      }
      out.scores.push_back(qs);
    }
    in.scores = out.scores;
    out.partition = mvmd::partition(out.scores, cfg_.mvmd_gating);
    auto losses = mvmd::distill_losses(out.partition, in);
    if (cfg_.mvmd_direction != mvmd::Direction::up_down) out.loss_g2l = losses.global_to_local;
    if (cfg_.mvmd_direction != mvmd::Direction::down_up) out.loss_l2g = losses.local_to_global;
    out.total_loss = mvmd::total_loss(out.main_loss, out.loss_g2l, out.loss_l2g, cfg_.mvmd_lambda);
  } else {
    out.total_loss = out.main_loss;
  }
  return out;
}

}  // namespace mdmf
