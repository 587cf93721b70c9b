#include "trajdiff/model.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <utility>

#include "trajdiff/errors.hpp"
#include "trajdiff/rng.hpp"

namespace trajdiff::model {

using ad::Expr;
using Mat = Eigen::MatrixXd;

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"ctx_dim", c.ctx_dim},
                     {"width", c.width},
                     {"depth", c.depth},
                     {"geom_dim", c.geom_dim},
                     {"n_points", c.n_points},
                     {"knn_k", c.knn_k},
                     {"pool_tau", c.pool_tau},
                     {"context_len", c.context_len},
                     {"horizon", c.horizon},
                     {"diffusion_steps", c.diffusion_steps},
                     {"sampling_steps", c.sampling_steps},
                     {"point_widths", c.point_widths},
                     {"time_embed_dim", c.time_embed_dim},
                     {"ctx_heads", c.ctx_heads}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.ctx_dim = j.value("ctx_dim", c.ctx_dim);
  c.width = j.value("width", c.width);
  c.depth = j.value("depth", c.depth);
  c.geom_dim = j.value("geom_dim", c.geom_dim);
  c.n_points = j.value("n_points", c.n_points);
  c.knn_k = j.value("knn_k", c.knn_k);
  c.pool_tau = j.value("pool_tau", c.pool_tau);
  c.context_len = j.value("context_len", c.context_len);
  c.horizon = j.value("horizon", c.horizon);
  c.diffusion_steps = j.value("diffusion_steps", c.diffusion_steps);
  c.sampling_steps = j.value("sampling_steps", c.sampling_steps);
  c.point_widths = j.value("point_widths", c.point_widths);
  c.time_embed_dim = j.value("time_embed_dim", c.time_embed_dim);
  c.ctx_heads = j.value("ctx_heads", c.ctx_heads);
}

Eigen::MatrixXd& ParamStore::add(const std::string& name, Eigen::MatrixXd init) {
  if (contains(name)) throw DataMismatch("duplicate parameter name: " + name);
  index_.emplace(name, items_.size());
  items_.emplace_back(name, std::move(init));
  return items_.back().second;
}

Eigen::MatrixXd& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataMismatch("unknown parameter: " + name);
  return items_[it->second].second;
}

const Eigen::MatrixXd& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataMismatch("unknown parameter: " + name);
  return items_[it->second].second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : items_) n += static_cast<std::size_t>(m.size());
  return n;
}

namespace {

Mat seeded_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, std::uint64_t seed,
                   const std::string& name) {
  CounterRng rng(rng_derive(seed, name));
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.next_uniform(-a, a);
  return m;
}

void add_linear(ParamStore& p, const std::string& prefix, int in, int out, std::uint64_t seed) {
  p.add(prefix + ".w", seeded_uniform(in, out, in, seed, prefix + ".w"));
  p.add(prefix + ".b", Mat::Zero(1, out));
}

void add_attention(ParamStore& p, const std::string& prefix, int dim, std::uint64_t seed) {
  for (const char* part : {"wq", "wk", "wv", "wo"})
    p.add(prefix + "." + part, seeded_uniform(dim, dim, dim, seed, prefix + "." + part));
  for (const char* part : {"bq", "bk", "bv", "bo"}) p.add(prefix + "." + part, Mat::Zero(1, dim));
}

}  // namespace

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.width % cfg.n_heads() != 0) throw InvalidSpec("width must be divisible by head count");
  if (cfg.ctx_dim % cfg.ctx_heads != 0)
    throw InvalidSpec("ctx_dim must be divisible by ctx_heads");
  if (cfg.time_embed_dim % 2 != 0 || cfg.ctx_dim % 2 != 0)
    throw InvalidSpec("embedding dims must be even");

  ParamStore p;
  const int w = cfg.width;
  const auto [p0, p1, p2] = cfg.point_widths;

  add_linear(p, "ctx.embed", 13, cfg.ctx_dim, seed);
  p.add("ctx.time_scale", Mat::Ones(1, 1));
  add_attention(p, "ctx.attn", cfg.ctx_dim, seed);

  add_linear(p, "point.mlp1", 6, p0, seed);
  add_linear(p, "point.mlp2", p0, p0, seed);
  add_linear(p, "point.stage1", p0, p1, seed);
  add_linear(p, "point.film1", cfg.ctx_dim, 2 * p1, seed);
  add_linear(p, "point.stage2", p1, p2, seed);
  add_linear(p, "point.film2", cfg.ctx_dim, 2 * p2, seed);
  add_linear(p, "point.query", cfg.ctx_dim, p2, seed);
  add_linear(p, "point.out", p2, cfg.geom_dim, seed);

  add_linear(p, "dit.embed", 9, w, seed);
  p.add("dit.pos", seeded_uniform(cfg.context_len + cfg.horizon, w, w, seed, "dit.pos"));
  p.add("dit.type", seeded_uniform(2, w, w, seed, "dit.type"));
  add_linear(p, "dit.time", cfg.time_embed_dim, w, seed);
  add_linear(p, "dit.cond1", cfg.time_embed_dim + cfg.geom_dim, w, seed);
  add_linear(p, "dit.cond2", w, w, seed);

  for (int b = 0; b < cfg.depth; ++b) {
    const std::string pre = "dit.block" + std::to_string(b);
    add_attention(p, pre + ".attn", w, seed);
    add_linear(p, pre + ".mlp1", w, 4 * w, seed);
    add_linear(p, pre + ".mlp2", 4 * w, w, seed);
    // AdaLN modulation: [shift_a | scale_a | gate_a | shift_m | scale_m | gate_m];
    // gate bands start at exactly zero.
    Mat ada = seeded_uniform(w, 6 * w, w, seed, pre + ".ada.w");
    ada.middleCols(2 * w, w).setZero();
    ada.middleCols(5 * w, w).setZero();
    p.add(pre + ".ada.w", std::move(ada));
    p.add(pre + ".ada.b", Mat::Zero(1, 6 * w));
  }

  add_linear(p, "dit.final_ada", w, 2 * w, seed);
  p.add("dit.head.w", Mat::Zero(w, 9));
  p.add("dit.head.b", Mat::Zero(1, 9));
  return p;
}

void activate_zero_init(ParamStore& params, const ModelConfig& cfg, std::uint64_t seed,
                        double scale) {
  const auto fill = [&](Mat& m, const std::string& tag) {
    CounterRng rng(rng_derive(seed, tag));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.next_uniform(-scale, scale);
  };
  fill(params.at("dit.head.w"), "head.w");
  fill(params.at("dit.head.b"), "head.b");
  const int w = cfg.width;
  for (int b = 0; b < cfg.depth; ++b) {
    const std::string pre = "dit.block" + std::to_string(b);
    Mat& ada_w = params.at(pre + ".ada.w");
    Mat& ada_b = params.at(pre + ".ada.b");
    for (const int band : {2, 5}) {
      Mat gw(w, w), gb(1, w);
      fill(gw, pre + ".gate.w" + std::to_string(band));
      fill(gb, pre + ".gate.b" + std::to_string(band));
      ada_w.middleCols(band * w, w) = gw;
      ada_b.middleCols(band * w, w) = gb;
    }
  }
}

Expr TapeParams::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Expr e = tape_->leaf(store_->at(name));
  bound_.emplace(name, e);
  return e;
}

std::vector<Eigen::MatrixXd> TapeParams::grads() const {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(store_->items().size());
  for (const auto& [name, m] : store_->items()) {
    auto it = bound_.find(name);
    if (it == bound_.end())
      out.push_back(Mat::Zero(m.rows(), m.cols()));
    else
      out.push_back(tape_->grad(it->second));
  }
  return out;
}

Eigen::MatrixXd sincos_embedding(const std::vector<double>& positions, int dim) {
  if (dim % 2 != 0) throw InvalidSpec("sincos dim must be even");
  Mat out(static_cast<Eigen::Index>(positions.size()), dim);
  const int half = dim / 2;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    for (int j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(10000.0) * (2.0 * j / dim));
      out(static_cast<Eigen::Index>(i), 2 * j) = std::sin(positions[i] * freq);
      out(static_cast<Eigen::Index>(i), 2 * j + 1) = std::cos(positions[i] * freq);
    }
  }
  return out;
}

std::vector<int> knn_indices(const Eigen::MatrixXd& points, int k) {
  const int n = static_cast<int>(points.rows());
  k = std::min(k, n);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(k));
  std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double d = (points.row(i).head<3>() - points.row(j).head<3>()).squaredNorm();
      dist[static_cast<std::size_t>(j)] = {d, j};
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (int j = 0; j < k; ++j) out.push_back(dist[static_cast<std::size_t>(j)].second);
  }
  return out;
}

namespace {

/// Multi-head self-attention over an L x dim sequence.
Expr mha(TapeParams& p, const std::string& prefix, Expr x, int n_heads) {
  const Eigen::Index rows = x.rows();
  const Eigen::Index dim = x.cols();
  const Eigen::Index hd = dim / n_heads;
  Expr q = ad::affine(x, p(prefix + ".wq"), p(prefix + ".bq"));
  Expr k = ad::affine(x, p(prefix + ".wk"), p(prefix + ".bk"));
  Expr v = ad::affine(x, p(prefix + ".wv"), p(prefix + ".bv"));
  Expr out;
  for (int h = 0; h < n_heads; ++h) {
    Expr qh = ad::block(q, 0, h * hd, rows, hd);
    Expr kh = ad::block(k, 0, h * hd, rows, hd);
    Expr vh = ad::block(v, 0, h * hd, rows, hd);
    Expr s = ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(hd)));
    Expr o = ad::matmul(ad::softmax_rows(s), vh);
    out = (h == 0) ? o : ad::hstack(out, o);
  }
  return ad::affine(out, p(prefix + ".wo"), p(prefix + ".bo"));
}

Expr modulate(ad::Tape& t, Expr h, Expr scale_vec, Expr shift_vec) {
  Expr one_plus = ad::add(scale_vec, t.constant(Mat::Ones(1, scale_vec.cols())));
  return ad::add_rowvec(ad::mul_rowvec(h, one_plus), shift_vec);
}

}  // namespace

Expr encode_context(ad::Tape& tape, TapeParams& p, const ModelConfig& cfg,
                    const Eigen::MatrixXd& ctx_tokens, const Eigen::MatrixXd& boxes) {
  const Eigen::Index c = ctx_tokens.rows();
  if (c < 1) throw ShapeMismatch("encode_context needs C >= 1 tokens");
  if (ctx_tokens.cols() != 9 || boxes.rows() != c || boxes.cols() != 4)
    throw ShapeMismatch("encode_context: need C x 9 tokens and C x 4 boxes");

  Mat x13(c, 13);
  x13 << ctx_tokens, boxes;
  Expr e = ad::affine(tape.constant(x13), p("ctx.embed.w"), p("ctx.embed.b"));

  std::vector<double> rel(static_cast<std::size_t>(c));
  for (Eigen::Index i = 0; i < c; ++i) rel[static_cast<std::size_t>(i)] = static_cast<double>(i + 1 - c);
  Expr pe = tape.constant(sincos_embedding(rel, cfg.ctx_dim));
  e = ad::add(e, ad::mul_scalar(pe, p("ctx.time_scale")));

  const Eigen::Index dim = cfg.ctx_dim;
  const Eigen::Index hd = dim / cfg.ctx_heads;
  Expr anchor = ad::block(e, c - 1, 0, 1, dim);
  Expr q = ad::affine(anchor, p("ctx.attn.wq"), p("ctx.attn.bq"));
  Expr k = ad::affine(e, p("ctx.attn.wk"), p("ctx.attn.bk"));
  Expr v = ad::affine(e, p("ctx.attn.wv"), p("ctx.attn.bv"));
  Expr pooled;
  for (int h = 0; h < cfg.ctx_heads; ++h) {
    Expr qh = ad::block(q, 0, h * hd, 1, hd);
    Expr kh = ad::block(k, 0, h * hd, c, hd);
    Expr vh = ad::block(v, 0, h * hd, c, hd);
    Expr s = ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(hd)));
    Expr o = ad::matmul(ad::softmax_rows(s), vh);
    pooled = (h == 0) ? o : ad::hstack(pooled, o);
  }
  Expr attended = ad::affine(pooled, p("ctx.attn.wo"), p("ctx.attn.bo"));
  return ad::add(attended, anchor);
}

Expr encode_scene(ad::Tape& tape, TapeParams& p, const ModelConfig& cfg,
                  const Eigen::MatrixXd& points, const std::vector<int>& knn, Expr ctx,
                  const Eigen::Vector3d& centroid, SceneTrace* trace) {
  const Eigen::Index n = points.rows();
  if (n < 1 || points.cols() != 6) throw ShapeMismatch("encode_scene: points must be N x 6, N >= 1");
  const int k = std::min(cfg.knn_k, static_cast<int>(n));
  if (knn.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(k))
    throw ShapeMismatch("encode_scene: neighbor list size mismatch");

  Expr f = ad::gelu(ad::affine(tape.constant(points), p("point.mlp1.w"), p("point.mlp1.b")));
  f = ad::gelu(ad::affine(f, p("point.mlp2.w"), p("point.mlp2.b")));

  for (int stage = 1; stage <= 2; ++stage) {
    const std::string sname = "point.stage" + std::to_string(stage);
    const std::string fname = "point.film" + std::to_string(stage);
    Expr m = ad::knn_max(f, knn, k);
    Expr h = ad::gelu(ad::affine(m, p(sname + ".w"), p(sname + ".b")));
    Expr film = ad::affine(ctx, p(fname + ".w"), p(fname + ".b"));
    const Eigen::Index width = h.cols();
    Expr sc = ad::block(film, 0, 0, 1, width);
    Expr sh = ad::block(film, 0, width, 1, width);
    f = modulate(tape, h, sc, sh);
  }

  // object-biased attention pooling
  Expr q = ad::affine(ctx, p("point.query.w"), p("point.query.b"));
  Expr logits = ad::transpose(
      ad::scale(ad::matmul(f, ad::transpose(q)), 1.0 / std::sqrt(static_cast<double>(f.cols()))));
  Mat bias(1, n);
  for (Eigen::Index i = 0; i < n; ++i)
    bias(0, i) = -(points.row(i).head<3>().transpose() - centroid).norm() / cfg.pool_tau;
  Expr weights = ad::softmax_rows(ad::add(logits, tape.constant(bias)));
  if (trace) trace->pool_weights = tape.value(weights).row(0);
  Expr pooled = ad::matmul(weights, f);
  return ad::affine(pooled, p("point.out.w"), p("point.out.b"));
}

Expr dit_forward(ad::Tape& tape, TapeParams& p, const ModelConfig& cfg, const Eigen::MatrixXd& y_t,
                 int t, const Eigen::MatrixXd& ctx_tokens, Expr z_geom, DitTrace* trace) {
  const Eigen::Index c = cfg.context_len;
  const Eigen::Index h = cfg.horizon;
  if (ctx_tokens.rows() != c || ctx_tokens.cols() != 9)
    throw ShapeMismatch("dit_forward: context tokens must be C x 9");
  if (y_t.rows() != h || y_t.cols() != 9) throw ShapeMismatch("dit_forward: y_t must be H x 9");
  if (t < 0 || t >= cfg.diffusion_steps) throw InvalidCounts("dit_forward: step out of range");
  const Eigen::Index w = cfg.width;

  Mat seq(c + h, 9);
  seq << ctx_tokens, y_t;
  Expr x = ad::affine(tape.constant(seq), p("dit.embed.w"), p("dit.embed.b"));
  x = ad::add(x, p("dit.pos"));

  std::vector<int> type_idx(static_cast<std::size_t>(c + h), 1);
  std::fill(type_idx.begin(), type_idx.begin() + c, 0);
  x = ad::add(x, ad::gather_rows(p("dit.type"), type_idx));

  std::vector<double> rel(static_cast<std::size_t>(c + h));
  for (Eigen::Index i = 0; i < c; ++i) rel[static_cast<std::size_t>(i)] = static_cast<double>(i + 1 - c);
  for (Eigen::Index j = 0; j < h; ++j) rel[static_cast<std::size_t>(c + j)] = static_cast<double>(j + 1);
  Expr st = tape.constant(sincos_embedding(rel, cfg.time_embed_dim));
  x = ad::add(x, ad::affine(st, p("dit.time.w"), p("dit.time.b")));

  Expr t_embed = tape.constant(sincos_embedding({static_cast<double>(t)}, cfg.time_embed_dim));
  Expr cond_in = ad::hstack(t_embed, z_geom);
  Expr cvec = ad::affine(ad::gelu(ad::affine(cond_in, p("dit.cond1.w"), p("dit.cond1.b"))),
                         p("dit.cond2.w"), p("dit.cond2.b"));

  for (int b = 0; b < cfg.depth; ++b) {
    const std::string pre = "dit.block" + std::to_string(b);
    Expr mod = ad::affine(ad::gelu(cvec), p(pre + ".ada.w"), p(pre + ".ada.b"));
    Expr sh_a = ad::block(mod, 0, 0 * w, 1, w);
    Expr sc_a = ad::block(mod, 0, 1 * w, 1, w);
    Expr g_a = ad::block(mod, 0, 2 * w, 1, w);
    Expr sh_m = ad::block(mod, 0, 3 * w, 1, w);
    Expr sc_m = ad::block(mod, 0, 4 * w, 1, w);
    Expr g_m = ad::block(mod, 0, 5 * w, 1, w);

    if (trace) trace->block_in.push_back(tape.value(x));
    Expr ha = modulate(tape, ad::layer_norm_rows(x), sc_a, sh_a);
    Expr attn = mha(p, pre + ".attn", ha, cfg.n_heads());
    x = ad::add(x, ad::mul_rowvec(attn, g_a));

    Expr hm = modulate(tape, ad::layer_norm_rows(x), sc_m, sh_m);
    Expr mlp = ad::affine(ad::gelu(ad::affine(hm, p(pre + ".mlp1.w"), p(pre + ".mlp1.b"))),
                          p(pre + ".mlp2.w"), p(pre + ".mlp2.b"));
    x = ad::add(x, ad::mul_rowvec(mlp, g_m));
    if (trace) trace->block_out.push_back(tape.value(x));
  }

  Expr fmod = ad::affine(ad::gelu(cvec), p("dit.final_ada.w"), p("dit.final_ada.b"));
  Expr sh_f = ad::block(fmod, 0, 0, 1, w);
  Expr sc_f = ad::block(fmod, 0, w, 1, w);
  Expr out = ad::affine(modulate(tape, ad::layer_norm_rows(x), sc_f, sh_f), p("dit.head.w"),
                        p("dit.head.b"));
  return ad::block(out, c, 0, h, 9);
}

Conditioning encode_conditioning(const tokens::TrajectoryWindow& w, const ParamStore& params,
                                 const ModelConfig& cfg, const tokens::TokenStats& stats) {
  Conditioning cond;
  cond.context_tokens = tokens::standardize(tokens::tokenize(w.context_poses), stats);
  cond.boxes = w.context_boxes;
  ad::Tape tape;
  TapeParams p(tape, params);
  Expr ctx = encode_context(tape, p, cfg, cond.context_tokens, cond.boxes);
  const std::vector<int> knn = knn_indices(w.anchor_points, cfg.knn_k);
  Expr z = encode_scene(tape, p, cfg, w.anchor_points, knn, ctx, w.anchor_pose().translation);
  cond.ctx = tape.value(ctx).row(0);
  cond.z_geom = tape.value(z).row(0);
  return cond;
}

Eigen::MatrixXd forward_v(const ParamStore& params, const ModelConfig& cfg,
                          const Conditioning& cond, const Eigen::MatrixXd& y_t, int t) {
  ad::Tape tape;
  TapeParams p(tape, params);
  Expr z = tape.constant(cond.z_geom);
  Expr v = dit_forward(tape, p, cfg, y_t, t, cond.context_tokens, z);
  return tape.value(v);
}

std::vector<se3::Pose> predict_trajectory(const tokens::TrajectoryWindow& w,
                                          const ParamStore& params, const ModelConfig& cfg,
                                          const tokens::TokenStats& stats,
                                          const diffusion::Schedule& sched, std::uint64_t seed) {
  const Conditioning cond = encode_conditioning(w, params, cfg, stats);
  return predict_with_conditioning(cond, params, cfg, stats, sched, seed, w.clip_id);
}

std::vector<se3::Pose> predict_with_conditioning(const Conditioning& cond,
                                                 const ParamStore& params, const ModelConfig& cfg,
                                                 const tokens::TokenStats& stats,
                                                 const diffusion::Schedule& sched,
                                                 std::uint64_t seed, const std::string& tag) {
  const auto denoise = [&](const Eigen::MatrixXd& y, int t) {
    return forward_v(params, cfg, cond, y, t);
  };
  const Eigen::MatrixXd y = diffusion::ddim_sample(denoise, sched, cfg.horizon, 9, seed);
  const Eigen::MatrixXd phys = tokens::destandardize(y, stats);

  std::vector<se3::Pose> out(static_cast<std::size_t>(phys.rows()));
  for (Eigen::Index i = 0; i < phys.rows(); ++i) {
    se3::Pose pose;
    const double z = std::exp(phys(i, 2));
    pose.translation = se3::Vec3(phys(i, 0) * z, phys(i, 1) * z, z);
    try {
      pose.rotation = se3::rot6d_decode(
          se3::Rot6d{phys.row(i).segment<3>(3).transpose(), phys.row(i).segment<3>(6).transpose()});
    } catch (const DegenerateRotation&) {
      std::cerr << "warning: degenerate rotation token in sample " << tag << " step " << i
                << ", substituting identity\n";
      pose.rotation = se3::Mat3::Identity();
    }
    out[static_cast<std::size_t>(i)] = pose;
  }
  return out;
}

double gradient_check(ParamStore& params, const GraphBuilder& build, int probes,
                      std::uint64_t seed, double h, double min_grad) {
  ad::Tape tape;
  TapeParams tp(tape, params);
  Expr loss = build(tape, tp);
  tape.backward(loss);
  const std::vector<Eigen::MatrixXd> grads = tp.grads();

  const auto eval = [&]() {
    ad::Tape t2;
    TapeParams tp2(t2, params);
    return t2.value(build(t2, tp2))(0, 0);
  };

  std::vector<std::size_t> sizes;
  std::size_t total = 0;
  for (const auto& [name, m] : params.items()) {
    sizes.push_back(static_cast<std::size_t>(m.size()));
    total += static_cast<std::size_t>(m.size());
  }

  CounterRng rng(seed);
  double max_rel = 0.0;
  int done = 0;
  for (std::size_t attempt = 0; done < probes && attempt < 1000 * static_cast<std::size_t>(probes);
       ++attempt) {
    std::size_t flat = rng.next_below(total);
    std::size_t item = 0;
    while (flat >= sizes[item]) {
      flat -= sizes[item];
      ++item;
    }
    const double analytic = grads[item].data()[flat];
    if (std::abs(analytic) < min_grad) continue;
    double* slot = params.items()[item].second.data() + flat;
    const double saved = *slot;
    *slot = saved + h;
    const double lp = eval();
    *slot = saved - h;
    const double lm = eval();
    *slot = saved;
    const double numeric = (lp - lm) / (2.0 * h);
    const double rel =
        std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, rel);
    ++done;
  }
  if (done < probes) throw NumericError("gradient_check: too few probes above the gradient floor");
  return max_rel;
}

}  // namespace trajdiff::model
