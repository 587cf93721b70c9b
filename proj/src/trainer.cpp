#include "trajdiff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include "trajdiff/errors.hpp"
#include "trajdiff/io.hpp"
#include "trajdiff/metrics.hpp"
#include "trajdiff/rng.hpp"
#include "trajdiff/schedule.hpp"

namespace trajdiff::train {

using Mat = Eigen::MatrixXd;
using nlohmann::json;

void to_json(json& j, const TrainConfig& c) {
  j = json{{"batch_size", c.batch_size},
           {"steps", c.steps},
           {"learning_rate", c.learning_rate},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"grad_clip_norm", c.grad_clip_norm},
           {"seed", c.seed},
           {"k_warmup", c.k_warmup},
           {"eval_every", c.eval_every},
           {"jobs", c.jobs}};
}

void from_json(const json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
  c.seed = j.value("seed", c.seed);
  c.k_warmup = j.value("k_warmup", c.k_warmup);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.jobs = j.value("jobs", c.jobs);
}

namespace {

/// Epoch-wise seeded shuffle, consumed batch by batch.
class BatchStream {
 public:
  BatchStream(std::size_t n, int batch_size, std::uint64_t seed)
      : n_(n), batch_(static_cast<std::size_t>(batch_size)), seed_(seed) {
    reshuffle();
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
      if (pos_ == n_) {
        ++epoch_;
        reshuffle();
      }
      out.push_back(perm_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    perm_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
    CounterRng rng(rng_derive(rng_derive(seed_, "perm"), epoch_));
    for (std::size_t i = n_; i > 1; --i) {
      const std::size_t j = rng.next_below(i);
      std::swap(perm_[i - 1], perm_[j]);
    }
    pos_ = 0;
  }

  std::size_t n_;
  std::size_t batch_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::size_t> perm_;
};

struct Sample {
  const tokens::TrajectoryWindow* window = nullptr;
  Mat context_tokens_raw;  // C x 9, unstandardized
  Mat future_tokens_raw;   // H x 9
  std::vector<int> knn;
};

struct SampleLoss {
  std::vector<Mat> grads;
  losses::Breakdown values;
};

SampleLoss sample_loss(const Sample& s, const model::ParamStore& params,
                       const model::ModelConfig& mcfg, const diffusion::Schedule& sched,
                       const tokens::TokenStats& stats, const losses::LossWeights& weights,
                       const Eigen::VectorXd& horizon_w, int t, const Mat& eps) {
  const Mat ctx_std = tokens::standardize(s.context_tokens_raw, stats);
  const Mat y0 = tokens::standardize(s.future_tokens_raw, stats);
  const Mat y_t = diffusion::q_sample(y0, t, eps, sched);
  const Mat v_tgt = diffusion::v_target(y0, eps, t, sched);

  ad::Tape tape;
  model::TapeParams tp(tape, params);
  ad::Expr ctx = model::encode_context(tape, tp, mcfg, ctx_std, s.window->context_boxes);
  ad::Expr z = model::encode_scene(tape, tp, mcfg, s.window->anchor_points, s.knn, ctx,
                                   s.window->anchor_pose().translation);
  ad::Expr v_pred = model::dit_forward(tape, tp, mcfg, y_t, t, ctx_std, z);
  const losses::LossExprs e = losses::total_loss_ad(tape, v_pred, y_t, v_tgt, t, sched, stats,
                                                    s.window->future_poses, weights, horizon_w);
  tape.backward(e.total);

  SampleLoss out;
  out.grads = tp.grads();
  out.values.total = tape.value(e.total)(0, 0);
  out.values.v = tape.value(e.v)(0, 0);
  out.values.aux = tape.value(e.aux)(0, 0);
  out.values.vel = tape.value(e.vel)(0, 0);
  out.values.acc = tape.value(e.acc)(0, 0);
  out.values.zmin = tape.value(e.zmin)(0, 0);
  return out;
}

}  // namespace

TrainResult train(std::span<const tokens::TrajectoryWindow> dataset,
                  const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                  const losses::LossWeights& weights,
                  std::span<const tokens::TrajectoryWindow> eval_windows) {
  if (dataset.empty()) throw DataMismatch("train: empty dataset");
  for (const auto& w : dataset)
    if (w.context_len != mcfg.context_len || w.horizon != mcfg.horizon)
      throw DataMismatch("train: window C/H does not match the model config: " + w.clip_id);

  const diffusion::Schedule sched =
      diffusion::build_schedule(mcfg.diffusion_steps, mcfg.sampling_steps);
  const Eigen::VectorXd horizon_w = diffusion::horizon_weights(mcfg.horizon);

  std::vector<Sample> samples(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    samples[i].window = &dataset[i];
    samples[i].context_tokens_raw = tokens::tokenize(dataset[i].context_poses);
    samples[i].future_tokens_raw = tokens::tokenize(dataset[i].future_poses);
    samples[i].knn = model::knn_indices(dataset[i].anchor_points, mcfg.knn_k);
  }

  // Statistics pre-pass: the first k_warmup batches of the epoch-0 shuffle,
  // future tokens only; frozen before the first update.
  tokens::StatsAccumulator acc;
  {
    BatchStream warmup(dataset.size(), tcfg.batch_size, tcfg.seed);
    for (int b = 0; b < std::max(1, tcfg.k_warmup); ++b) {
      for (const std::size_t idx : warmup.next()) acc.add(samples[idx].future_tokens_raw);
    }
  }
  const tokens::TokenStats stats = acc.freeze();

  model::ParamStore params = model::init_params(mcfg, tcfg.seed);

  // Adam state
  std::vector<Mat> m_state, v_state;
  for (const auto& [name, p] : params.items()) {
    m_state.push_back(Mat::Zero(p.rows(), p.cols()));
    v_state.push_back(Mat::Zero(p.rows(), p.cols()));
  }

  std::ostringstream curve;
  curve.precision(10);
  curve << "step,loss,loss_v,loss_aux,loss_vel,loss_acc,loss_zmin\n";
  std::ostringstream eval_curve;
  eval_curve.precision(10);
  if (tcfg.eval_every > 0 && !eval_windows.empty()) eval_curve << "step,ade\n";

  BatchStream stream(dataset.size(), tcfg.batch_size, tcfg.seed);
  const int jobs = std::max(1, tcfg.jobs);
  const std::uint64_t noise_seed = rng_derive(tcfg.seed, "noise");

  for (int step = 0; step < tcfg.steps; ++step) {
    const std::vector<std::size_t> batch = stream.next();

    std::vector<SampleLoss> results(batch.size());
    const auto worker = [&](std::size_t lo, std::size_t hi) {
      for (std::size_t j = lo; j < hi; ++j) {
        CounterRng rng(rng_derive(rng_derive(noise_seed, static_cast<std::uint64_t>(step)), j));
        const int t = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(sched.total_steps)));
        Mat eps(mcfg.horizon, 9);
        for (Eigen::Index r = 0; r < eps.rows(); ++r)
          for (Eigen::Index c = 0; c < eps.cols(); ++c) eps(r, c) = rng.next_gaussian();
        results[j] = sample_loss(samples[batch[j]], params, mcfg, sched, stats, weights,
                                 horizon_w, t, eps);
      }
    };
    if (jobs == 1 || batch.size() == 1) {
      worker(0, batch.size());
    } else {
      std::vector<std::thread> pool;
      const std::size_t chunk = (batch.size() + jobs - 1) / static_cast<std::size_t>(jobs);
      for (int jt = 0; jt < jobs; ++jt) {
        const std::size_t lo = static_cast<std::size_t>(jt) * chunk;
        const std::size_t hi = std::min(batch.size(), lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back(worker, lo, hi);
      }
      for (auto& th : pool) th.join();
    }

    // deterministic reduction in sample-index order
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    std::vector<Mat> grads;
    grads.reserve(params.items().size());
    for (std::size_t pi = 0; pi < params.items().size(); ++pi)
      grads.push_back(Mat::Zero(params.items()[pi].second.rows(), params.items()[pi].second.cols()));
    losses::Breakdown mean_loss;
    for (const SampleLoss& r : results) {
      for (std::size_t pi = 0; pi < grads.size(); ++pi) grads[pi] += r.grads[pi];
      mean_loss.total += r.values.total;
      mean_loss.v += r.values.v;
      mean_loss.aux += r.values.aux;
      mean_loss.vel += r.values.vel;
      mean_loss.acc += r.values.acc;
      mean_loss.zmin += r.values.zmin;
    }
    for (Mat& g : grads) g *= inv_b;
    mean_loss.total *= inv_b;
    mean_loss.v *= inv_b;
    mean_loss.aux *= inv_b;
    mean_loss.vel *= inv_b;
    mean_loss.acc *= inv_b;
    mean_loss.zmin *= inv_b;

    if (!std::isfinite(mean_loss.total))
      throw NumericError("non-finite loss at step " + std::to_string(step));

    clip_global_norm(grads, tcfg.grad_clip_norm);

    // Adam
    const double t_adam = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(tcfg.adam_beta1, t_adam);
    const double bc2 = 1.0 - std::pow(tcfg.adam_beta2, t_adam);
    for (std::size_t pi = 0; pi < grads.size(); ++pi) {
      Mat& m = m_state[pi];
      Mat& v = v_state[pi];
      m = tcfg.adam_beta1 * m + (1.0 - tcfg.adam_beta1) * grads[pi];
      v = tcfg.adam_beta2 * v + (1.0 - tcfg.adam_beta2) * grads[pi].cwiseProduct(grads[pi]);
      params.items()[pi].second -=
          (tcfg.learning_rate * (m / bc1).array() / ((v / bc2).array().sqrt() + tcfg.adam_eps))
              .matrix();
    }

    curve << step << "," << mean_loss.total << "," << mean_loss.v << "," << mean_loss.aux << ","
          << mean_loss.vel << "," << mean_loss.acc << "," << mean_loss.zmin << "\n";

    if (tcfg.eval_every > 0 && !eval_windows.empty() && (step + 1) % tcfg.eval_every == 0) {
      const metrics::MetricReport rep = metrics::evaluate_batch(
          eval_windows,
          [&](const tokens::TrajectoryWindow& w, std::uint64_t s) {
            return model::predict_trajectory(w, params, mcfg, stats, sched, s);
          },
          tcfg.seed);
      eval_curve << (step + 1) << "," << rep.ade << "\n";
    }
  }

  TrainResult result;
  result.params = std::move(params);
  result.stats = stats;
  result.loss_curve_csv = curve.str();
  result.eval_curve_csv = eval_curve.str();
  result.trained_steps = tcfg.steps;
  return result;
}

void save_model_checkpoint(const std::string& path, const model::ParamStore& params,
                           const model::ModelConfig& mcfg, const tokens::TokenStats& stats,
                           std::uint64_t seed, int trained_steps) {
  io::Checkpoint ckpt;
  ckpt.header["format"] = "trajdiff-checkpoint";
  ckpt.header["model"] = mcfg;
  ckpt.header["stats"] = io::stats_to_json(stats);
  ckpt.header["schedule"] = {{"T", mcfg.diffusion_steps}, {"S", mcfg.sampling_steps}};
  ckpt.header["seed"] = seed;
  ckpt.header["trained_steps"] = trained_steps;
  ckpt.params = params.items();
  io::save_checkpoint(path, ckpt);
}

LoadedModel load_model_checkpoint(const std::string& path) {
  const io::Checkpoint ckpt = io::load_checkpoint(path);
  LoadedModel m;
  m.config = ckpt.header.at("model").get<model::ModelConfig>();
  m.stats = io::stats_from_json(ckpt.header.at("stats"));
  m.seed = ckpt.header.value<std::uint64_t>("seed", 0);
  m.trained_steps = ckpt.header.value("trained_steps", 0);
  for (const auto& [name, mat] : ckpt.params) m.params.add(name, mat);
  return m;
}

double clip_global_norm(std::vector<Mat>& grads, double max_norm) {
  double sq = 0.0;
  for (const Mat& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (Mat& g : grads) g *= s;
  }
  return norm;
}

tokens::TrajectoryWindow trim_window(const tokens::TrajectoryWindow& w, int context_len,
                                     int horizon) {
  if (context_len < 1 || context_len > w.context_len || horizon < 1 || horizon > w.horizon)
    throw InvalidCounts("trim_window: requested C/H exceed the window");
  tokens::TrajectoryWindow out = w;
  out.context_len = context_len;
  out.horizon = horizon;
  out.context_poses.assign(w.context_poses.end() - context_len, w.context_poses.end());
  out.context_boxes = w.context_boxes.bottomRows(context_len);
  out.future_poses.assign(w.future_poses.begin(), w.future_poses.begin() + horizon);
  return out;
}

std::string ablation_sweep(std::span<const tokens::TrajectoryWindow> train_windows,
                           std::span<const tokens::TrajectoryWindow> eval_windows,
                           const model::ModelConfig& base_mcfg, const TrainConfig& base_tcfg,
                           std::span<const int> context_lens, std::span<const int> horizons) {
  std::ostringstream csv;
  csv.precision(10);
  csv << "c,h";
  for (const int he : horizons)
    csv << ",ade@" << he << ",fde@" << he << ",are@" << he << ",fre@" << he;
  csv << "\n";

  for (const int c : context_lens) {
    for (const int h : horizons) {
      std::vector<tokens::TrajectoryWindow> cell_train;
      cell_train.reserve(train_windows.size());
      for (const auto& w : train_windows) cell_train.push_back(trim_window(w, c, h));

      model::ModelConfig mcfg = base_mcfg;
      mcfg.context_len = c;
      mcfg.horizon = h;
      const TrainResult tr = train(cell_train, mcfg, base_tcfg);
      const diffusion::Schedule sched =
          diffusion::build_schedule(mcfg.diffusion_steps, mcfg.sampling_steps);

      // predict once per eval window at the trained horizon, crop per column
      std::vector<std::vector<se3::Pose>> preds;
      std::vector<tokens::TrajectoryWindow> trimmed;
      trimmed.reserve(eval_windows.size());
      for (const auto& w : eval_windows) trimmed.push_back(trim_window(w, c, h));
      preds.reserve(trimmed.size());
      for (const auto& w : trimmed)
        preds.push_back(model::predict_trajectory(w, tr.params, mcfg, tr.stats, sched,
                                                  rng_derive(base_tcfg.seed, w.clip_id)));

      csv << c << "," << h;
      for (const int he : horizons) {
        if (he > h) {
          csv << ",-,-,-,-";
          continue;
        }
        metrics::MetricReport rep;
        for (std::size_t i = 0; i < trimmed.size(); ++i) {
          const std::span<const se3::Pose> pred(preds[i].data(), static_cast<std::size_t>(he));
          const std::span<const se3::Pose> gt(trimmed[i].future_poses.data(),
                                              static_cast<std::size_t>(he));
          rep = metrics::combine(rep, metrics::evaluate(pred, gt));
        }
        csv << "," << rep.ade << "," << rep.fde << "," << rep.are << "," << rep.fre;
      }
      csv << "\n";
    }
  }
  return csv.str();
}

}  // namespace trajdiff::train
