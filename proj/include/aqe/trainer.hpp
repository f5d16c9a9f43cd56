#pragma once

// Mini-batch training with Adam.

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "aqe/common.hpp"
#include "aqe/dataset.hpp"
#include "aqe/evaluation.hpp"
#include "aqe/neuralnet.hpp"

namespace aqe {

struct TrainConfig {
  std::size_t epochs = 2;
  std::size_t batch_size = 64;
  double lr = 0.001;
  std::uint64_t shuffle_seed = 1;
  std::uint64_t init_seed = 1;
  std::string checkpoint_path;  // empty: no checkpoints
  bool deterministic = true;
  unsigned threads = 1;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  }
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean batch MSLE per epoch
  std::size_t steps = 0;
  std::size_t skipped_batches = 0;
  std::array<std::optional<ErrorStats>, 2> eval;
  double wall_seconds = 0;
  std::uint64_t shuffle_seed = 0;
  std::uint64_t init_seed = 0;
  std::vector<std::string> checkpoints;
};

struct TrainResult {
  Model model;
  TrainReport report;
};

inline std::string checkpoint_name(const std::string& base, std::size_t epoch) {
  return base + ".epoch" + std::to_string(epoch);
}

/// Points per gradient chunk. Chunks are summed in order, so the result does
/// not depend on the thread count.
inline constexpr std::size_t kGradientChunk = 8;

namespace detail {

inline void add_into(Gradients& acc, const Gradients& g) {
  for (std::size_t b = 0; b < ModelWeights::kCount; ++b) {
    auto& a = acc.blocks[b].values;
    const auto& v = g.blocks[b].values;
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += v[i];
  }
}

}  // namespace detail

/// One optimizer step on a batch of normalized inputs. Returns nullopt when
/// the batch has no supervised pair (no step is taken).
inline std::optional<double> train_step(Model& model, AdamState& adam, const std::vector<NormalizedInput>& xs,
                                        const std::vector<Target>& ts, unsigned threads) {
  std::size_t supervised = 0;
  for (const auto& t : ts) supervised += t.mask[0] + t.mask[1];
  if (supervised == 0) return std::nullopt;

  const auto& c = model.config;
  const std::size_t n = xs.size();
  const std::size_t chunks = (n + kGradientChunk - 1) / kGradientChunk;
  std::vector<PointCache> caches(n);
  std::vector<Concentrations> pred(n);
  parallel_for(n, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) pred[i] = forward_point(model.weights, c, xs[i], caches[i]);
  });
  const auto loss = msle_loss(pred, ts);
  if (!std::isfinite(loss.loss)) throw NumericalError("training loss is not finite");

  std::vector<Gradients> partial(chunks);
  parallel_for(chunks, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t k = b; k < e; ++k) {
      partial[k] = model.weights;
      partial[k].set_zero();
      const std::size_t lo = k * kGradientChunk, hi = std::min(n, lo + kGradientChunk);
      for (std::size_t i = lo; i < hi; ++i) backward_point(model.weights, c, xs[i], caches[i], loss.grad[i], partial[k]);
    }
  });
  for (std::size_t k = 1; k < chunks; ++k) detail::add_into(partial[0], partial[k]);
  adam_step(model.weights, partial[0], adam);
  return loss.loss;
}

/// Fits normalization on `train_points`, trains for cfg.epochs and reports
/// metrics on `eval_points`. On a non-finite loss the last checkpoint (if
/// any) is named in the NumericalError.
inline TrainResult train(ModelConfig mc, const std::vector<DataPoint>& train_points,
                         const std::vector<DataPoint>& eval_points, const TrainConfig& cfg) {
  cfg.validate();
  if (train_points.empty()) throw DataError("training set is empty");
  const auto start = std::chrono::steady_clock::now();
  const unsigned threads = cfg.deterministic ? 1 : std::max(1u, cfg.threads);

  std::vector<DataPoint> local;
  const std::vector<DataPoint>* tp = &train_points;
  if (train_points.front().features.variant != mc.variant) {
    local = select_variant(train_points, mc.variant);
    tp = &local;
  }

  TrainResult res;
  res.model.config = mc;
  res.model.config.seed = cfg.init_seed;
  res.model.config.validate();
  res.model.norm = fit_normalization(*tp);
  res.model.weights = init_weights(res.model.config, cfg.init_seed);
  AdamState adam(res.model.weights, AdamConfig{cfg.lr});
  res.report.shuffle_seed = cfg.shuffle_seed;
  res.report.init_seed = cfg.init_seed;

  Rng rng(cfg.shuffle_seed);
  std::vector<std::size_t> order(tp->size());
  std::string last_checkpoint;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    double sum = 0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      std::vector<NormalizedInput> xs(hi - lo);
      std::vector<Target> ts(hi - lo);
      parallel_for(hi - lo, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          const auto& p = (*tp)[order[lo + i]];
          xs[i] = normalize(res.model.norm, p.features);
          ts[i] = p.target;
        }
      });
      std::optional<double> loss;
      try {
        loss = train_step(res.model, adam, xs, ts, threads);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) +
                             (last_checkpoint.empty() ? "" : "; last good checkpoint " + last_checkpoint));
      }
      if (!loss) {
        ++res.report.skipped_batches;
        continue;
      }
      sum += *loss;
      ++batches;
      ++res.report.steps;
    }
    const double mean = batches ? sum / static_cast<double>(batches) : 0.0;
    res.report.epoch_loss.push_back(mean);
    log_info("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.epochs) + " train msle " +
             fmt_metric(mean));
    if (!cfg.checkpoint_path.empty()) {
      last_checkpoint = checkpoint_name(cfg.checkpoint_path, epoch + 1);
      save_model(res.model, last_checkpoint);
      res.report.checkpoints.push_back(last_checkpoint);
    }
  }
  if (!eval_points.empty()) {
    res.report.eval = compute_metrics(model_predictions(res.model, eval_points, threads), targets_of(eval_points));
  }
  res.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

/// Key/value text form of a report; wall time is last so reports can be
/// compared with it stripped.
inline std::string report_text(const TrainReport& r) {
  std::string s;
  s += "shuffle_seed=" + std::to_string(r.shuffle_seed) + "\n";
  s += "init_seed=" + std::to_string(r.init_seed) + "\n";
  s += "steps=" + std::to_string(r.steps) + "\n";
  s += "skipped_batches=" + std::to_string(r.skipped_batches) + "\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    s += "epoch" + std::to_string(e + 1) + "_msle=" + kv::fmt(r.epoch_loss[e]) + "\n";
  }
  for (const auto p : kPollutants) {
    const auto& st = r.eval[index_of(p)];
    if (!st) continue;
    const std::string name(to_string(p));
    s += "eval_" + name + "_msle=" + kv::fmt(st->msle) + "\n";
    s += "eval_" + name + "_mae=" + kv::fmt(st->mae) + "\n";
    s += "eval_" + name + "_n=" + std::to_string(st->n) + "\n";
  }
  s += "wall_seconds=" + kv::fmt(r.wall_seconds) + "\n";
  return s;
}

}  // namespace aqe
