#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "proptrain/adversary.hpp"
#include "proptrain/caselib.hpp"
#include "proptrain/difflogic.hpp"
#include "proptrain/evalmetrics.hpp"
#include "proptrain/ndiff.hpp"

namespace proptrain {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

enum class PredictionLoss { CrossEntropy, Mse };

struct TrainConfig {
  int epochs = 1;
  int batch_size = 64;
  // weight on the prediction term; the constraint term gets 1 - lambda.
  // lambda = 1 trains purely supervised.  GradNorm replaces the fixed
  // weighting entirely when enabled.
  double lambda = 1.0;
  bool use_gradnorm = false;
  double gradnorm_alpha = 1.5;
  double gradnorm_lr = 0.025;
  AdamWConfig optimizer{};
  PredictionLoss prediction_loss = PredictionLoss::Mse;
  LogicInterpretation logic{};
  AttackConfig attack{};
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("train: lambda must be in [0,1]");
    logic.validate();
    attack.validate();
  }
};

struct GradNormState {
  double w_pred = 1.0, w_con = 1.0;   // renormalised to sum 2
  double l0_pred = -1.0, l0_con = -1.0;  // initial task losses (< 0 = unset)
};

struct EpochStats {
  double loss_pred = 0.0, loss_con = 0.0;  // epoch means of the raw task losses
  double w_pred = 1.0, w_con = 0.0;        // weights in effect at epoch end
  double total_loss = 0.0;                 // w_pred*loss_pred + w_con*loss_con
  long adversary_calls = 0;
};

struct TrainState {
  AdamW optimizer;
  GradNormState gradnorm;
  int epoch = 0;
};

inline TrainState make_train_state(const Network& net, const TrainConfig& cfg) {
  TrainState st;
  st.optimizer = AdamW(net.parameter_count(), cfg.optimizer);
  return st;
}

// thrown when a batch produces a non-finite loss
struct TrainingNanError : std::runtime_error {
  TrainingNanError(const std::string& logic, int batch, long sample)
      : std::runtime_error("non-finite loss (logic " + logic + ", batch " + std::to_string(batch) +
                           ", sample " + std::to_string(sample) + ")"),
        logic_name(logic),
        batch_index(batch),
        sample_id(sample) {}
  std::string logic_name;
  int batch_index;
  long sample_id;
};

// ---------------------------------------------------------------------------
// GradNorm task weighting
// ---------------------------------------------------------------------------
//
// One inner gradient step on |G_i - mean(G) * r_i^alpha| where G_i is the
// norm of the weighted task gradient at the shared layer and r_i the relative
// inverse training rate.  Targets are treated as constants; weights stay
// positive and renormalise to sum 2.

inline GradNormState gradnorm_update(GradNormState st, double l_pred, double l_con, double g_pred,
                                     double g_con, double alpha, double inner_lr) {
  if (st.l0_pred < 0.0) st.l0_pred = l_pred;
  if (st.l0_con < 0.0) st.l0_con = l_con;
  double r_pred = st.l0_pred > 0.0 ? l_pred / st.l0_pred : 1.0;
  double r_con = st.l0_con > 0.0 ? l_con / st.l0_con : 1.0;
  double r_mean = 0.5 * (r_pred + r_con);
  double rel_pred = r_mean > 0.0 ? r_pred / r_mean : 1.0;
  double rel_con = r_mean > 0.0 ? r_con / r_mean : 1.0;
  double g_mean = 0.5 * (g_pred + g_con);
  double t_pred = g_mean * std::pow(rel_pred, alpha);
  double t_con = g_mean * std::pow(rel_con, alpha);
  // dG_i/dw_i is the unweighted gradient norm
  double n_pred = st.w_pred > 0.0 ? g_pred / st.w_pred : 0.0;
  double n_con = st.w_con > 0.0 ? g_con / st.w_con : 0.0;
  double d_pred = (g_pred > t_pred ? 1.0 : (g_pred < t_pred ? -1.0 : 0.0)) * n_pred;
  double d_con = (g_con > t_con ? 1.0 : (g_con < t_con ? -1.0 : 0.0)) * n_con;
  st.w_pred = std::max(1e-3, st.w_pred - inner_lr * d_pred);
  st.w_con = std::max(1e-3, st.w_con - inner_lr * d_con);
  double scale = 2.0 / (st.w_pred + st.w_con);
  st.w_pred *= scale;
  st.w_con *= scale;
  return st;
}

// ---------------------------------------------------------------------------
// one epoch of property-driven training
// ---------------------------------------------------------------------------

namespace detail {

// per-sample prediction loss and dL/d(output); the 1/batch factor is applied
// by the caller
inline double prediction_loss_row(PredictionLoss kind, std::span<const double> out, int label,
                                  std::span<const double> target, std::span<double> d_out) {
  const int n = int(out.size());
  if (kind == PredictionLoss::CrossEntropy) {
    double mx = out[0];
    for (double v : out) mx = std::max(mx, v);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += std::exp(out[std::size_t(j)] - mx);
    double lse = mx + std::log(sum);
    for (int j = 0; j < n; ++j) {
      double p = std::exp(out[std::size_t(j)] - mx) / sum;
      d_out[std::size_t(j)] = p - (j == label ? 1.0 : 0.0);
    }
    return lse - out[std::size_t(label)];
  }
  double loss = 0.0;
  for (int j = 0; j < n; ++j) {
    double d = out[std::size_t(j)] - target[std::size_t(j)];
    loss += d * d;
    d_out[std::size_t(j)] = 2.0 * d / n;
  }
  return loss / n;
}

}  // namespace detail

inline EpochStats train_epoch(Network& net, const LabeledDataset& data, const PropertyDef& property,
                              const TrainConfig& cfg, TrainState& st) {
  cfg.validate();
  validate_property(property, net.input_dim(), net.output_dim(),
                    data.classification ? 0 : data.targets.cols);
  const int n = data.size();
  const int m = net.input_dim();
  const int n_out = net.output_dim();
  const bool constraint_on = cfg.use_gradnorm || cfg.lambda < 1.0;
  const int epoch = st.epoch++;

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[std::size_t(i)] = i;
  Rng shuffle_rng = Rng::stream(cfg.seed, {0xE90C, std::uint64_t(epoch)});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

  FormulaPtr q_nnf = to_nnf(property.postcondition);
  const int shared_layer = std::max(0, net.layer_count() - 2);

  std::vector<double> g_pred(net.parameter_count()), g_con(net.parameter_count());
  std::vector<double> g_total(net.parameter_count());
  std::vector<double> d_row(static_cast<std::size_t>(n_out));
  Tape tape;

  EpochStats stats;
  double sum_pred = 0.0, sum_con = 0.0, sum_total = 0.0;
  int batches = 0;

  for (int base = 0; base < n; base += cfg.batch_size, ++batches) {
    const int bsz = std::min(cfg.batch_size, n - base);
    double w_pred = cfg.use_gradnorm ? st.gradnorm.w_pred : cfg.lambda;
    double w_con = cfg.use_gradnorm ? st.gradnorm.w_con : 1.0 - cfg.lambda;

    Matrix X(bsz, m);
    for (int r = 0; r < bsz; ++r) {
      int i = order[std::size_t(base + r)];
      std::copy(data.input(i).begin(), data.input(i).end(), X.row(r));
    }
    Network::Cache cache;
    net.forward(X, cache);

    // prediction task
    Matrix dY_pred(bsz, n_out);
    double l_pred = 0.0;
    long nan_sample = -1;
    for (int r = 0; r < bsz; ++r) {
      int i = order[std::size_t(base + r)];
      double li = detail::prediction_loss_row(cfg.prediction_loss, cache.out.row_span(r),
                                              data.classification ? data.labels[std::size_t(i)] : 0,
                                              data.target_row(i), d_row);
      if (!std::isfinite(li) && nan_sample < 0) nan_sample = i;
      l_pred += li;
      for (int j = 0; j < n_out; ++j) dY_pred.at(r, j) = d_row[std::size_t(j)] / bsz;
    }
    l_pred /= bsz;

    // constraint task: attack every non-vacuous sample in the batch
    double l_con = 0.0;
    Matrix dY_con_anchor(bsz, n_out);
    std::vector<BoxSet> regions;
    std::vector<int> rows_nv;
    if (constraint_on && w_con != 0.0) {
      regions.reserve(std::size_t(bsz));
      for (int r = 0; r < bsz; ++r) {
        int i = order[std::size_t(base + r)];
        BoxSet region = translate_precondition(property.precondition, data.domain, data.input(i));
        if (!region.is_empty()) rows_nv.push_back(r);
        regions.push_back(std::move(region));
      }
    }
    const int nv = int(rows_nv.size());
    Matrix X_adv(nv, m), dY_con_adv(nv, n_out);
    if (nv > 0) {
      std::vector<BoxSet> att_regions;
      att_regions.reserve(std::size_t(nv));
      Matrix anchors(nv, m);
      Matrix targets(data.classification ? 0 : nv, data.classification ? 0 : data.targets.cols);
      std::vector<std::uint64_t> ids(static_cast<std::size_t>(nv));
      for (int k = 0; k < nv; ++k) {
        int r = rows_nv[std::size_t(k)];
        int i = order[std::size_t(base + r)];
        att_regions.push_back(regions[std::size_t(r)]);
        ids[std::size_t(k)] = std::uint64_t(epoch) * std::uint64_t(n) + std::uint64_t(i);
        std::copy(data.input(i).begin(), data.input(i).end(), anchors.row(k));
        if (!data.classification)
          std::copy(data.target_row(i).begin(), data.target_row(i).end(), targets.row(k));
      }
      auto attacks = pgd_attack_batch(net, att_regions, *q_nnf, cfg.logic, anchors, targets,
                                      cfg.attack, ids);
      stats.adversary_calls += nv;

      for (int k = 0; k < nv; ++k)
        std::copy(attacks[std::size_t(k)].x_adv.begin(), attacks[std::size_t(k)].x_adv.end(),
                  X_adv.row(k));
      Network::Cache cache_adv;
      net.forward(X_adv, cache_adv);

      for (int k = 0; k < nv; ++k) {
        int r = rows_nv[std::size_t(k)];
        int i = order[std::size_t(base + r)];
        ConstraintGrad g = constraint_loss_grad(
            *q_nnf, cfg.logic, data.input(i), X_adv.row_span(k), data.target_row(i),
            cache_adv.out.row_span(k), cache.out.row_span(r), tape);
        if (!std::isfinite(g.loss) && nan_sample < 0) nan_sample = i;
        l_con += g.loss;
        for (int j = 0; j < n_out; ++j) {
          dY_con_adv.at(k, j) = g.d_output[std::size_t(j)] / nv;
          dY_con_anchor.at(r, j) = g.d_anchor_output[std::size_t(j)] / nv;
        }
      }
      l_con /= nv;

      std::fill(g_con.begin(), g_con.end(), 0.0);
      net.backward_params(cache_adv, dY_con_adv, g_con);
      net.backward_params(cache, dY_con_anchor, g_con);
    } else {
      std::fill(g_con.begin(), g_con.end(), 0.0);
    }

    std::fill(g_pred.begin(), g_pred.end(), 0.0);
    net.backward_params(cache, dY_pred, g_pred);

    double total = w_pred * l_pred + w_con * l_con;
    if (!std::isfinite(total))
      throw TrainingNanError(cfg.logic.name(), batches, nan_sample);

    for (std::size_t i = 0; i < g_total.size(); ++i)
      g_total[i] = w_pred * g_pred[i] + w_con * g_con[i];
    st.optimizer.step(net.parameters(), g_total);

    if (cfg.use_gradnorm) {
      auto slice_norm = [&](const std::vector<double>& g, double w) {
        std::size_t off = net.weight_offset(shared_layer);
        std::size_t len = std::size_t(net.layer_rows(shared_layer)) * net.layer_cols(shared_layer);
        double s = 0.0;
        for (std::size_t i = off; i < off + len; ++i) s += g[i] * g[i];
        return w * std::sqrt(s);
      };
      st.gradnorm = gradnorm_update(st.gradnorm, l_pred, l_con, slice_norm(g_pred, w_pred),
                                    slice_norm(g_con, w_con), cfg.gradnorm_alpha, cfg.gradnorm_lr);
    }

    sum_pred += l_pred * bsz;
    sum_con += l_con * bsz;
    sum_total += total * bsz;
  }

  stats.loss_pred = sum_pred / n;
  stats.loss_con = sum_con / n;
  stats.total_loss = sum_total / n;
  stats.w_pred = cfg.use_gradnorm ? st.gradnorm.w_pred : cfg.lambda;
  stats.w_con = cfg.use_gradnorm ? st.gradnorm.w_con : 1.0 - cfg.lambda;
  return stats;
}

}  // namespace proptrain
