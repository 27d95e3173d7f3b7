#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "proptrain/difflogic.hpp"
#include "proptrain/parallel.hpp"
#include "proptrain/regions.hpp"
#include "proptrain/rng.hpp"

namespace proptrain {

// ---------------------------------------------------------------------------
// projected gradient ascent over box sets
// ---------------------------------------------------------------------------
//
// Solves max_{x' in region} loss(Q) by sign-gradient ascent with momentum,
// per-dimension steps scaled by the extent of the restart's box, projection
// back onto the region after every step, and step halving at fixed fractions
// of the budget whenever the best value stopped improving.

struct AttackConfig {
  int iterations = 20;
  int restarts = 10;
  double initial_step = 0.1;  // fraction of box extent per dimension
  double momentum = 0.75;
  std::vector<double> halving_checkpoints{0.22, 0.45, 0.67, 0.85};
  std::uint64_t seed = 0;

  void validate() const {
    if (iterations < 1) throw std::invalid_argument("attack: iterations must be >= 1");
    if (restarts < 1) throw std::invalid_argument("attack: restarts must be >= 1");
    if (initial_step <= 0.0) throw std::invalid_argument("attack: initial_step must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("attack: momentum in [0,1)");
  }
};

struct AttackResult {
  std::vector<double> x_adv;
  double loss = 0.0;
};

struct AttackTelemetry {
  Matrix restart_best;  // per (sample, restart) best loss
  bool record_iterates = false;
  std::vector<std::vector<double>> iterates;  // every evaluated point (test instrumentation)
};

// One attack per sample; rows of all samples and restarts run as one batch so
// the network evaluations become large matrix products.  Rows never interact,
// so results are identical for any thread count.
inline std::vector<AttackResult> pgd_attack_batch(const Network& net,
                                                  std::span<const BoxSet> regions,
                                                  const Formula& q_nnf,
                                                  const LogicInterpretation& logic,
                                                  const Matrix& anchors, const Matrix& targets,
                                                  const AttackConfig& cfg,
                                                  std::span<const std::uint64_t> sample_ids,
                                                  AttackTelemetry* telemetry = nullptr) {
  cfg.validate();
  const int S = int(regions.size());
  if (anchors.rows != S || (targets.rows != S && targets.rows != 0))
    throw std::invalid_argument("pgd_attack_batch: row count mismatch");
  const int m = net.input_dim();
  const int n = net.output_dim();
  const int R = cfg.restarts;
  const int N = S * R;
  for (const BoxSet& s : regions) {
    if (s.is_empty()) throw std::logic_error("pgd_attack: region is empty (filter vacuous samples first)");
    if (s.dim() != m) throw std::invalid_argument("pgd_attack: region dimension mismatch");
  }

  // f(anchor) once per sample
  Matrix anchor_out = net.forward(anchors);

  Matrix X(N, m), extent(N, m), mom(N, m), best_x(N, m), d_direct(N, m), dX(N, m), dY(N, n);
  std::vector<double> best(std::size_t(N), -std::numeric_limits<double>::infinity());
  std::vector<double> best_at_ckpt(std::size_t(N), -std::numeric_limits<double>::infinity());
  std::vector<double> rel_step(std::size_t(N), 1.0);

  for (int s = 0; s < S; ++s) {
    for (int r = 0; r < R; ++r) {
      const int row = s * R + r;
      Rng rng = Rng::stream(cfg.seed, {sample_ids[std::size_t(s)], std::uint64_t(r)});
      std::size_t box_idx;
      if (r == 0) {
        project_into(regions[s], anchors.row_span(s), X.row_span(row));
        box_idx = nearest_box(regions[s], anchors.row_span(s));
      } else {
        box_idx = sample_box_index(regions[s], rng);
        std::vector<double> p = sample_in_box(regions[s].box(box_idx), rng);
        std::copy(p.begin(), p.end(), X.row(row));
      }
      const Box& b = regions[s].box(box_idx);
      for (int i = 0; i < m; ++i) extent.at(row, i) = b.hi[std::size_t(i)] - b.lo[std::size_t(i)];
    }
  }

  // checkpoint iterations (strictly inside the budget, deduplicated)
  std::vector<int> ckpts;
  for (double f : cfg.halving_checkpoints) {
    int it = int(std::ceil(f * cfg.iterations));
    if (it > 0 && it < cfg.iterations && (ckpts.empty() || ckpts.back() != it)) ckpts.push_back(it);
  }

  const unsigned workers = worker_count();
  std::vector<Tape> tapes(workers);
  std::vector<Matrix> scratches(workers);
  std::vector<ConstraintGrad> grads(workers);
  Network::Cache cache;
  std::span<const double> no_target;

  net.forward_rows(X, cache, 0, 0, /*prepare=*/true);  // shape the cache, pack weights once

  // One-sided and saturating losses go flat away from their active region
  // (the dl2 hinge is zero wherever the atom is satisfied); rows without a
  // usable gradient steer by the robustness margin instead, while the best
  // iterate is always scored by the configured logic.
  LogicInterpretation margin_logic;
  margin_logic.kind = LogicKind::Stl;

  auto eval_rows = [&](bool with_grad) {
    parallel_blocks(std::size_t(N), [&](std::size_t b, std::size_t e, std::size_t worker) {
      net.forward_rows(X, cache, int(b), int(e), /*prepare=*/false);
      Tape& tape = tapes[worker];
      ConstraintGrad& g = grads[worker];
      for (std::size_t row = b; row < e; ++row) {
        const int s = int(row) / R;
        std::span<const double> target =
            targets.rows ? targets.row_span(s) : no_target;
        constraint_loss_grad_into(q_nnf, logic, anchors.row_span(s), X.row_span(int(row)), target,
                                  cache.out.row_span(int(row)), anchor_out.row_span(s), tape, g);
        if (g.loss > best[row]) {
          best[row] = g.loss;
          std::copy(X.row(int(row)), X.row(int(row)) + m, best_x.row(int(row)));
        }
        if (with_grad) {
          bool flat = true;
          for (double v : g.d_output)
            if (v != 0.0) flat = false;
          for (double v : g.d_candidate)
            if (v != 0.0) flat = false;
          if (flat && logic.kind != LogicKind::Stl)
            constraint_loss_grad_into(q_nnf, margin_logic, anchors.row_span(s),
                                      X.row_span(int(row)), target, cache.out.row_span(int(row)),
                                      anchor_out.row_span(s), tape, g);
          std::copy(g.d_output.begin(), g.d_output.end(), dY.row(int(row)));
          std::copy(g.d_candidate.begin(), g.d_candidate.end(), d_direct.row(int(row)));
        }
      }
    });
    if (telemetry && telemetry->record_iterates)
      for (int row = 0; row < N; ++row)
        telemetry->iterates.emplace_back(X.row(row), X.row(row) + m);
  };

  for (int it = 0; it < cfg.iterations; ++it) {
    eval_rows(/*with_grad=*/true);

    for (int c : ckpts) {
      if (c != it) continue;
      for (int row = 0; row < N; ++row) {
        if (best[std::size_t(row)] <= best_at_ckpt[std::size_t(row)]) rel_step[std::size_t(row)] *= 0.5;
        best_at_ckpt[std::size_t(row)] = best[std::size_t(row)];
      }
    }

    parallel_blocks(std::size_t(N), [&](std::size_t b, std::size_t e, std::size_t worker) {
      net.backward_input_rows(cache, dY, dX, int(b), int(e), scratches[worker]);
      std::vector<double> step(static_cast<std::size_t>(m));
      for (std::size_t row = b; row < e; ++row) {
        const int s = int(row) / R;
        double* x = X.row(int(row));
        double* mo = mom.row(int(row));
        const double* gx = dX.row(int(row));
        const double* gd = d_direct.row(int(row));
        const double* ex = extent.row(int(row));
        const double eta = rel_step[row] * cfg.initial_step;
        for (int i = 0; i < m; ++i) {
          double g = gx[i] + gd[i];
          double sgn = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
          mo[i] = cfg.momentum * mo[i] + (1.0 - cfg.momentum) * sgn;
          step[std::size_t(i)] = x[i] + eta * ex[i] * mo[i];
        }
        project_into(regions[s], step, X.row_span(int(row)));
      }
    });
  }
  eval_rows(/*with_grad=*/false);  // score the final iterate

  std::vector<AttackResult> results(static_cast<std::size_t>(S));
  if (telemetry) telemetry->restart_best.ensure(S, R);
  for (int s = 0; s < S; ++s) {
    int best_row = s * R;
    for (int r = 0; r < R; ++r) {
      const int row = s * R + r;
      if (telemetry) telemetry->restart_best.at(s, r) = best[std::size_t(row)];
      if (best[std::size_t(row)] > best[std::size_t(best_row)]) best_row = row;
    }
    results[std::size_t(s)].loss = best[std::size_t(best_row)];
    results[std::size_t(s)].x_adv.assign(best_x.row(best_row), best_x.row(best_row) + m);
  }
  return results;
}

inline AttackResult pgd_attack(const Network& net, const BoxSet& region, const Formula& q,
                               const LogicInterpretation& logic, std::span<const double> anchor,
                               std::span<const double> target, const AttackConfig& cfg,
                               std::uint64_t sample_id = 0, AttackTelemetry* telemetry = nullptr) {
  FormulaPtr q_nnf = to_nnf(std::make_shared<Formula>(q));
  Matrix anchors(1, int(anchor.size()));
  std::copy(anchor.begin(), anchor.end(), anchors.row(0));
  Matrix targets(target.empty() ? 0 : 1, int(target.size()));
  if (!target.empty()) std::copy(target.begin(), target.end(), targets.row(0));
  const BoxSet regions[1] = {region};
  const std::uint64_t ids[1] = {sample_id};
  auto res = pgd_attack_batch(net, regions, *q_nnf, logic, anchors, targets, cfg, ids, telemetry);
  return res[0];
}

inline AttackResult pgd_attack(const Network& net, const BoxSet& region, const FormulaPtr& q,
                               const LogicInterpretation& logic, std::span<const double> anchor,
                               std::span<const double> target, const AttackConfig& cfg,
                               std::uint64_t sample_id = 0, AttackTelemetry* telemetry = nullptr) {
  return pgd_attack(net, region, *q, logic, anchor, target, cfg, sample_id, telemetry);
}

}  // namespace proptrain
