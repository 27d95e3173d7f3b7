#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "proptrain/adversary.hpp"
#include "proptrain/caselib.hpp"
#include "proptrain/difflogic.hpp"
#include "proptrain/parallel.hpp"
#include "proptrain/regions.hpp"

namespace proptrain {

// ---------------------------------------------------------------------------
// test-set metrics
// ---------------------------------------------------------------------------
//
// Prediction quality (accuracy or RMSE) plus two constraint metrics, both
// checked with the crisp Boolean interpretation: satisfaction at one fresh
// random point of the region (CAcc) and at the attack's worst point (CSec).
// Samples whose region is empty count as satisfied and skip the adversary.

struct MetricsRecord {
  int epoch = 0;
  double p_metric = 0.0;  // prediction accuracy in [0,1], or RMSE
  bool classification = true;
  double cacc = 0.0;
  double csec = 0.0;
  double loss_pred = 0.0;  // filled by the trainer when available
  double loss_con = 0.0;
  long adversary_calls = 0;
};

// lowest index wins ties
inline int argmax_class(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax_class: empty vector");
  int best = 0;
  for (int i = 1; i < int(v.size()); ++i)
    if (v[std::size_t(i)] > v[std::size_t(best)]) best = i;
  return best;
}

struct EvalOptions {
  int cacc_samples = 1;  // fresh random points per test sample
  // Attacks for CSec always maximise this objective so numbers stay
  // comparable across training logics.  The robustness margin keeps a usable
  // ascent direction even deep inside the satisfied region, where one-sided
  // penalties like the dl2 loss go flat.
  LogicInterpretation attack_logic{.kind = LogicKind::Stl};
  int attack_chunk = 128;  // samples per batched attack
};

inline MetricsRecord evaluate(const Network& net, const LabeledDataset& testset,
                              const PropertyDef& property, const AttackConfig& attack_cfg,
                              std::uint64_t seed, const EvalOptions& opts = {}) {
  const int n = testset.size();
  if (n == 0) throw std::invalid_argument("evaluate: empty test set");
  validate_property(property, net.input_dim(), net.output_dim(),
                    testset.classification ? 0 : testset.targets.cols);

  MetricsRecord rec;
  rec.classification = testset.classification;

  // prediction metric on the clean inputs
  Matrix outputs = net.forward(testset.inputs);
  if (testset.classification) {
    int correct = 0;
    for (int i = 0; i < n; ++i)
      if (argmax_class(outputs.row_span(i)) == testset.labels[std::size_t(i)]) ++correct;
    rec.p_metric = double(correct) / n;
  } else {
    double sq = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < outputs.cols; ++j) {
        double d = outputs.at(i, j) - testset.targets.at(i, j);
        sq += d * d;
      }
    rec.p_metric = std::sqrt(sq / (double(n) * outputs.cols));
  }

  FormulaPtr q_nnf = to_nnf(property.postcondition);

  // per-sample regions; built once and reused by both constraint metrics
  std::vector<BoxSet> regions;
  regions.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i)
    regions.push_back(translate_precondition(property.precondition, testset.domain, testset.input(i)));

  // constraint accuracy at fresh random points
  std::vector<double> sat(std::size_t(n), 1.0);
  parallel_for(std::size_t(n), [&](std::size_t i) {
    const BoxSet& region = regions[i];
    if (region.is_empty()) return;  // vacuous: stays satisfied
    const BoxSet* sample_from = &region;
    BoxSet flat{Box{}};
    if (region.size() > 1 && region.dim() <= 6) {
      flat = disjointify(region);  // unbiased volume weights for small m
      sample_from = &flat;
    }
    double hits = 0.0;
    for (int k = 0; k < opts.cacc_samples; ++k) {
      Rng rng = Rng::stream(seed, {0xCACC, std::uint64_t(i), std::uint64_t(k)});
      std::vector<double> x_rnd = sample_uniform(*sample_from, rng);
      Environment env(testset.input(int(i)), x_rnd, testset.target_row(int(i)), &net);
      if (eval_bool(*property.postcondition, env)) hits += 1.0;
    }
    sat[i] = hits / opts.cacc_samples;
  });
  double cacc = 0.0;
  for (double s : sat) cacc += s;
  rec.cacc = cacc / n;

  // constraint security at attacked points
  std::vector<int> attacked;
  for (int i = 0; i < n; ++i)
    if (!regions[std::size_t(i)].is_empty()) attacked.push_back(i);
  rec.adversary_calls = long(attacked.size());

  std::vector<char> secure(std::size_t(n), 1);
  AttackConfig cfg = attack_cfg;
  cfg.seed = Rng::stream(seed, {0xC5EC}).next_u64();
  for (std::size_t base = 0; base < attacked.size(); base += std::size_t(opts.attack_chunk)) {
    std::size_t count = std::min(std::size_t(opts.attack_chunk), attacked.size() - base);
    std::vector<BoxSet> chunk_regions;
    std::vector<std::uint64_t> ids(count);
    Matrix anchors(int(count), net.input_dim());
    Matrix targets(testset.classification ? 0 : int(count),
                   testset.classification ? 0 : testset.targets.cols);
    chunk_regions.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
      int i = attacked[base + k];
      chunk_regions.push_back(regions[std::size_t(i)]);
      ids[k] = std::uint64_t(i);
      std::copy(testset.input(i).begin(), testset.input(i).end(), anchors.row(int(k)));
      if (!testset.classification)
        std::copy(testset.target_row(i).begin(), testset.target_row(i).end(), targets.row(int(k)));
    }
    auto results =
        pgd_attack_batch(net, chunk_regions, *q_nnf, opts.attack_logic, anchors, targets, cfg, ids);
    for (std::size_t k = 0; k < count; ++k) {
      int i = attacked[base + k];
      Environment env(testset.input(i), results[k].x_adv, testset.target_row(i), &net);
      secure[std::size_t(i)] = eval_bool(*property.postcondition, env) ? 1 : 0;
    }
  }
  double csec = 0.0;
  for (char s : secure) csec += s;
  rec.csec = csec / n;
  return rec;
}

}  // namespace proptrain
