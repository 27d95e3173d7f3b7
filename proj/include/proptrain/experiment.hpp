#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "proptrain/caselib.hpp"
#include "proptrain/evalmetrics.hpp"
#include "proptrain/trainer.hpp"

namespace proptrain {

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string case_study;  // mnist | alsomitra | toy
  std::uint64_t seed = 1;
  std::string out_dir = "run-out";

  // data (per case study; unused fields ignored)
  std::string mnist_images, mnist_labels, mnist_test_images, mnist_test_labels;
  int train_subset = 0, test_subset = 0;  // 0 = use everything
  int alsomitra_train_n = 4000, alsomitra_test_n = 500;
  std::string alsomitra_csv, alsomitra_export_csv;
  int toy_n = 64, toy_test_n = 64;

  // property
  std::string property_name;  // std_robustness | phi1..phi4 | toy_bound | custom
  double eps = 0.3, delta = 0.05, lipschitz = 0.3;
  bool movingfast_literal = false;
  std::string custom_precondition, custom_postcondition;

  // logic
  std::string logic_name = "dl2";
  std::map<std::string, double> logic_params;
  bool dl2_table_literal = false;

  TrainConfig train;
  std::vector<int> arch;  // full layer sizes; empty = case-study default

  // evaluation
  int cacc_samples = 1;
  std::optional<AttackConfig> eval_attack;  // defaults to the training attack
};

namespace detail {

inline std::string env_data_root() {
  if (const char* s = std::getenv("PROPTRAIN_DATA_ROOT")) return s;
  return {};
}

inline std::string resolve_data_path(const std::string& path) {
  std::string root = env_data_root();
  if (root.empty() || path.empty()) return path;
  std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(root) / p).string();
}

inline AttackConfig parse_attack(const nlohmann::json& j) {
  AttackConfig a;
  a.iterations = j.value("iterations", a.iterations);
  a.restarts = j.value("restarts", a.restarts);
  a.initial_step = j.value("initial_step", a.initial_step);
  a.momentum = j.value("momentum", a.momentum);
  if (j.contains("halving_checkpoints"))
    a.halving_checkpoints = j.at("halving_checkpoints").get<std::vector<double>>();
  return a;
}

}  // namespace detail

inline RunConfig parse_run_config_json(const nlohmann::json& j) {
  RunConfig cfg;
  try {
    if (j.value("version", 1) != 1) throw ConfigError("unsupported config version");
    cfg.case_study = j.at("case_study").get<std::string>();
    if (cfg.case_study != "mnist" && cfg.case_study != "alsomitra" && cfg.case_study != "toy")
      throw ConfigError("case_study must be mnist, alsomitra or toy");
    cfg.seed = j.value("seed", std::uint64_t(1));
    cfg.out_dir = j.value("out_dir", std::string("run-out"));

    if (j.contains("data")) {
      const auto& d = j.at("data");
      cfg.mnist_images = d.value("images", std::string());
      cfg.mnist_labels = d.value("labels", std::string());
      cfg.mnist_test_images = d.value("test_images", std::string());
      cfg.mnist_test_labels = d.value("test_labels", std::string());
      cfg.train_subset = d.value("train_subset", 0);
      cfg.test_subset = d.value("test_subset", 0);
      cfg.alsomitra_train_n = d.value("train_n", cfg.alsomitra_train_n);
      cfg.alsomitra_test_n = d.value("test_n", cfg.alsomitra_test_n);
      cfg.alsomitra_csv = d.value("csv", std::string());
      cfg.alsomitra_export_csv = d.value("export_csv", std::string());
      cfg.toy_n = d.value("n", cfg.toy_n);
      cfg.toy_test_n = d.value("test_n", cfg.toy_test_n);
    }

    const auto& p = j.at("property");
    cfg.property_name = p.at("name").get<std::string>();
    cfg.eps = p.value("eps", cfg.eps);
    cfg.delta = p.value("delta", cfg.delta);
    cfg.lipschitz = p.value("lipschitz", cfg.lipschitz);
    cfg.movingfast_literal = p.value("movingfast_literal", false);
    cfg.custom_precondition = p.value("precondition", std::string());
    cfg.custom_postcondition = p.value("postcondition", std::string());

    if (j.contains("logic")) {
      const auto& l = j.at("logic");
      cfg.logic_name = l.value("name", cfg.logic_name);
      for (const char* key : {"yager_p", "stl_nu", "dl2_xi", "fuzzy_margin"})
        if (l.contains(key)) cfg.logic_params[key] = l.at(key).get<double>();
      cfg.dl2_table_literal = l.value("dl2_table_literal", false);
    }

    const auto& t = j.at("train");
    cfg.train.epochs = t.at("epochs").get<int>();
    cfg.train.batch_size = t.value("batch_size", 64);
    if (t.contains("lambda")) {
      if (t.at("lambda").is_string()) {
        if (t.at("lambda").get<std::string>() != "gradnorm")
          throw ConfigError("train.lambda must be a number in [0,1] or \"gradnorm\"");
        cfg.train.use_gradnorm = true;
      } else {
        cfg.train.lambda = t.at("lambda").get<double>();
      }
    }
    cfg.train.gradnorm_alpha = t.value("gradnorm_alpha", cfg.train.gradnorm_alpha);
    cfg.train.gradnorm_lr = t.value("gradnorm_lr", cfg.train.gradnorm_lr);
    cfg.train.optimizer.lr = t.value("lr", cfg.train.optimizer.lr);
    cfg.train.optimizer.weight_decay = t.value("weight_decay", cfg.train.optimizer.weight_decay);
    std::string loss = t.value("loss", std::string(cfg.case_study == "mnist" ? "cross_entropy" : "mse"));
    if (loss == "cross_entropy") cfg.train.prediction_loss = PredictionLoss::CrossEntropy;
    else if (loss == "mse") cfg.train.prediction_loss = PredictionLoss::Mse;
    else throw ConfigError("train.loss must be cross_entropy or mse");
    if (t.contains("arch")) cfg.arch = t.at("arch").get<std::vector<int>>();

    if (j.contains("attack")) cfg.train.attack = detail::parse_attack(j.at("attack"));

    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      cfg.cacc_samples = e.value("cacc_samples", 1);
      if (e.contains("attack")) cfg.eval_attack = detail::parse_attack(e.at("attack"));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& ex) {
    throw ConfigError(std::string("invalid run config: ") + ex.what());
  }
  return cfg;
}

inline RunConfig parse_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& ex) {
    throw ConfigError(std::string("config is not valid JSON: ") + ex.what());
  }
  return parse_run_config_json(j);
}

// ---------------------------------------------------------------------------
// experiment runner
// ---------------------------------------------------------------------------

struct RunArtifacts {
  MetricsRecord selected;     // metrics of the selected epoch
  int selected_epoch = 0;     // 1-based
  std::string csv_path, summary_path, checkpoint_path;
};

namespace detail {

struct CaseSetup {
  LabeledDataset train, test;
  PropertyDef property;
  std::vector<int> arch;
};

inline CaseSetup load_case(const RunConfig& cfg) {
  CaseSetup s;
  if (cfg.case_study == "mnist") {
    s.train = load_mnist_idx(resolve_data_path(cfg.mnist_images), resolve_data_path(cfg.mnist_labels),
                             cfg.train_subset, cfg.seed);
    s.test = load_mnist_idx(resolve_data_path(cfg.mnist_test_images),
                            resolve_data_path(cfg.mnist_test_labels), cfg.test_subset,
                            Rng::stream(cfg.seed, {0x7E57}).next_u64());
    s.arch = {s.train.inputs.cols, 256, 128, s.train.num_classes};
  } else if (cfg.case_study == "alsomitra") {
    if (!cfg.alsomitra_csv.empty()) {
      LabeledDataset all = load_alsomitra_csv(resolve_data_path(cfg.alsomitra_csv));
      int n_test = std::min(cfg.alsomitra_test_n, all.size() / 5);
      int n_train = all.size() - n_test;
      s.train.classification = s.test.classification = false;
      s.train.domain = s.test.domain = all.domain;
      s.train.inputs = Matrix(n_train, 6);
      s.train.targets = Matrix(n_train, 1);
      s.test.inputs = Matrix(n_test, 6);
      s.test.targets = Matrix(n_test, 1);
      for (int i = 0; i < n_train; ++i) {
        std::copy(all.input(i).begin(), all.input(i).end(), s.train.inputs.row(i));
        s.train.targets.at(i, 0) = all.targets.at(i, 0);
      }
      for (int i = 0; i < n_test; ++i) {
        std::copy(all.input(n_train + i).begin(), all.input(n_train + i).end(), s.test.inputs.row(i));
        s.test.targets.at(i, 0) = all.targets.at(n_train + i, 0);
      }
    } else {
      s.train = gen_alsomitra(cfg.alsomitra_train_n, cfg.seed);
      s.test = gen_alsomitra(cfg.alsomitra_test_n, Rng::stream(cfg.seed, {0x7E57}).next_u64());
    }
    if (!cfg.alsomitra_export_csv.empty()) save_alsomitra_csv(s.train, cfg.alsomitra_export_csv);
    s.arch = {6, 64, 32, 1};
  } else {
    s.train = gen_toy(cfg.toy_n, cfg.seed);
    s.test = gen_toy(cfg.toy_test_n, Rng::stream(cfg.seed, {0x7E57}).next_u64());
    s.arch = {1, 1};
  }

  if (cfg.property_name == "std_robustness") {
    s.property = property_std_robustness(cfg.eps, cfg.delta, s.arch.front(), s.arch.back());
  } else if (cfg.property_name == "phi1" || cfg.property_name == "phi2" ||
             cfg.property_name == "phi3" || cfg.property_name == "phi4") {
    s.property = property_phi(cfg.property_name[3] - '0', cfg.movingfast_literal, cfg.lipschitz);
  } else if (cfg.property_name == "toy_bound") {
    s.property = property_toy_bound();
  } else if (cfg.property_name == "custom") {
    if (cfg.custom_precondition.empty() || cfg.custom_postcondition.empty())
      throw ConfigError("custom property needs precondition and postcondition s-expressions");
    s.property.name = "custom";
    s.property.precondition = parse_formula(cfg.custom_precondition);
    s.property.postcondition = parse_formula(cfg.custom_postcondition);
  } else {
    throw ConfigError("unknown property name: " + cfg.property_name);
  }
  if (!cfg.arch.empty()) s.arch = cfg.arch;
  return s;
}

inline double selection_score(const MetricsRecord& r) {
  double p = r.classification ? r.p_metric : 1.0 / (1.0 + r.p_metric);
  return p * r.cacc * r.csec;
}

// ties on the product (e.g. all-zero security) fall back to prediction
// quality, then to the later epoch
inline bool selection_better(const MetricsRecord& a, const MetricsRecord& b) {
  double sa = selection_score(a), sb = selection_score(b);
  if (sa != sb) return sa > sb;
  double pa = a.classification ? a.p_metric : -a.p_metric;
  double pb = b.classification ? b.p_metric : -b.p_metric;
  if (pa != pb) return pa > pb;
  return a.epoch > b.epoch;
}

}  // namespace detail

// Trains per the config, writes `log.csv` (one row per epoch), `summary.csv`
// and the checkpoint of the selected epoch into out_dir.  The selected epoch
// maximises the product of the reported test metrics over the last 10 epochs.
inline RunArtifacts run_experiment(const RunConfig& cfg) {
  detail::CaseSetup setup = detail::load_case(cfg);

  TrainConfig train_cfg = cfg.train;
  train_cfg.logic = LogicInterpretation::by_name(cfg.logic_name, cfg.logic_params);
  train_cfg.logic.dl2_table_literal = cfg.dl2_table_literal;
  train_cfg.seed = cfg.seed;
  train_cfg.attack.seed = Rng::stream(cfg.seed, {0xA77}).next_u64();
  train_cfg.validate();

  validate_property(setup.property, setup.arch.front(), setup.arch.back(),
                    setup.train.classification ? 0 : setup.train.targets.cols);

  Network net = init_network(setup.arch, Rng::stream(cfg.seed, {0x1217}).next_u64(),
                             setup.train.domain.lo, setup.train.domain.hi);
  TrainState state = make_train_state(net, train_cfg);

  EvalOptions eval_opts;
  eval_opts.cacc_samples = cfg.cacc_samples;
  AttackConfig eval_attack = cfg.eval_attack ? *cfg.eval_attack : cfg.train.attack;

  std::filesystem::create_directories(cfg.out_dir);
  std::string csv_path = (std::filesystem::path(cfg.out_dir) / "log.csv").string();
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write " + csv_path);
  csv << "Epoch,Train-Loss-Pred,Train-Loss-Con,Test-P-Metric,Test-C-Acc,Test-C-Sec\n";

  struct Snapshot {
    int epoch;
    Network net;
    MetricsRecord metrics;
  };
  std::deque<Snapshot> window;

  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    EpochStats stats = train_epoch(net, setup.train, setup.property, train_cfg, state);
    MetricsRecord rec = evaluate(net, setup.test, setup.property, eval_attack,
                                 Rng::stream(cfg.seed, {0xE7A1, std::uint64_t(epoch)}).next_u64(),
                                 eval_opts);
    rec.epoch = epoch;
    rec.loss_pred = stats.loss_pred;
    rec.loss_con = stats.loss_con;
    csv << epoch << ',' << detail::format_double(stats.loss_pred) << ','
        << detail::format_double(stats.loss_con) << ',' << detail::format_double(rec.p_metric) << ','
        << detail::format_double(rec.cacc) << ',' << detail::format_double(rec.csec) << '\n';
    csv.flush();
    window.push_back({epoch, net, rec});
    if (window.size() > 10) window.pop_front();
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < window.size(); ++i)
    if (detail::selection_better(window[i].metrics, window[best].metrics)) best = i;
  const Snapshot& sel = window[best];

  std::string checkpoint_path = (std::filesystem::path(cfg.out_dir) / "model.net").string();
  {
    std::ofstream os(checkpoint_path);
    sel.net.save(os);
  }

  bool baseline = !train_cfg.use_gradnorm && train_cfg.lambda == 1.0;
  std::string summary_path = (std::filesystem::path(cfg.out_dir) / "summary.csv").string();
  {
    std::ofstream os(summary_path);
    os << "Logic,P-Metric,C-Acc,C-Sec,Selected-Epoch,Adversary-Calls\n";
    double p = sel.metrics.classification ? sel.metrics.p_metric * 100.0 : sel.metrics.p_metric;
    os << (baseline ? "baseline" : train_cfg.logic.name()) << ',' << detail::format_double(p) << ','
       << detail::format_double(sel.metrics.cacc * 100.0) << ','
       << detail::format_double(sel.metrics.csec * 100.0) << ',' << sel.epoch << ','
       << sel.metrics.adversary_calls << '\n';
  }

  RunArtifacts art;
  art.selected = sel.metrics;
  art.selected_epoch = sel.epoch;
  art.csv_path = csv_path;
  art.summary_path = summary_path;
  art.checkpoint_path = checkpoint_path;
  return art;
}

// exit status contract: 0 success, 2 bad config, 3 non-finite loss abort
inline int run_experiment_main(const std::string& config_path,
                               const std::optional<std::string>& out_override,
                               const std::optional<std::uint64_t>& seed_override,
                               bool dl2_table_literal, bool movingfast_literal,
                               std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = parse_run_config(config_path);
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << '\n';
    return 2;
  }
  if (out_override) cfg.out_dir = *out_override;
  if (seed_override) cfg.seed = *seed_override;
  if (dl2_table_literal) cfg.dl2_table_literal = true;
  if (movingfast_literal) cfg.movingfast_literal = true;
  try {
    RunArtifacts art = run_experiment(cfg);
    (void)art;
    return 0;
  } catch (const TrainingNanError& ex) {
    err << "aborted: " << ex.what() << '\n';
    return 3;
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << '\n';
    return 2;
  }
}

}  // namespace proptrain
