#pragma once

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "birdhunt/compose.hpp"
#include "birdhunt/demo.hpp"
#include "json.hpp"

namespace birdhunt {

namespace fs = std::filesystem;

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::Io, "short write to " + path.string());
}

/// An env config given either inline or as a path to a JSON file.
inline EnvConfig load_env_config(const nlohmann::json& j, const fs::path& base_dir = {}) {
  if (j.is_string()) {
    fs::path p = j.get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    return env_config_from_json(read_json_file(p));
  }
  return env_config_from_json(j);
}

struct DemoSource {
  std::optional<fs::path> path;
  // Oracle-generated demonstrations, recorded into the run directory.
  double epsilon = 0.0;
  std::int64_t episodes = 100;
  std::uint64_t seed = 0;
  bool observations = false;
};

struct ConvergenceRule {
  double threshold = 0.9;
  int k = 3;
};

inline double default_threshold(Tier tier) { return tier == Tier::High ? 1.2 : 0.9; }

struct ExperimentConfig {
  std::string id = "custom";
  std::string label;  // column name in comparison tables; derived from the mode when empty
  EnvConfig env;
  TrainerMode mode = TrainerMode::RlOnly;
  TrainerConfigs trainer;
  int hidden = 64;
  std::int64_t budget = 100000;
  std::int64_t window = 5000;
  std::vector<std::uint64_t> seeds{0};
  std::vector<DemoSource> demos;
  fs::path output = "runs/custom";
  ConvergenceRule convergence;
  bool stop_at_convergence = false;
  int n_envs = 1;

  void validate() const {
    env.validate();
    if (window < 1) fail(ErrorKind::InvalidConfig, "summary window must be >= 1 step");
    if (budget < window) fail(ErrorKind::InvalidConfig, "budget must cover at least one summary window");
    if (seeds.empty()) fail(ErrorKind::InvalidConfig, "experiment needs at least one seed");
    if (hidden < 1 || n_envs < 1) fail(ErrorKind::InvalidConfig, "hidden and n_envs must be >= 1");
    if (convergence.k < 1) fail(ErrorKind::InvalidConfig, "convergence k must be >= 1");
    if (needs_demos(mode) && demos.empty()) fail(ErrorKind::InvalidConfig, std::string(to_string(mode)) + " needs demos");
  }
};

inline std::string default_label(TrainerMode mode, BaseAlgo base) {
  switch (mode) {
    case TrainerMode::RlOnly: return base == BaseAlgo::Sac ? "RL (SAC)" : "RL (PPO)";
    case TrainerMode::BcOnly: return "BC Only";
    case TrainerMode::GailOnly: return "GAIL Only";
    case TrainerMode::BcAndGail: return "BC & GAIL";
  }
  return "?";
}

inline std::string run_label(const ExperimentConfig& c) {
  return c.label.empty() ? default_label(c.mode, c.trainer.base) : c.label;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json demos = nlohmann::json::array();
  for (const auto& d : c.demos) {
    if (d.path)
      demos.push_back(d.path->generic_string());
    else
      demos.push_back({{"oracle",
                        {{"epsilon", d.epsilon}, {"episodes", d.episodes}, {"seed", d.seed}, {"observations", d.observations}}}});
  }
  return {{"id", c.id},
          {"label", c.label},
          {"env", to_json(c.env)},
          {"mode", to_string(c.mode)},
          {"base", to_string(c.trainer.base)},
          {"ppo", to_json(c.trainer.ppo)},
          {"sac", to_json(c.trainer.sac)},
          {"bc", to_json(c.trainer.bc)},
          {"gail", to_json(c.trainer.gail)},
          {"hidden", c.hidden},
          {"budget", c.budget},
          {"window", c.window},
          {"seeds", c.seeds},
          {"demos", demos},
          {"output", c.output.generic_string()},
          {"convergence", {{"threshold", c.convergence.threshold}, {"k", c.convergence.k}}},
          {"stop_at_convergence", c.stop_at_convergence},
          {"n_envs", c.n_envs}};
}

/// Parses an experiment config. Relative env and demo paths resolve against
/// base_dir (the directory of the config file).
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
  ExperimentConfig c;
  try {
    c.id = j.value("id", c.id);
    c.label = j.value("label", c.label);
    if (!j.contains("env")) fail(ErrorKind::InvalidConfig, "experiment config needs an 'env'");
    c.env = load_env_config(j.at("env"), base_dir);
    c.mode = parse_trainer_mode(j.value("mode", std::string("RL_ONLY")));
    c.trainer.base = parse_base_algo(j.value("base", std::string("SAC")));
    if (j.contains("ppo")) c.trainer.ppo = ppo_config_from_json(j.at("ppo"));
    if (j.contains("sac")) c.trainer.sac = sac_config_from_json(j.at("sac"));
    if (j.contains("bc")) c.trainer.bc = bc_config_from_json(j.at("bc"));
    c.trainer.gail = j.contains("gail") ? gail_config_from_json(j.at("gail")) : gail_defaults_for(c.env.tier);
    c.hidden = j.value("hidden", c.hidden);
    c.budget = j.value("budget", c.budget);
    c.window = j.value("window", c.window);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& d : j.value("demos", nlohmann::json::array())) {
      DemoSource s;
      if (d.is_string()) {
        fs::path p = d.get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        s.path = p;
      } else {
        const auto& o = d.at("oracle");
        s.epsilon = o.value("epsilon", s.epsilon);
        s.episodes = o.value("episodes", s.episodes);
        s.seed = o.value("seed", s.seed);
        s.observations = o.value("observations", s.observations);
      }
      c.demos.push_back(std::move(s));
    }
    c.output = j.value("output", std::string("runs/") + c.id);
    c.convergence.threshold = default_threshold(c.env.tier);
    if (j.contains("convergence")) {
      c.convergence.threshold = j.at("convergence").value("threshold", c.convergence.threshold);
      c.convergence.k = j.at("convergence").value("k", c.convergence.k);
    }
    c.stop_at_convergence = j.value("stop_at_convergence", c.stop_at_convergence);
    c.n_envs = j.value("n_envs", c.n_envs);
    c.trainer.n_envs = c.n_envs;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("malformed experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const fs::path& path) {
  return experiment_config_from_json(read_json_file(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRow {
  std::int64_t step = 0;  // last env step covered by the window
  double reward = std::nan("");  // mean return of episodes finished in the window
  double episode_length = std::nan("");
  double entropy = 0.0;  // mean summed branch entropy over the window's steps
  std::int64_t episodes = 0;
  std::vector<double> stats;
};

struct MetricsSeries {
  std::uint64_t seed = 0;
  std::vector<std::string> stat_names;
  std::vector<MetricsRow> rows;
  std::optional<std::string> aborted;  // diagnostic when training stopped on an error
};

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{}", v);
}

inline std::string metrics_csv(const MetricsSeries& s) {
  std::string out = "step,reward,episode_length,entropy,episodes";
  for (const auto& n : s.stat_names) out += "," + n;
  out += "\n";
  for (const auto& r : s.rows) {
    out += fmt::format("{},{},{},{},{}", r.step, format_number(r.reward), format_number(r.episode_length),
                       format_number(r.entropy), r.episodes);
    for (double v : r.stats) out += "," + format_number(v);
    out += "\n";
  }
  return out;
}

inline MetricsSeries parse_metrics_csv(const std::string& text) {
  MetricsSeries s;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Corrupt, "empty metrics CSV");
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    return cells;
  };
  const auto header = split(line);
  if (header.size() < 5 || header[0] != "step" || header[1] != "reward" || header[2] != "episode_length" ||
      header[3] != "entropy")
    fail(ErrorKind::Corrupt, "metrics CSV header must start with step,reward,episode_length,entropy");
  s.stat_names.assign(header.begin() + 5, header.end());
  auto num = [](const std::string& c) { return c == "nan" ? std::nan("") : std::stod(c); };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) fail(ErrorKind::Corrupt, "ragged metrics CSV row");
    MetricsRow r;
    try {
      r.step = std::stoll(cells[0]);
      r.reward = num(cells[1]);
      r.episode_length = num(cells[2]);
      r.entropy = num(cells[3]);
      r.episodes = std::stoll(cells[4]);
      for (std::size_t i = 5; i < cells.size(); ++i) r.stats.push_back(num(cells[i]));
    } catch (const std::exception&) {
      fail(ErrorKind::Corrupt, "non-numeric cell in metrics CSV");
    }
    s.rows.push_back(std::move(r));
  }
  return s;
}

/// Step of the first window that starts a run of k consecutive windows with
/// reward >= threshold; nullopt when there is none.
inline std::optional<std::int64_t> convergence_step(const std::vector<MetricsRow>& rows, const ConvergenceRule& rule) {
  int run = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    run = rows[i].reward >= rule.threshold ? run + 1 : 0;
    if (run == rule.k) return rows[i + 1 - static_cast<std::size_t>(rule.k)].step;
  }
  return std::nullopt;
}

/// Mean return of the finished episodes in a hand-built or collected log.
inline double mean_episode_return(const std::vector<EpisodeRecord>& episodes) {
  if (episodes.empty()) return std::nan("");
  double s = 0.0;
  for (const auto& e : episodes) s += e.episode_return;
  return s / static_cast<double>(episodes.size());
}

// ---------------------------------------------------------------------------
// Training

using MetricsCallback = std::function<void(std::uint64_t seed, const MetricsRow&, const std::vector<std::string>& stat_names)>;

struct RunOptions {
  bool quiet = true;
  bool write_outputs = true;
  MetricsCallback on_metrics;
  const std::atomic<bool>* cancel = nullptr;
};

struct ExperimentResult {
  std::vector<MetricsSeries> series;
  fs::path output;
};

/// Loads (or records) the demonstrations a config asks for. Oracle demos are
/// written into `<output>/demos` so the run directory is self-contained.
inline std::vector<fs::path> prepare_demos(const ExperimentConfig& cfg, bool write) {
  std::vector<fs::path> paths;
  for (const auto& d : cfg.demos) {
    if (d.path) {
      if (write) {
        const fs::path dst = cfg.output / "demos" / d.path->filename();
        fs::create_directories(dst.parent_path());
        if (fs::absolute(*d.path) != fs::absolute(dst)) fs::copy_file(*d.path, dst, fs::copy_options::overwrite_existing);
        paths.push_back(dst);
      } else {
        paths.push_back(*d.path);
      }
      continue;
    }
    const fs::path dir = write ? cfg.output / "demos" : fs::temp_directory_path() / "birdhunt-demos";
    const fs::path dst = dir / fmt::format("oracle_eps{}_n{}_seed{}.demo.jsonl", d.epsilon, d.episodes, d.seed);
    record_oracle(dst, cfg.env, d.epsilon, d.episodes, d.seed, d.observations, fmt::format("oracle-eps{}", d.epsilon));
    paths.push_back(dst);
  }
  return paths;
}

inline std::shared_ptr<const DemoDataset> load_demo_dataset(const std::vector<fs::path>& paths, const EnvConfig& env) {
  if (paths.empty()) return nullptr;
  std::vector<DemoFile> demos;
  for (const auto& p : paths) {
    const auto problems = validate_demo(p, env);
    if (!problems.empty()) fail(ErrorKind::Incompatible, "demo " + p.string() + " does not match the env: " + problems.front());
    demos.push_back(load_demo(p));
  }
  return std::make_shared<const DemoDataset>(make_dataset(demos, env));
}

/// Trains one seed. Windows are assigned by env step; a trailing partial
/// window is emitted when the run ends off a window boundary (cancel or
/// non-finite abort), but not after stopping at convergence.
inline MetricsSeries train_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                                std::shared_ptr<const DemoDataset> demos, const RunOptions& opt,
                                std::unique_ptr<Learner>* keep = nullptr) {
  MetricsSeries series;
  series.seed = seed;
  const auto trunk = trunk_for(cfg.env, cfg.hidden);
  auto learner = make_trainer(cfg.mode, cfg.env, trunk, cfg.trainer, std::move(demos), seed);
  series.stat_names = learner->stat_names();
  EnvPool pool(cfg.env, derive_seed(seed, 1), cfg.n_envs);
  Rng rng(derive_seed(seed, 2));

  std::int64_t steps = 0;
  double ret_sum = 0.0, len_sum = 0.0, ent_sum = 0.0;
  std::int64_t n_eps = 0, n_steps = 0;
  bool converged = false;
  auto close = [&](std::int64_t end) {
    MetricsRow row;
    row.step = end;
    row.episodes = n_eps;
    if (n_eps) {
      row.reward = ret_sum / static_cast<double>(n_eps);
      row.episode_length = len_sum / static_cast<double>(n_eps);
    }
    row.entropy = n_steps ? ent_sum / static_cast<double>(n_steps) : 0.0;
    ret_sum = len_sum = ent_sum = 0.0;
    n_eps = n_steps = 0;
    return row;
  };
  auto emit = [&](MetricsRow row) {
    if (!opt.quiet)
      fmt::print("[{} seed {}] step {} reward {} entropy {:.3f}\n", cfg.id, seed, row.step, format_number(row.reward),
                 row.entropy);
    if (opt.on_metrics) opt.on_metrics(seed, row, series.stat_names);
    series.rows.push_back(std::move(row));
  };

  try {
    while (steps < cfg.budget) {
      if (opt.cancel && opt.cancel->load()) break;
      const std::int64_t n = std::min(learner->chunk_size(), cfg.budget - steps);
      const auto traj = run_rollouts(pool, learner->policy(), n, rng);
      std::vector<MetricsRow> closed;
      std::size_t ep = 0;
      for (const auto& t : traj.transitions) {
        ent_sum += t.entropy;
        ++n_steps;
        for (; ep < traj.episodes.size() && traj.episodes[ep].end_step == t.step; ++ep) {
          ret_sum += traj.episodes[ep].episode_return;
          len_sum += traj.episodes[ep].length;
          ++n_eps;
        }
        if (t.step % cfg.window == 0 || t.step == cfg.budget) closed.push_back(close(t.step));
      }
      steps += n;
      learner->learn(traj);
      // Learner stats cover every update since the previous window closed.
      for (std::size_t i = 0; i < closed.size(); ++i) {
        closed[i].stats = i == 0 ? learner->take_stats()
                                 : std::vector<double>(series.stat_names.size(), std::nan(""));
        emit(std::move(closed[i]));
      }
      if (cfg.stop_at_convergence && convergence_step(series.rows, cfg.convergence)) {
        converged = true;
        break;
      }
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NonFinite) throw;
    series.aborted = e.what();
  }
  if (!converged && n_steps > 0 && (series.rows.empty() || series.rows.back().step < steps)) {
    auto row = close(steps);
    row.stats = learner->take_stats();
    emit(std::move(row));
  }
  if (keep) *keep = std::move(learner);
  else if (opt.write_outputs) {
    nn::Checkpoint ck{learner->policy_net().spec(),
                      std::vector<float>(learner->policy_params().begin(), learner->policy_params().end()),
                      {{"experiment", cfg.id}, {"seed", seed}, {"steps", steps}, {"mode", to_string(cfg.mode)}}};
    save_checkpoint(cfg.output / fmt::format("checkpoint_seed{}.bin", seed), ck);
  }
  return series;
}

struct SeedSummary {
  std::uint64_t seed = 0;
  std::optional<std::int64_t> convergence;
  double final_reward = std::nan("");
  double final_entropy = std::nan("");
  std::optional<std::string> aborted;
};

inline SeedSummary summarize_series(const MetricsSeries& s, const ConvergenceRule& rule) {
  SeedSummary out;
  out.seed = s.seed;
  out.convergence = convergence_step(s.rows, rule);
  out.aborted = s.aborted;
  for (auto it = s.rows.rbegin(); it != s.rows.rend(); ++it)
    if (!std::isnan(it->reward)) {
      out.final_reward = it->reward;
      break;
    }
  if (!s.rows.empty()) out.final_entropy = s.rows.back().entropy;
  return out;
}

/// Median with "never" counted as +infinity; nullopt when the median is never.
inline std::optional<double> median_convergence(std::vector<std::optional<std::int64_t>> steps) {
  if (steps.empty()) return std::nullopt;
  std::vector<double> v;
  for (const auto& s : steps) v.push_back(s ? static_cast<double>(*s) : std::numeric_limits<double>::infinity());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const double m = n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
  if (std::isinf(m)) return std::nullopt;
  return m;
}

inline nlohmann::json run_report(const ExperimentConfig& cfg, const std::vector<MetricsSeries>& series) {
  nlohmann::json seeds = nlohmann::json::array();
  std::vector<std::optional<std::int64_t>> conv;
  for (const auto& s : series) {
    const auto sum = summarize_series(s, cfg.convergence);
    conv.push_back(sum.convergence);
    seeds.push_back({{"seed", sum.seed},
                     {"convergence_step", sum.convergence ? nlohmann::json(*sum.convergence) : nlohmann::json(nullptr)},
                     {"final_reward", std::isnan(sum.final_reward) ? nlohmann::json(nullptr) : nlohmann::json(sum.final_reward)},
                     {"final_entropy", sum.final_entropy},
                     {"aborted", sum.aborted ? nlohmann::json(*sum.aborted) : nlohmann::json(nullptr)}});
  }
  const auto med = median_convergence(conv);
  return {{"id", cfg.id},
          {"label", run_label(cfg)},
          {"threshold", cfg.convergence.threshold},
          {"k", cfg.convergence.k},
          {"budget", cfg.budget},
          {"median_convergence_step", med ? nlohmann::json(*med) : nlohmann::json("No Convergence")},
          {"seeds", seeds}};
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  cfg.validate();
  ExperimentResult res;
  res.output = cfg.output;
  if (opt.write_outputs) {
    fs::create_directories(cfg.output);
  }
  const auto demo_paths = prepare_demos(cfg, opt.write_outputs);
  const auto demos = load_demo_dataset(demo_paths, cfg.env);
  if (opt.write_outputs) {
    // The copied config points at the run-local demo files and output ".".
    ExperimentConfig local = cfg;
    local.output = ".";
    for (std::size_t i = 0; i < local.demos.size(); ++i)
      local.demos[i] = DemoSource{fs::relative(demo_paths[i], cfg.output)};
    write_text_file(cfg.output / "config.json", to_json(local).dump(2) + "\n");
  }
  for (auto seed : cfg.seeds) {
    res.series.push_back(train_seed(cfg, seed, demos, opt));
    if (opt.write_outputs)
      write_text_file(cfg.output / fmt::format("metrics_seed{}.csv", seed), metrics_csv(res.series.back()));
    if (opt.cancel && opt.cancel->load()) break;
  }
  if (opt.write_outputs) write_text_file(cfg.output / "report.json", run_report(cfg, res.series).dump(2) + "\n");
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double mean_reward = 0.0;
  double mean_length = 0.0;
  double mean_entropy = 0.0;  // mean over evaluated steps of the policy entropy
  std::int64_t episodes = 0;
};

/// Greedy (per-branch argmax, ties broken at random) evaluation.
inline EvalResult evaluate_policy(const nn::Net& net, std::span<const float> params, const EnvConfig& env,
                                  std::int64_t n_episodes, std::uint64_t seed, bool greedy = true) {
  if (n_episodes < 1) fail(ErrorKind::InvalidArgument, "evaluation needs at least one episode");
  require_policy_for(net.spec(), env);
  if (params.size() != net.param_count()) fail(ErrorKind::Incompatible, "parameters do not match the network");
  PolicySnapshot snap{&net, params, 1.0, greedy};
  EnvPool pool(env, derive_seed(seed, 1), 1);
  Rng rng(derive_seed(seed, 2));
  auto act_fn = [&](std::span<const float> obs) { return act(snap, obs, rng); };
  std::vector<EpisodeRecord> episodes;
  double ent = 0.0;
  std::int64_t steps = 0;
  while (static_cast<std::int64_t>(episodes.size()) < n_episodes) {
    ent += pool.step(act_fn, &episodes).entropy;
    ++steps;
  }
  EvalResult r;
  r.episodes = n_episodes;
  for (const auto& e : episodes) {
    r.mean_reward += e.episode_return / static_cast<double>(n_episodes);
    r.mean_length += static_cast<double>(e.length) / static_cast<double>(n_episodes);
  }
  r.mean_entropy = ent / static_cast<double>(steps);
  return r;
}

inline EvalResult evaluate_checkpoint(const nn::Checkpoint& ck, const EnvConfig& env, std::int64_t n_episodes,
                                      std::uint64_t seed) {
  const nn::Net net(ck.spec);
  return evaluate_policy(net, ck.params, env, n_episodes, seed);
}

/// Expected episode return of a policy that shoots uniformly at random in the
/// low/medium tiers, when every shot hits with probability p: an episode ends
/// with the first hit (+1 after k-1 misses) or after `cap` misses.
inline double random_policy_expected_return(double p, int cap) {
  double e = 0.0, miss_prob = 1.0;
  for (int k = 1; k <= cap; ++k) {
    e += miss_prob * p * (reward::kYellowHit + reward::kMiss * (k - 1));
    miss_prob *= 1.0 - p;
  }
  return e + miss_prob * reward::kMiss * cap;
}

// ---------------------------------------------------------------------------
// Comparison reports

struct ComparisonColumn {
  std::string label;
  fs::path dir;
  ConvergenceRule rule;
  std::int64_t budget = 0;
  std::vector<SeedSummary> seeds;
  std::optional<double> convergence;  // median over seeds
  double final_reward = std::nan("");   // mean over seeds
  double final_entropy = std::nan("");  // mean over seeds
};

struct ComparisonReport {
  std::vector<ComparisonColumn> columns;
};

inline int label_rank(const std::string& label) {
  static const std::vector<std::string> order{"RL (SAC)", "RL (PPO)", "RL", "BC Only", "BC", "GAIL Only", "GAIL", "BC & GAIL"};
  const auto it = std::find(order.begin(), order.end(), label);
  return it == order.end() ? static_cast<int>(order.size()) : static_cast<int>(it - order.begin());
}

inline ComparisonColumn make_column(std::string label, const std::vector<MetricsSeries>& series, const ConvergenceRule& rule) {
  ComparisonColumn col;
  col.label = std::move(label);
  col.rule = rule;
  std::vector<std::optional<std::int64_t>> conv;
  double r = 0.0, h = 0.0;
  for (const auto& s : series) {
    col.seeds.push_back(summarize_series(s, rule));
    conv.push_back(col.seeds.back().convergence);
    r += col.seeds.back().final_reward;
    h += col.seeds.back().final_entropy;
  }
  col.convergence = median_convergence(conv);
  if (!series.empty()) {
    col.final_reward = r / static_cast<double>(series.size());
    col.final_entropy = h / static_cast<double>(series.size());
  }
  return col;
}

/// Gathers every run directory (a directory holding config.json and
/// metrics_seed*.csv) at or directly below `root`.
/// Replaces the per-run convergence threshold and/or k when set.
struct RuleOverride {
  std::optional<double> threshold;
  std::optional<int> k;
  RuleOverride() = default;
  RuleOverride(std::optional<double> t, std::optional<int> kk) : threshold(t), k(kk) {}
  RuleOverride(const ConvergenceRule& r) : threshold(r.threshold), k(r.k) {}  // NOLINT: implicit on purpose
};

inline ComparisonReport compare_runs(const fs::path& root, const RuleOverride& override_rule = {}) {
  if (!fs::is_directory(root)) fail(ErrorKind::Io, "not a directory: " + root.string());
  std::vector<fs::path> dirs{root};
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin() + 1, dirs.end());
  ComparisonReport rep;
  for (const auto& dir : dirs) {
    if (!fs::exists(dir / "config.json")) continue;
    std::vector<fs::path> csvs;
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (name.rfind("metrics_seed", 0) == 0 && e.path().extension() == ".csv") csvs.push_back(e.path());
    }
    if (csvs.empty()) continue;
    std::sort(csvs.begin(), csvs.end());
    const auto cj = read_json_file(dir / "config.json");
    const auto env = env_config_from_json(cj.at("env"));
    ConvergenceRule rule{default_threshold(env.tier), 3};
    if (cj.contains("convergence")) {
      rule.threshold = cj.at("convergence").value("threshold", rule.threshold);
      rule.k = cj.at("convergence").value("k", rule.k);
    }
    if (override_rule.threshold) rule.threshold = *override_rule.threshold;
    if (override_rule.k) rule.k = *override_rule.k;
    std::string label = cj.value("label", std::string());
    if (label.empty())
      label = default_label(parse_trainer_mode(cj.value("mode", std::string("RL_ONLY"))),
                            parse_base_algo(cj.value("base", std::string("SAC"))));
    std::vector<MetricsSeries> series;
    for (const auto& p : csvs) {
      auto s = parse_metrics_csv(detail::read_file(p));
      const auto stem = p.stem().string();
      s.seed = std::stoull(stem.substr(std::string("metrics_seed").size()));
      series.push_back(std::move(s));
    }
    auto col = make_column(label, series, rule);
    col.dir = dir;
    col.budget = cj.value("budget", std::int64_t{0});
    rep.columns.push_back(std::move(col));
  }
  if (rep.columns.empty()) fail(ErrorKind::InvalidArgument, "no run directories with metrics under " + root.string());
  std::stable_sort(rep.columns.begin(), rep.columns.end(),
                   [](const auto& a, const auto& b) { return label_rank(a.label) < label_rank(b.label); });
  return rep;
}

inline constexpr const char* kNoConvergence = "No Convergence";

struct ComparisonCells {
  std::string steps, reward, entropy;
};

// Unconverged columns read "No Convergence" in every metric.
inline ComparisonCells comparison_cells(const ComparisonColumn& c, bool exact) {
  if (!c.convergence) return {kNoConvergence, kNoConvergence, kNoConvergence};
  if (exact) return {format_number(*c.convergence), format_number(c.final_reward), format_number(c.final_entropy)};
  return {fmt::format("{}", static_cast<std::int64_t>(std::llround(*c.convergence))), fmt::format("{:.2f}", c.final_reward),
          fmt::format("{:.2f}", c.final_entropy)};
}

inline std::string comparison_text(const ComparisonReport& rep) {
  std::vector<std::vector<std::string>> grid{{"Metric"}, {"Step Count"}, {"Cumulative Reward"}, {"Entropy"}};
  for (const auto& c : rep.columns) {
    const auto cells = comparison_cells(c, false);
    grid[0].push_back(c.label);
    grid[1].push_back(cells.steps);
    grid[2].push_back(cells.reward);
    grid[3].push_back(cells.entropy);
  }
  std::vector<std::size_t> width(grid[0].size(), 0);
  for (const auto& row : grid)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::string out;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t i = 0; i < grid[r].size(); ++i)
      out += fmt::format("{}{:<{}}", i == 0 ? "" : " | ", grid[r][i], width[i]);
    out += "\n";
    if (r == 0) {
      for (std::size_t i = 0; i < width.size(); ++i) out += (i ? "-+-" : "") + std::string(width[i], '-');
      out += "\n";
    }
  }
  if (!rep.columns.empty()) {
    out += "\n";
    for (const auto& c : rep.columns)
      out += fmt::format("{}: {} seeds, threshold {}, k {}\n", c.label, c.seeds.size(), c.rule.threshold, c.rule.k);
  }
  return out;
}

inline std::string comparison_csv(const ComparisonReport& rep) {
  std::string out = "method,convergence_step,final_reward,final_entropy,seeds,threshold,k\n";
  for (const auto& c : rep.columns) {
    const auto cells = comparison_cells(c, true);
    out += fmt::format("{},{},{},{},{},{},{}\n", c.label, cells.steps, cells.reward, cells.entropy, c.seeds.size(),
                       format_number(c.rule.threshold), c.rule.k);
  }
  return out;
}

inline ComparisonReport write_comparison(const fs::path& root, const RuleOverride& rule = {}) {
  auto rep = compare_runs(root, rule);
  write_text_file(root / "comparison.txt", comparison_text(rep));
  write_text_file(root / "comparison.csv", comparison_csv(rep));
  return rep;
}

}  // namespace birdhunt
