#pragma once

// Command-line front end: train / eval / record-oracle / demo-validate /
// compare / serve. Exit codes: 0 success, 2 usage, 3 invalid config or
// argument, 4 I/O, 5 corrupt or incompatible data, 6 numerical failure,
// 1 anything else.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <atomic>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "birdhunt/gateway.hpp"
#include "birdhunt/harness.hpp"

namespace birdhunt::cli {

inline constexpr int kExitUsage = 2;

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidArgument: return 3;
    case ErrorKind::Io: return 4;
    case ErrorKind::Corrupt:
    case ErrorKind::Incompatible: return 5;
    case ErrorKind::NonFinite: return 6;
  }
  return 1;
}

/// "low" / "medium" / "high" name the 20x20 desk presets; anything else is a
/// path to an env JSON file.
inline EnvConfig resolve_env(const std::string& arg) {
  if (!std::filesystem::exists(arg)) {
    if (arg == "low") return desk_env_config(Tier::Low);
    if (arg == "medium") return desk_env_config(Tier::Medium);
    if (arg == "high") return desk_env_config(Tier::High);
  }
  return load_env_config(nlohmann::json(arg));
}

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool quiet = false;
};

inline int cmd_train(const Globals& g, const std::string& config_path, std::optional<std::int64_t> budget,
                     std::ostream& out) {
  auto cfg = load_experiment_config(config_path);
  if (g.seed) cfg.seeds = {*g.seed};
  if (g.out) cfg.output = *g.out;
  if (budget) cfg.budget = *budget;
  cfg.validate();
  RunOptions opt;
  opt.quiet = g.quiet;
  const auto res = run_experiment(cfg, opt);
  const auto report = run_report(cfg, res.series);
  if (!g.quiet) fmt::print(out, "{}\n", report.dump(2));
  for (const auto& s : res.series)
    if (s.aborted) return exit_code(ErrorKind::NonFinite);
  return 0;
}

inline int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& env_arg, std::int64_t episodes,
                    bool sample, std::ostream& out) {
  const auto ck = nn::load_checkpoint(checkpoint);
  const auto env = resolve_env(env_arg);
  const nn::Net net(ck.spec);
  const auto r = evaluate_policy(net, ck.params, env, episodes, g.seed.value_or(0), !sample);
  const nlohmann::json j{{"checkpoint", checkpoint},
                         {"episodes", r.episodes},
                         {"greedy", !sample},
                         {"mean_reward", r.mean_reward},
                         {"mean_episode_length", r.mean_length},
                         {"mean_entropy", r.mean_entropy}};
  if (g.out) write_text_file(*g.out, j.dump(2) + "\n");
  if (!g.quiet) fmt::print(out, "{}\n", j.dump(2));
  return 0;
}

inline int cmd_record_oracle(const Globals& g, const std::string& env_arg, double epsilon, std::int64_t episodes,
                             std::string file, bool no_obs, const std::string& tag, std::ostream& out) {
  if (file.empty()) {
    if (!g.out) fail(ErrorKind::InvalidArgument, "record-oracle needs -o <file>");
    file = *g.out;
  }
  const auto env = resolve_env(env_arg);
  const auto header = record_oracle(file, env, epsilon, episodes, g.seed.value_or(0), !no_obs, tag);
  const auto s = summarize(load_demo(file));
  if (!g.quiet)
    fmt::print(out, "wrote {}: {} episodes, {} records, mean reward {:.4f}\n", file, header.episodes, header.records,
               s.mean_reward);
  return 0;
}

inline int cmd_demo_validate(const Globals& g, const std::string& file, const std::string& env_arg, std::ostream& out,
                             std::ostream& err) {
  const auto env = resolve_env(env_arg);
  const auto diags = validate_demo(file, env);
  if (!diags.empty()) {
    for (const auto& d : diags) fmt::print(err, "{}: {}\n", file, d);
    return exit_code(ErrorKind::Corrupt);
  }
  if (!g.quiet) {
    const auto s = summarize(load_demo(file));
    fmt::print(out, "{}: ok ({} episodes, {} records, mean reward {:.4f})\n", file, s.episodes, s.records, s.mean_reward);
  }
  return 0;
}

inline int cmd_compare(const Globals& g, const std::string& dir, std::optional<double> threshold, std::optional<int> k,
                       std::ostream& out) {
  const auto rep = compare_runs(dir, RuleOverride{threshold, k});
  const std::filesystem::path dest = g.out ? std::filesystem::path(*g.out) : std::filesystem::path(dir);
  write_text_file(dest / "comparison.txt", comparison_text(rep));
  write_text_file(dest / "comparison.csv", comparison_csv(rep));
  if (!g.quiet) fmt::print(out, "{}", comparison_text(rep));
  return 0;
}

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  double tick_hz = 15.0;
  std::string static_dir;
  std::string demo_dir = "demos";
  std::vector<std::string> envs;  // id=path entries
  std::string train_config;
  std::string spectate_checkpoint;
  double spectate_epsilon = 0.0;
};

inline int cmd_serve(const Globals& g, const ServeArgs& a, std::ostream& out) {
  if (a.port < 0 || a.port > 65535) fail(ErrorKind::InvalidArgument, "port must lie in [0, 65535]");
  gateway::GatewayConfig cfg;
  cfg.address = a.host;
  cfg.port = static_cast<unsigned short>(a.port);
  cfg.tick_hz = a.tick_hz;
  cfg.static_dir = a.static_dir;
  cfg.demo_dir = g.out ? *g.out : a.demo_dir;
  cfg.seed = g.seed.value_or(0);
  cfg.envs = gateway::default_envs();
  for (const auto& e : a.envs) {
    const auto eq = e.find('=');
    if (eq == std::string::npos) fail(ErrorKind::InvalidArgument, "--env expects id=path, got '" + e + "'");
    cfg.envs[e.substr(0, eq)] = resolve_env(e.substr(eq + 1));
  }
  cfg.spectate_epsilon = a.spectate_epsilon;
  if (!a.spectate_checkpoint.empty()) cfg.spectate_policy = nn::load_checkpoint(a.spectate_checkpoint);

  gateway::Server server(cfg);
  fmt::print(out, "listening on http://{}:{}\n", a.host, server.port());
  out.flush();

  std::atomic<bool> cancel{false};
  std::thread trainer;
  if (!a.train_config.empty()) {
    auto exp = load_experiment_config(a.train_config);
    if (g.seed) exp.seeds = {*g.seed};
    trainer = std::thread([&server, &cancel, exp, quiet = g.quiet] {
      RunOptions opt;
      opt.quiet = quiet;
      opt.cancel = &cancel;
      opt.on_metrics = [&server](std::uint64_t seed, const MetricsRow& row, const std::vector<std::string>&) {
        server.publish_metrics({{"seed", seed},
                                {"step", row.step},
                                {"reward", row.reward},
                                {"episode_length", row.episode_length},
                                {"entropy", row.entropy}});
      };
      try {
        run_experiment(exp, opt);
      } catch (const std::exception& e) {
        fmt::print(stderr, "training stopped: {}\n", e.what());
      }
    });
  }

  boost::asio::signal_set signals(server.io(), SIGINT, SIGTERM);
  signals.async_wait([&server](const boost::system::error_code& ec, int) {
    if (!ec) server.stop();
  });
  server.run();
  cancel = true;
  if (trainer.joinable()) trainer.join();
  return 0;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Bird-hunter reinforcement and imitation learning testbed", "birdhunt"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  std::string out_path;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed")->check(CLI::NonNegativeNumber);
  auto* out_opt = app.add_option("--out", out_path, "Output path");
  app.add_flag("--quiet,-q", g.quiet, "Suppress progress output");
  seed_opt->configurable(false);
  app.fallthrough();

  auto* train = app.add_subcommand("train", "Run an experiment config");
  std::string train_config;
  std::optional<std::int64_t> budget;
  train->add_option("config", train_config, "Experiment JSON")->required();
  train->add_option("--budget", budget, "Override the step budget");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_ck, eval_env;
  std::int64_t eval_episodes = 100;
  bool eval_sample = false;
  eval->add_option("checkpoint", eval_ck)->required();
  eval->add_option("env", eval_env, "Env JSON or low|medium|high")->required();
  eval->add_option("--episodes", eval_episodes)->check(CLI::PositiveNumber);
  eval->add_flag("--sample", eval_sample, "Sample actions instead of acting greedily");

  auto* rec = app.add_subcommand("record-oracle", "Record scripted-oracle demonstrations");
  std::string rec_env, rec_file, rec_tag;
  double rec_eps = 0.0;
  std::int64_t rec_episodes = 100;
  bool rec_no_obs = false;
  rec->add_option("env", rec_env, "Env JSON or low|medium|high")->required();
  rec->add_option("--epsilon", rec_eps)->check(CLI::Range(0.0, 1.0));
  rec->add_option("--episodes", rec_episodes)->check(CLI::NonNegativeNumber);
  rec->add_option("-o,--output", rec_file, "Demo file to write");
  rec->add_option("--tag", rec_tag);
  rec->add_flag("--no-observations", rec_no_obs, "Omit per-step observations");

  auto* val = app.add_subcommand("demo-validate", "Check a demo file against an env config");
  std::string val_file, val_env;
  val->add_option("file", val_file)->required();
  val->add_option("env", val_env, "Env JSON or low|medium|high")->required();

  auto* cmp = app.add_subcommand("compare", "Tabulate finished runs");
  std::string cmp_dir;
  std::optional<double> cmp_threshold;
  std::optional<int> cmp_k;
  cmp->add_option("dir", cmp_dir)->required();
  cmp->add_option("--threshold", cmp_threshold, "Override the convergence threshold");
  cmp->add_option("--k", cmp_k, "Override the consecutive-window count")->check(CLI::PositiveNumber);

  auto* serve = app.add_subcommand("serve", "Start the WebSocket gateway");
  ServeArgs sa;
  serve->add_option("--port", sa.port);
  serve->add_option("--host", sa.host);
  serve->add_option("--tick-hz", sa.tick_hz)->check(CLI::PositiveNumber);
  serve->add_option("--static", sa.static_dir, "Directory with the built UI");
  serve->add_option("--demo-dir", sa.demo_dir, "Where recordings are written");
  serve->add_option("--env", sa.envs, "Extra env config as id=path (repeatable)");
  serve->add_option("--train", sa.train_config, "Experiment to run and stream to dashboards");
  serve->add_option("--spectate-checkpoint", sa.spectate_checkpoint);
  serve->add_option("--spectate-epsilon", sa.spectate_epsilon)->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }
  if (*seed_opt) g.seed = seed;
  if (*out_opt) g.out = out_path;

  try {
    if (*train) return cmd_train(g, train_config, budget, out);
    if (*eval) return cmd_eval(g, eval_ck, eval_env, eval_episodes, eval_sample, out);
    if (*rec) return cmd_record_oracle(g, rec_env, rec_eps, rec_episodes, rec_file, rec_no_obs, rec_tag, out);
    if (*val) return cmd_demo_validate(g, val_file, val_env, out, err);
    if (*cmp) return cmd_compare(g, cmp_dir, cmp_threshold, cmp_k, out);
    if (*serve) return cmd_serve(g, sa, out);
  } catch (const Error& e) {
    fmt::print(err, "error [{}]: {}\n", to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    fmt::print(err, "error [{}]: {}\n", to_string(ErrorKind::InvalidConfig), e.what());
    return exit_code(ErrorKind::InvalidConfig);
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return 1;
  }
  return kExitUsage;
}

}  // namespace birdhunt::cli
