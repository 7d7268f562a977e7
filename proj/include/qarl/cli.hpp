#pragma once

// Command-line front end. Exit codes: 0 success, 1 configuration or usage
// error, 2 runtime failure.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qarl/envs.hpp"
#include "qarl/errors.hpp"
#include "qarl/game.hpp"
#include "qarl/harness.hpp"
#include "qarl/qre.hpp"
#include "qarl/report.hpp"
#include "qarl/soft_solver.hpp"

namespace qarl {

namespace detail {

struct CliOverrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string algorithm;
  bool fix_rate = false;
  bool greedy_adversary = false;
  std::optional<std::size_t> update_interval;
};

inline void add_experiment_flags(CLI::App* sub, CliOverrides& o) {
  sub->add_option("--config", o.config, "ExperimentConfig JSON")->required();
  sub->add_option("--seed", o.seed, "run a single seed instead of the configured list");
  sub->add_option("--algorithm", o.algorithm, "override the configured algorithm");
  sub->add_flag("--fix-rate", o.fix_rate, "curriculum evolves only the gamma shape");
  sub->add_flag("--greedy-adversary", o.greedy_adversary, "rational adversaries play argmax");
  sub->add_option("--update-interval", o.update_interval, "environment steps between critic updates");
}

inline ExperimentConfig load_config(const CliOverrides& o) {
  nlohmann::json j = read_json_file(o.config);
  if (!j.is_object()) throw ConfigError("'" + o.config + "': config must be a JSON object");
  if (j.contains("env") && j["env"].is_string()) {
    // Environment spec given as a path relative to the config file.
    const auto base = std::filesystem::path(o.config).parent_path();
    j["env"] = read_json_file(base / j["env"].get<std::string>());
  }
  if (!o.algorithm.empty()) j["algorithm"] = o.algorithm;
  if (o.seed) j["seeds"] = std::vector<std::uint64_t>{*o.seed};
  if (o.fix_rate) j["curriculum"]["fix_rate"] = true;
  if (o.greedy_adversary) j["agent"]["greedy_adversary"] = true;
  if (o.update_interval) j["agent"]["update_interval"] = *o.update_interval;
  return config_from_json(j);
}

inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file_atomic(path, text);
  }
}

inline std::string run_file_name(const RunRecord& r) {
  return "run_" + r.algorithm + "_seed" + std::to_string(r.seed) + ".json";
}

inline std::vector<RunRecord> load_runs(const std::vector<std::string>& paths) {
  std::vector<RunRecord> runs;
  for (const auto& p : paths) {
    const auto j = read_json_file(p);
    RunRecord r;
    try {
      r.algorithm = j.at("algorithm").get<std::string>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.protagonist = checkpoint_from_json(j.at("protagonist"));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("'" + p + "': " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("'" + p + "': " + e.what());
    }
    runs.push_back(std::move(r));
  }
  return runs;
}

inline std::string eval_summary_csv(const EvalReport& rep) {
  std::ostringstream os;
  os << "algorithm,seed,return_vs_trained_adversary,robustness_mean\n";
  const auto rm = rep.robustness_means();
  for (std::size_t i = 0; i < rep.seeds.size(); ++i)
    os << rep.algorithm << ',' << rep.seeds[i] << ',' << format_double(rep.return_vs_trained_adversary[i]) << ','
       << (i < rm.size() ? format_double(rm[i]) : std::string()) << '\n';
  return os.str();
}

}  // namespace detail

inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"quantal adversarial RL toolkit", "qarl_cli"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // solve-qre
  std::string payoff_path, qre_out;
  double tau = 1.0;
  std::optional<double> tau_col;
  bool anneal = false;
  auto* qre = app.add_subcommand("solve-qre", "logit QRE of a matrix game");
  qre->add_option("--payoff", payoff_path, "JSON payoff matrix (2-D array or {\"payoff\": ...})")->required();
  qre->add_option("--tau", tau, "row (and default column) temperature");
  qre->add_option("--tau-col", tau_col, "column temperature");
  qre->add_flag("--anneal", anneal, "anneal toward the Nash equilibrium instead");
  qre->add_option("--out", qre_out, "output file (default stdout)");

  // solve-game
  std::string game_path, game_out, export_path;
  double alpha = 1.0, beta = 1.0, tol = 1e-8;
  auto* sg = app.add_subcommand("solve-game", "soft QRE of a Markov game");
  sg->add_option("--game", game_path, "MarkovGame JSON, or an environment spec with a \"type\" field")->required();
  sg->add_option("--alpha", alpha, "adversary temperature");
  sg->add_option("--beta", beta, "protagonist temperature");
  sg->add_option("--tol", tol, "value iteration tolerance");
  sg->add_option("--export-game", export_path, "also write the game as MarkovGame JSON");
  sg->add_option("--out", game_out, "output file (default stdout)");

  // train / eval / sweep
  detail::CliOverrides train_o, eval_o, sweep_o;
  std::string train_dir = "out", eval_dir = "out", sweep_dir = "out";
  std::vector<std::string> eval_runs, sweep_runs;
  auto* train = app.add_subcommand("train", "train agents; writes RunRecord JSON and a CSV trace");
  detail::add_experiment_flags(train, train_o);
  train->add_option("--out", train_dir, "output directory");

  auto* eval = app.add_subcommand("eval", "trained-adversary and robustness evaluation of saved runs");
  detail::add_experiment_flags(eval, eval_o);
  eval->add_option("--run", eval_runs, "RunRecord JSON files")->required();
  eval->add_option("--out", eval_dir, "output directory");

  auto* sweep = app.add_subcommand("sweep", "robustness grid of saved runs");
  detail::add_experiment_flags(sweep, sweep_o);
  sweep->add_option("--run", sweep_runs, "RunRecord JSON files")->required();
  sweep->add_option("--out", sweep_dir, "output directory");

  // report
  std::string grid_csv_path, summary_csv_path, report_out, column, group = "algorithm", title;
  auto* report = app.add_subcommand("report", "SVG heatmap of a grid CSV or boxplots of a summary CSV");
  auto* grid_opt = report->add_option("--grid", grid_csv_path, "grid CSV from `sweep`");
  auto* summary_opt = report->add_option("--summary", summary_csv_path, "CSV with per-run values");
  grid_opt->excludes(summary_opt);
  report->add_option("--column", column, "value column for --summary");
  report->add_option("--group", group, "grouping column for --summary");
  report->add_option("--title", title, "heatmap title");
  report->add_option("--out", report_out, "SVG path (default: input path with .svg)");

  if (!args.empty() && !args.front().empty() && args.front()[0] != '-' && !app.get_subcommand_no_throw(args.front())) {
    err << "error: unknown subcommand '" << args.front() << "'\n\n" << app.help();
    return 1;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::Success& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*qre) {
      const MatrixGame g = matrix_game_from_json(read_json_file(payoff_path));
      const QreSolution sol =
          anneal ? solve_nash_by_annealing(g) : solve_logit_qre(g, tau, tau_col.value_or(tau));
      detail::emit(qre_out, to_json(sol).dump(2) + "\n", out);
    } else if (*sg) {
      const nlohmann::json j = read_json_file(game_path);
      std::optional<MarkovGame> game;
      if (j.is_object() && j.contains("type")) {
        game = make_environment(j)->game();
      } else {
        try {
          game = game_from_json(j);
        } catch (const InvariantError& e) {
          throw ConfigError("'" + game_path + "': " + e.what());
        }
      }
      if (!export_path.empty()) write_file_atomic(export_path, game_to_json(*game).dump() + "\n");
      const SoftSolution sol = solve_soft_markov_game(*game, alpha, beta, tol);
      detail::emit(game_out, to_json(sol).dump(2) + "\n", out);
    } else if (*train) {
      const ExperimentConfig cfg = detail::load_config(train_o);
      const auto env = environment_for(cfg);
      std::string trace = std::string(kTraceHeader) + "\n";
      for (std::uint64_t seed : cfg.seeds) {
        Trainer t(cfg, env, seed);
        const RunRecord r = t.run();
        const auto path = std::filesystem::path(train_dir) / detail::run_file_name(r);
        write_file_atomic(path, to_json(r).dump() + "\n");
        trace += trace_csv_rows(r);
        for (const auto& w : r.warnings) err << "warning: seed " << seed << ": " << w << "\n";
        out << "wrote " << path.string() << "\n";
      }
      const auto trace_path = std::filesystem::path(train_dir) / ("trace_" + std::string(to_string(cfg.algorithm)) + ".csv");
      write_file_atomic(trace_path, trace);
      write_file_atomic(std::filesystem::path(train_dir) / "config.json", to_json(cfg).dump(2) + "\n");
      out << "wrote " << trace_path.string() << "\n";
    } else if (*eval) {
      const ExperimentConfig cfg = detail::load_config(eval_o);
      auto runs = detail::load_runs(eval_runs);
      if (eval_o.seed)
        for (auto& r : runs) r.seed = *eval_o.seed;
      EvalReport rep = evaluate_runs(runs, cfg);
      if (!runs.empty()) rep.algorithm = runs.front().algorithm;
      const auto dir = std::filesystem::path(eval_dir);
      write_file_atomic(dir / ("eval_" + rep.algorithm + ".json"), to_json(rep).dump(2) + "\n");
      write_file_atomic(dir / ("eval_" + rep.algorithm + ".csv"), detail::eval_summary_csv(rep));
      out << "return vs trained adversary: mean " << EvalReport::mean(rep.return_vs_trained_adversary) << " std "
          << EvalReport::stddev(rep.return_vs_trained_adversary) << "\n";
    } else if (*sweep) {
      const ExperimentConfig cfg = detail::load_config(sweep_o);
      if (!cfg.sweep) throw ConfigError("'" + sweep_o.config + "': no sweep configured");
      const auto env = environment_for(cfg);
      for (const RunRecord& r : detail::load_runs(sweep_runs)) {
        const auto g = robustness_sweep(r.protagonist, *cfg.sweep, cfg, *env, sweep_o.seed.value_or(r.seed));
        const auto path =
            std::filesystem::path(sweep_dir) / ("grid_" + r.algorithm + "_seed" + std::to_string(r.seed) + ".csv");
        write_file_atomic(path, grid_csv(g));
        out << "wrote " << path.string() << " (mean " << g.mean() << ")\n";
      }
    } else if (*report) {
      std::string in = !grid_csv_path.empty() ? grid_csv_path : summary_csv_path;
      if (in.empty()) throw ConfigError("report needs --grid or --summary");
      std::ifstream f(in);
      if (!f) throw ConfigError("cannot open '" + in + "'");
      std::stringstream buf;
      buf << f.rdbuf();
      const CsvTable t = parse_csv(buf.str());
      std::string svg;
      if (!grid_csv_path.empty()) {
        svg = heatmap_svg(heatmap_from_csv(t), title.empty() ? "robustness" : title);
      } else {
        std::string col = column;
        if (col.empty()) {
          col = "mean_return";
          for (const auto& h : t.header)
            if (h == "return_vs_trained_adversary") col = h;
        }
        svg = boxplot_svg(t, col, group);
      }
      const std::string dest =
          report_out.empty() ? std::filesystem::path(in).replace_extension(".svg").string() : report_out;
      write_file_atomic(dest, svg);
      out << "wrote " << dest << "\n";
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(std::move(args));
}

}  // namespace qarl
