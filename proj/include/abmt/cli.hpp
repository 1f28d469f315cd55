#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "abmt/bridge/bridge.hpp"
#include "abmt/bridge/udp.hpp"
#include "abmt/checkpoint.hpp"
#include "abmt/gradcheck.hpp"
#include "abmt/svg_plot.hpp"
#include "abmt/train.hpp"

namespace abmt::cli {

struct RunConfig {
  ScenarioConfig scenario = default_scenario();
  PpoConfig ppo;
  EncoderVariant variant = EncoderVariant::FlatMlp;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/out";
  bridge::BridgeConfig bridge;
};

inline bridge::BridgeConfig bridge_from_json(const nlohmann::json& j) {
  detail::require_keys(j,
                       {"channel", "gray_bits", "frame_period", "scale",
                        "oracle_localization", "robot"},
                       "bridge");
  bridge::BridgeConfig b;
  if (j.contains("channel")) {
    const auto& c = j["channel"];
    detail::require_keys(c,
                         {"kind", "capacity", "neighbor_radius",
                          "delivery_prob", "waypoint_delay"},
                         "bridge.channel");
    if (c.contains("kind")) {
      const std::string kind = c["kind"];
      if (kind == "central")
        b.channel.kind = bridge::ChannelKind::Central;
      else if (kind == "gossip")
        b.channel.kind = bridge::ChannelKind::Gossip;
      else
        throw ConfigError("bridge.channel.kind must be central or gossip");
    }
    if (c.contains("capacity")) b.channel.capacity = c["capacity"];
    if (c.contains("neighbor_radius"))
      b.channel.neighbor_radius = c["neighbor_radius"];
    if (c.contains("delivery_prob")) b.channel.delivery_prob = c["delivery_prob"];
    if (c.contains("waypoint_delay")) b.channel.waypoint_delay = c["waypoint_delay"];
  }
  if (j.contains("gray_bits")) b.gray_bits = j["gray_bits"];
  if (j.contains("frame_period")) b.frame_period = j["frame_period"];
  if (j.contains("scale")) b.scale = j["scale"];
  if (j.contains("oracle_localization"))
    b.oracle_localization = j["oracle_localization"];
  if (j.contains("robot")) {
    const auto& r = j["robot"];
    detail::require_keys(r,
                         {"wheel_base", "v_max", "omega_max",
                          "wheel_speed_max", "k_v", "k_omega", "deadband",
                          "dt"},
                         "bridge.robot");
    if (r.contains("wheel_base")) b.robot.wheel_base = r["wheel_base"];
    if (r.contains("v_max")) b.robot.v_max = r["v_max"];
    if (r.contains("omega_max")) b.robot.omega_max = r["omega_max"];
    if (r.contains("wheel_speed_max")) b.robot.wheel_speed_max = r["wheel_speed_max"];
    if (r.contains("k_v")) b.robot.k_v = r["k_v"];
    if (r.contains("k_omega")) b.robot.k_omega = r["k_omega"];
    if (r.contains("deadband")) b.robot.deadband = r["deadband"];
    if (r.contains("dt")) b.robot.dt = r["dt"];
  }
  b.validate();
  return b;
}

inline RunConfig load_run_config(const std::string& path) {
  if (!std::filesystem::exists(path))
    throw ConfigError("config file not found: " + path);
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config JSON parse error in " + path + ": " + e.what());
  }
  detail::require_keys(
      j, {"scenario", "ppo", "variant", "seed", "output_dir", "bridge"},
      "run config");
  RunConfig c;
  if (j.contains("scenario")) c.scenario = scenario_from_json(j["scenario"]);
  if (j.contains("ppo")) c.ppo = ppo_from_json(j["ppo"]);
  if (j.contains("variant")) c.variant = variant_from_name(j["variant"]);
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("output_dir")) c.output_dir = j["output_dir"];
  if (j.contains("bridge")) c.bridge = bridge_from_json(j["bridge"]);
  if (const char* env_dir = std::getenv("ABMT_OUTPUT_DIR"))
    c.output_dir = env_dir;
  return c;
}

inline void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::exists(path))
    throw ConfigError(what + " not found: " + path);
}

inline void ensure_parent_dir(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline void print_eval_report(const EvalReport& rep) {
  std::printf("episodes:         %d\n", rep.episodes);
  std::printf("mean return:      %.4f (std %.4f)\n", rep.mean_return,
              rep.std_return);
  std::printf("mean deliveries:  %.3f\n", rep.mean_deliveries);
  std::printf("mean collisions:  %.3f\n", rep.mean_collisions);
}

inline void write_eval_report_csv(const std::string& path,
                                  const EvalReport& rep) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write eval report: " + path);
  out << "episode,episode_return,deliveries,collisions\n";
  for (std::size_t i = 0; i < rep.rows.size(); ++i)
    out << i << ',' << format_double(rep.rows[i].episode_return) << ','
        << rep.rows[i].deliveries << ',' << rep.rows[i].collisions << '\n';
}

// Runs both variants over `n_seeds` seeds each at the configured budget and
// renders the three-panel comparison plot.
inline int run_compare(const RunConfig& cfg, int n_seeds,
                       const std::string& out_dir, bool verbose) {
  std::filesystem::create_directories(out_dir);
  for (EncoderVariant variant :
       {EncoderVariant::FlatMlp, EncoderVariant::Attention}) {
    for (int k = 0; k < n_seeds; ++k) {
      const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(k);
      const std::string run_dir =
          out_dir + "/" + variant_name(variant) + "_seed" + std::to_string(k);
      std::printf("[compare] %s seed %llu -> %s\n",
                  variant_name(variant).c_str(),
                  static_cast<unsigned long long>(seed), run_dir.c_str());
      std::fflush(stdout);
      train(cfg.scenario, cfg.ppo, variant, seed, run_dir, verbose);
    }
  }
  const auto series = load_metrics_dir(out_dir);
  const std::string plot_path = out_dir + "/comparison.svg";
  write_metrics_plot(plot_path, series);

  // Directional summary over the last quarter of each run (reported only;
  // desk-scale budgets are far below a converged comparison).
  for (const char* variant_cstr : {"ab-mappo", "mappo"}) {
    const std::string variant = variant_cstr;
    double ret = 0.0, del = 0.0, col = 0.0;
    long count = 0;
    for (const auto& s : series) {
      if (s.variant != variant) continue;
      const std::size_t from = s.rows.size() - std::max<std::size_t>(1, s.rows.size() / 4);
      for (std::size_t i = from; i < s.rows.size(); ++i) {
        ret += s.rows[i].mean_return;
        del += s.rows[i].deliveries;
        col += s.rows[i].collisions;
        ++count;
      }
    }
    if (count > 0)
      std::printf(
          "[compare] %-9s tail mean: return %8.3f, deliveries %6.2f, "
          "collisions %7.2f\n",
          variant.c_str(), ret / count, del / count, col / count);
  }
  std::printf("[compare] plot written to %s\n", plot_path.c_str());
  return 0;
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"multi-agent machine tending: simulation, MAPPO training, and "
               "a hardware-in-the-loop bridge"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, metrics_dir, out_path, channel_arg,
      variant_arg, transport_arg = "inproc";
  std::uint64_t seed_arg = 0;
  bool have_seed = false, deterministic = false, verbose = false;
  long steps_arg = 0, duration_ticks = 3000;
  int episodes = 8, draws = 100, n_seeds = 3;
  std::uint16_t port = 47555;

  auto* tr = app.add_subcommand("train", "train a policy on a scenario");
  tr->add_option("--config", config_path, "run config JSON")->required();
  tr->add_option("--seed", seed_arg, "seed override")->each([&](const std::string&) {
    have_seed = true;
  });
  tr->add_option("--out", out_path, "output directory override");
  tr->add_option("--variant", variant_arg, "mappo | ab-mappo");
  tr->add_option("--steps", steps_arg, "total env steps override");
  tr->add_flag("--verbose", verbose, "per-update progress lines");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--config", config_path, "run config JSON")->required();
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  ev->add_option("--episodes", episodes, "episodes to run");
  ev->add_flag("--deterministic", deterministic, "use the mean action");
  ev->add_option("--seed", seed_arg, "seed override")->each([&](const std::string&) {
    have_seed = true;
  });
  ev->add_option("--out", out_path, "per-episode CSV path");

  auto* br = app.add_subcommand("bridge", "hardware-in-the-loop bridge run");
  br->add_option("--config", config_path, "run config JSON")->required();
  br->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  br->add_option("--duration", duration_ticks, "robot ticks to run");
  br->add_option("--channel", channel_arg, "central | gossip");
  br->add_option("--seed", seed_arg, "seed override")->each([&](const std::string&) {
    have_seed = true;
  });
  br->add_option("--out", out_path, "trace CSV path");
  br->add_option("--transport", transport_arg,
                 "inproc (deterministic) | udp (wall-clock demo)");
  br->add_option("--port", port, "udp base port");

  auto* pl = app.add_subcommand("plot", "render the three-panel metrics plot");
  pl->add_option("--metrics", metrics_dir, "directory of metrics CSVs")->required();
  pl->add_option("--out", out_path, "output SVG path")->required();

  auto* gc = app.add_subcommand("gradcheck",
                                "finite-difference gradient verification");
  gc->add_option("--draws", draws, "draws per architecture");
  gc->add_option("--seed", seed_arg, "rng seed")->each([&](const std::string&) {
    have_seed = true;
  });

  auto* cp = app.add_subcommand(
      "compare", "train ab-mappo vs mappo over several seeds and plot");
  cp->add_option("--config", config_path, "run config JSON")->required();
  cp->add_option("--seeds", n_seeds, "seeds per variant");
  cp->add_option("--out", out_path, "output directory")->required();
  cp->add_option("--steps", steps_arg, "total env steps override per run");
  cp->add_flag("--verbose", verbose, "per-update progress lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (tr->parsed()) {
      RunConfig cfg = load_run_config(config_path);
      if (have_seed) cfg.seed = seed_arg;
      if (!out_path.empty()) cfg.output_dir = out_path;
      if (!variant_arg.empty()) cfg.variant = variant_from_name(variant_arg);
      if (steps_arg > 0) cfg.ppo.total_steps = steps_arg;
      const TrainOutput out = train(cfg.scenario, cfg.ppo, cfg.variant,
                                    cfg.seed, cfg.output_dir, verbose);
      std::printf("trained %d updates (%ld env steps)\n", out.updates, out.steps);
      std::printf("metrics: %s\n", out.metrics_path.c_str());
      std::printf("checkpoint: %s\n", out.final_checkpoint_path.c_str());
      return 0;
    }
    if (ev->parsed()) {
      RunConfig cfg = load_run_config(config_path);
      if (have_seed) cfg.seed = seed_arg;
      require_file(checkpoint_path, "checkpoint");
      Env env(cfg.scenario);
      PolicyBundle policy = load_checkpoint(checkpoint_path, env, cfg.ppo.arch());
      const EvalReport rep = evaluate(env, BundlePolicy{&policy, deterministic},
                                      episodes, cfg.seed);
      print_eval_report(rep);
      const std::string csv =
          out_path.empty() ? cfg.output_dir + "/eval_report.csv" : out_path;
      ensure_parent_dir(csv);
      write_eval_report_csv(csv, rep);
      std::printf("per-episode CSV: %s\n", csv.c_str());
      return 0;
    }
    if (br->parsed()) {
      RunConfig cfg = load_run_config(config_path);
      if (have_seed) cfg.seed = seed_arg;
      if (channel_arg == "central")
        cfg.bridge.channel.kind = bridge::ChannelKind::Central;
      else if (channel_arg == "gossip")
        cfg.bridge.channel.kind = bridge::ChannelKind::Gossip;
      else if (!channel_arg.empty())
        throw ConfigError("--channel must be central or gossip");
      require_file(checkpoint_path, "checkpoint");
      Env env(cfg.scenario);
      PolicyBundle policy = load_checkpoint(checkpoint_path, env, cfg.ppo.arch());
      if (transport_arg == "udp") {
        bridge::run_bridge_udp_demo(env, BundlePolicy{&policy, true},
                                    cfg.bridge, duration_ticks, cfg.seed, port);
        return 0;
      }
      if (transport_arg != "inproc")
        throw ConfigError("--transport must be inproc or udp");
      const auto result = bridge::run_bridge(
          env, BundlePolicy{&policy, true}, cfg.bridge, duration_ticks, cfg.seed);
      std::printf("bridge: %ld ticks, %ld sim steps, %ld sim deliveries\n",
                  result.ticks, result.sim_steps, result.sim_deliveries);
      for (std::size_t i = 0; i < result.robots.size(); ++i) {
        const auto& m = result.robots[i];
        std::printf(
            "  robot %zu: track err mean %.4f m / max %.4f m, pose age mean "
            "%.2f ticks, mirrored deliveries %ld\n",
            i, m.mean_track_err, m.max_track_err, m.mean_pose_age,
            m.mirrored_deliveries);
      }
      const std::string csv =
          out_path.empty() ? cfg.output_dir + "/bridge_trace.csv" : out_path;
      ensure_parent_dir(csv);
      bridge::write_bridge_csv(csv, result.trace);
      std::printf("trace CSV: %s\n", csv.c_str());
      return 0;
    }
    if (pl->parsed()) {
      require_file(metrics_dir, "metrics directory");
      const auto series = load_metrics_dir(metrics_dir);
      if (series.empty())
        throw ConfigError("no training metrics CSVs under " + metrics_dir);
      write_metrics_plot(out_path, series);
      std::printf("plot written to %s\n", out_path.c_str());
      return 0;
    }
    if (gc->parsed()) {
      const GradCheckReport rep = run_gradcheck(draws, have_seed ? seed_arg : 7);
      std::printf("gradcheck: %d draws/architecture, max relative error %.3e (%s)\n",
                  rep.draws / 3, rep.max_rel_err, rep.worst_case.c_str());
      return rep.max_rel_err < 1e-4 ? 0 : 2;
    }
    if (cp->parsed()) {
      RunConfig cfg = load_run_config(config_path);
      if (steps_arg > 0) cfg.ppo.total_steps = steps_arg;
      return run_compare(cfg, n_seeds, out_path, verbose);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime failure: %s\n", e.what());
    return 2;
  }
  return 1;
}

}  // namespace abmt::cli
