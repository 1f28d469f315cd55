#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "abmt/checkpoint.hpp"
#include "abmt/eval.hpp"
#include "abmt/metrics_io.hpp"
#include "abmt/ppo.hpp"

namespace abmt {

struct EvalCsvRow {
  int update = 0;
  long step = 0;
  EvalReport report;
};

struct TrainOutput {
  std::vector<TrainRow> metrics;
  std::vector<EvalCsvRow> evals;
  std::string metrics_path;
  std::string final_checkpoint_path;
  int updates = 0;
  long steps = 0;
};

inline void write_eval_csv(const std::string& path,
                           const std::vector<EvalCsvRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write eval CSV: " + path);
  out << "update,step,episodes,mean_return,std_return,mean_deliveries,"
         "mean_collisions\n";
  for (const auto& r : rows) {
    out << r.update << ',' << r.step << ',' << r.report.episodes << ','
        << format_double(r.report.mean_return) << ','
        << format_double(r.report.std_return) << ','
        << format_double(r.report.mean_deliveries) << ','
        << format_double(r.report.mean_collisions) << '\n';
  }
}

// Full MAPPO / AB-MAPPO training run: alternates rollout collection, GAE and
// clipped PPO updates until the environment-step budget is exhausted. Writes
// metrics.csv, eval.csv and periodic checkpoints into `out_dir`. Everything
// is a pure function of (configs, variant, seed).
inline TrainOutput train(const ScenarioConfig& scenario, const PpoConfig& ppo,
                         EncoderVariant variant, std::uint64_t seed,
                         const std::string& out_dir, bool verbose = false) {
  scenario.validate();
  ppo.validate();
  std::filesystem::create_directories(out_dir);

  const Env env(scenario);
  PolicyBundle policy = PolicyBundle::create(env, variant, ppo.arch(), seed);
  Adam adam(policy.params(),
            AdamConfig{ppo.lr, 0.9, 0.999, 1e-8, ppo.grad_clip,
                       ppo.max_grad_norm});
  BatchEnv envs(env, ppo.n_envs, seed);
  Rng sample_rng(seed, /*stream=*/0x61637431);
  Rng shuffle_rng(seed, /*stream=*/0x73687566);
  const std::uint64_t fp = scenario_fingerprint(scenario);

  TrainOutput out;
  out.metrics_path = out_dir + "/metrics.csv";
  const long steps_per_update =
      static_cast<long>(ppo.rollout_len) * ppo.n_envs;

  while (out.steps < ppo.total_steps) {
    RolloutBuffer buf = collect_rollout(envs, policy, ppo.rollout_len, sample_rng);
    compute_gae(buf, ppo.gamma, ppo.gae_lambda);
    const UpdateStats stats = ppo_update(buf, policy, adam, ppo, shuffle_rng);
    out.steps += steps_per_update;
    out.updates += 1;

    TrainRow row;
    row.step = out.steps;
    row.update = out.updates;
    const auto& window = envs.completed_window();
    if (!window.empty()) {
      double ret = 0.0, del = 0.0, col = 0.0;
      for (const auto& ep : window) {
        ret += ep.mean_return;
        del += static_cast<double>(ep.deliveries);
        col += static_cast<double>(ep.collisions);
      }
      const double inv = 1.0 / static_cast<double>(window.size());
      row.mean_return = ret * inv;
      row.deliveries = del * inv;
      row.collisions = col * inv;
    }
    row.policy_loss = stats.policy_loss;
    row.value_loss = stats.value_loss;
    row.entropy = stats.entropy;
    row.clip_frac = stats.clip_frac;
    row.approx_kl = stats.approx_kl;
    out.metrics.push_back(row);

    if (verbose) {
      std::printf(
          "update %4d  step %8ld  return %8.3f  deliveries %6.2f  "
          "collisions %7.2f  pi_loss %8.5f  v_loss %9.4f  kl %.5f\n",
          out.updates, out.steps, row.mean_return, row.deliveries,
          row.collisions, row.policy_loss, row.value_loss, row.approx_kl);
      std::fflush(stdout);
    }

    if (ppo.eval_interval > 0 && out.updates % ppo.eval_interval == 0) {
      Rng eval_seed_rng = Rng(seed, /*stream=*/0x6576616c).split(
          static_cast<std::uint64_t>(out.updates));
      EvalCsvRow er;
      er.update = out.updates;
      er.step = out.steps;
      er.report = evaluate(env, BundlePolicy{&policy, true}, ppo.eval_episodes,
                           eval_seed_rng.next_u64());
      out.evals.push_back(er);
    }
    if (ppo.checkpoint_interval > 0 &&
        out.updates % ppo.checkpoint_interval == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "/checkpoint_%06d.abmt", out.updates);
      save_checkpoint(policy, fp, out_dir + name);
    }
  }

  out.final_checkpoint_path = out_dir + "/checkpoint_final.abmt";
  save_checkpoint(policy, fp, out.final_checkpoint_path);
  write_train_csv(out.metrics_path, out.metrics);
  write_eval_csv(out_dir + "/eval.csv", out.evals);
  return out;
}

}  // namespace abmt
