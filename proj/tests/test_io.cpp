#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "abmt/checkpoint.hpp"
#include "abmt/cli.hpp"
#include "abmt/eval.hpp"
#include "abmt/metrics_io.hpp"
#include "abmt/svg_plot.hpp"

namespace {

using namespace abmt;

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

class TmpDir {
 public:
  explicit TmpDir(const std::string& name)
      : path_("/tmp/abmt_io_" + name) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  const std::string& str() const { return path_; }
  std::string file(const std::string& name) const { return path_ + "/" + name; }

 private:
  std::string path_;
};

TEST(Checkpoint, RoundTripPreservesEvaluation) {
  TmpDir dir("ckpt_roundtrip");
  const Env env(reduced_scenario());
  PolicyBundle bundle =
      PolicyBundle::create(env, EncoderVariant::FlatMlp, PolicyArch{}, 3);
  const std::uint64_t fp = scenario_fingerprint(env.config());
  const std::string path = dir.file("a.abmt");
  save_checkpoint(bundle, fp, path);
  PolicyBundle loaded = load_checkpoint(path, env, PolicyArch{});

  // The saved file stores 32-bit floats; the loaded bundle must evaluate
  // identically to the original truncated the same way.
  const PolicyBundle truncated = bundle.truncated_to_f32();
  const EvalReport a = evaluate(env, BundlePolicy{&truncated, true}, 2, 5);
  const EvalReport b = evaluate(env, BundlePolicy{&loaded, true}, 2, 5);
  EXPECT_EQ(a.mean_return, b.mean_return);
  EXPECT_EQ(a.mean_deliveries, b.mean_deliveries);

  // Save(load(save(x))) is byte-identical to save(x).
  const std::string path2 = dir.file("b.abmt");
  save_checkpoint(loaded, fp, path2);
  EXPECT_EQ(slurp(path), slurp(path2));
}

TEST(Checkpoint, AttentionVariantRoundTrips) {
  TmpDir dir("ckpt_attn");
  const Env env(default_scenario());
  PolicyArch arch;
  arch.embed_dim = 16;
  arch.heads = 2;
  arch.hidden_dim = 16;
  PolicyBundle bundle =
      PolicyBundle::create(env, EncoderVariant::Attention, arch, 4);
  const std::string path = dir.file("attn.abmt");
  save_checkpoint(bundle, scenario_fingerprint(env.config()), path);
  const CheckpointHeader h = read_checkpoint_header(path);
  EXPECT_EQ(h.variant, EncoderVariant::Attention);
  PolicyBundle loaded = load_checkpoint(path, env, arch);
  for (int i = 0; i < bundle.params().size(); ++i) {
    const Tensor& t = bundle.params().tensor(i);
    const Tensor& l = loaded.params().by_name(bundle.params().name(i));
    for (long k = 0; k < t.numel(); ++k)
      ASSERT_EQ(static_cast<float>(t.v[k]), static_cast<float>(l.v[k]));
  }
}

TEST(Checkpoint, CorruptMagicNamesField) {
  TmpDir dir("ckpt_magic");
  const Env env(reduced_scenario());
  PolicyBundle bundle =
      PolicyBundle::create(env, EncoderVariant::FlatMlp, PolicyArch{}, 3);
  const std::string path = dir.file("x.abmt");
  save_checkpoint(bundle, scenario_fingerprint(env.config()), path);
  std::string bytes = slurp(path);
  bytes[0] = 'Z';
  std::ofstream(path, std::ios::binary) << bytes;
  try {
    load_checkpoint(path, env, PolicyArch{});
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
}

TEST(Checkpoint, TruncationNamesField) {
  TmpDir dir("ckpt_trunc");
  const Env env(reduced_scenario());
  PolicyBundle bundle =
      PolicyBundle::create(env, EncoderVariant::FlatMlp, PolicyArch{}, 3);
  const std::string path = dir.file("x.abmt");
  save_checkpoint(bundle, scenario_fingerprint(env.config()), path);
  std::string bytes = slurp(path);
  bytes.resize(bytes.size() / 2);
  std::ofstream(path, std::ios::binary) << bytes;
  try {
    load_checkpoint(path, env, PolicyArch{});
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(Checkpoint, ScenarioFingerprintMismatchRejected) {
  TmpDir dir("ckpt_fp");
  ScenarioConfig three = default_scenario();
  ScenarioConfig two = default_scenario();
  two.n_agents = 2;
  const Env env3(three);
  const Env env2(two);
  PolicyBundle bundle =
      PolicyBundle::create(env3, EncoderVariant::FlatMlp, PolicyArch{}, 3);
  const std::string path = dir.file("x.abmt");
  save_checkpoint(bundle, scenario_fingerprint(three), path);
  try {
    load_checkpoint(path, env2, PolicyArch{});
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("scenario_fingerprint"),
              std::string::npos);
  }
}

TEST(Checkpoint, UnknownTensorNameRejected) {
  TmpDir dir("ckpt_name");
  const Env env(reduced_scenario());
  PolicyBundle flat =
      PolicyBundle::create(env, EncoderVariant::FlatMlp, PolicyArch{}, 3);
  const std::string path = dir.file("x.abmt");
  save_checkpoint(flat, scenario_fingerprint(env.config()), path);
  // Loading against an attention-arch bundle hits an unknown tensor name
  // immediately (the stored variant tag is part of the file, so fake it).
  std::string bytes = slurp(path);
  bytes[8] = 1;  // variant tag: attention
  std::ofstream(path, std::ios::binary) << bytes;
  try {
    load_checkpoint(path, env, PolicyArch{});
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown tensor name"),
              std::string::npos);
  }
}

TEST(MetricsCsv, EmptyRunIsHeaderOnly) {
  TmpDir dir("csv_empty");
  const std::string path = dir.file("m.csv");
  write_train_csv(path, {});
  EXPECT_EQ(slurp(path), std::string(kTrainCsvHeader) + "\n");
  EXPECT_TRUE(read_train_csv(path).empty());
}

TEST(MetricsCsv, RowsParseBackExactly) {
  TmpDir dir("csv_roundtrip");
  std::vector<TrainRow> rows;
  Rng rng(1);
  for (int i = 0; i < 25; ++i) {
    TrainRow r;
    r.step = 2048L * (i + 1);
    r.update = i + 1;
    r.mean_return = rng.normal() * 17.0;
    r.deliveries = rng.uniform() * 9;
    r.collisions = rng.uniform() * 40;
    r.policy_loss = rng.normal() * 0.01;
    r.value_loss = rng.uniform() * 3;
    r.entropy = rng.normal();
    r.clip_frac = rng.uniform();
    r.approx_kl = rng.uniform() * 0.1;
    rows.push_back(r);
  }
  const std::string path = dir.file("m.csv");
  write_train_csv(path, rows);
  const auto back = read_train_csv(path);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].step, rows[i].step);
    EXPECT_EQ(back[i].update, rows[i].update);
    EXPECT_EQ(back[i].mean_return, rows[i].mean_return);
    EXPECT_EQ(back[i].deliveries, rows[i].deliveries);
    EXPECT_EQ(back[i].collisions, rows[i].collisions);
    EXPECT_EQ(back[i].policy_loss, rows[i].policy_loss);
    EXPECT_EQ(back[i].value_loss, rows[i].value_loss);
    EXPECT_EQ(back[i].entropy, rows[i].entropy);
    EXPECT_EQ(back[i].clip_frac, rows[i].clip_frac);
    EXPECT_EQ(back[i].approx_kl, rows[i].approx_kl);
  }
  // LF endings, no CR anywhere.
  EXPECT_EQ(slurp(path).find('\r'), std::string::npos);
}

TEST(MetricsCsv, RewriteIsByteIdentical) {
  TmpDir dir("csv_bytes");
  std::vector<TrainRow> rows(3);
  rows[1].mean_return = 1.0 / 3.0;
  rows[2].approx_kl = 1e-17;
  write_train_csv(dir.file("a.csv"), rows);
  write_train_csv(dir.file("b.csv"), rows);
  EXPECT_EQ(slurp(dir.file("a.csv")), slurp(dir.file("b.csv")));
}

TEST(SvgPlot, PureFunctionOfInputs) {
  std::vector<PlotSeries> runs(4);
  Rng rng(2);
  for (int i = 0; i < 4; ++i) {
    runs[static_cast<std::size_t>(i)].variant = i < 2 ? "mappo" : "ab-mappo";
    for (int u = 0; u < 10; ++u) {
      TrainRow r;
      r.step = 100L * (u + 1);
      r.update = u + 1;
      r.mean_return = rng.normal();
      r.deliveries = rng.uniform() * 4;
      r.collisions = rng.uniform() * 10;
      runs[static_cast<std::size_t>(i)].rows.push_back(r);
    }
  }
  const std::string a = render_metrics_svg(runs);
  const std::string b = render_metrics_svg(runs);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.find("episode return"), std::string::npos);
  EXPECT_NE(a.find("delivered parts"), std::string::npos);
  EXPECT_NE(a.find("collisions"), std::string::npos);
  EXPECT_NE(a.find("#1f77b4"), std::string::npos);  // ab-mappo line
  EXPECT_NE(a.find("#d62728"), std::string::npos);  // mappo line
}

TEST(SvgPlot, LoadsMetricsDirectoryGroupedByVariant) {
  TmpDir dir("plot_dir");
  std::vector<TrainRow> rows(4);
  for (int i = 0; i < 4; ++i) {
    rows[static_cast<std::size_t>(i)].step = 10 * (i + 1);
    rows[static_cast<std::size_t>(i)].update = i + 1;
  }
  write_train_csv(dir.file("mappo_seed0.csv"), rows);
  write_train_csv(dir.file("mappo_seed1.csv"), rows);
  write_train_csv(dir.file("ab-mappo_seed0.csv"), rows);
  std::ofstream(dir.file("eval.csv")) << "not,a,metrics,file\n";
  const auto series = load_metrics_dir(dir.str());
  ASSERT_EQ(series.size(), 3u);
  int mappo = 0, ab = 0;
  for (const auto& s : series) {
    if (s.variant == "mappo") ++mappo;
    if (s.variant == "ab-mappo") ++ab;
  }
  EXPECT_EQ(mappo, 2);
  EXPECT_EQ(ab, 1);
  // Subdirectory metrics.csv get the parent directory's label.
  std::filesystem::create_directories(dir.file("ab-mappo_seed7"));
  write_train_csv(dir.file("ab-mappo_seed7") + "/metrics.csv", rows);
  const auto series2 = load_metrics_dir(dir.str());
  ASSERT_EQ(series2.size(), 4u);
}

int cli(std::vector<std::string> args) {
  std::vector<const char*> argv{"abmt"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return abmt::cli::run(static_cast<int>(argv.size()), argv.data());
}

TEST(Cli, UnknownFlagExitsOne) {
  EXPECT_EQ(cli({"train", "--config", "/tmp/nonexistent.json", "--bogus"}), 1);
  EXPECT_EQ(cli({"nonsense"}), 1);
}

TEST(Cli, MissingFilesExitOne) {
  EXPECT_EQ(cli({"train", "--config", "/tmp/definitely_missing_abmt.json"}), 1);
  EXPECT_EQ(cli({"plot", "--metrics", "/tmp/missing_abmt_dir", "--out",
                 "/tmp/x.svg"}),
            1);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(cli({"--help"}), 0); }

TEST(Cli, GradcheckSubcommandPasses) {
  EXPECT_EQ(cli({"gradcheck", "--draws", "3"}), 0);
}

TEST(Cli, TrainEvalBridgePlotPipeline) {
  TmpDir dir("cli_pipeline");
  const std::string cfg_path = dir.file("cfg.json");
  {
    nlohmann::json j;
    j["scenario"] = scenario_to_json(reduced_scenario());
    j["ppo"] = {{"total_steps", 64},   {"rollout_len", 8},
                {"n_envs", 4},         {"minibatches", 2},
                {"epochs", 1},         {"eval_interval", 0},
                {"checkpoint_interval", 0}};
    j["variant"] = "mappo";
    j["seed"] = 3;
    j["output_dir"] = dir.file("run");
    std::ofstream(cfg_path) << j.dump(2);
  }
  EXPECT_EQ(cli({"train", "--config", cfg_path}), 0);
  EXPECT_TRUE(std::filesystem::exists(dir.file("run/metrics.csv")));
  EXPECT_TRUE(std::filesystem::exists(dir.file("run/checkpoint_final.abmt")));

  EXPECT_EQ(cli({"eval", "--config", cfg_path, "--checkpoint",
                 dir.file("run/checkpoint_final.abmt"), "--episodes", "2",
                 "--deterministic", "--out", dir.file("eval.csv")}),
            0);
  EXPECT_TRUE(std::filesystem::exists(dir.file("eval.csv")));

  EXPECT_EQ(cli({"bridge", "--config", cfg_path, "--checkpoint",
                 dir.file("run/checkpoint_final.abmt"), "--duration", "100",
                 "--channel", "central", "--out", dir.file("trace.csv")}),
            0);
  EXPECT_TRUE(std::filesystem::exists(dir.file("trace.csv")));

  EXPECT_EQ(cli({"plot", "--metrics", dir.file("run"), "--out",
                 dir.file("plot.svg")}),
            0);
  const std::string svg = slurp(dir.file("plot.svg"));
  EXPECT_NE(svg.find("<svg"), std::string::npos);

  // Checkpoint against a different scenario exits with a runtime failure.
  const std::string cfg2_path = dir.file("cfg2.json");
  {
    nlohmann::json j;
    j["scenario"] = scenario_to_json(default_scenario());
    j["variant"] = "mappo";
    j["seed"] = 3;
    j["output_dir"] = dir.file("run2");
    std::ofstream(cfg2_path) << j.dump(2);
  }
  EXPECT_EQ(cli({"eval", "--config", cfg2_path, "--checkpoint",
                 dir.file("run/checkpoint_final.abmt"), "--episodes", "1"}),
            2);
}

TEST(Cli, BadConfigKeyExitsOne) {
  TmpDir dir("cli_badkey");
  const std::string cfg_path = dir.file("bad.json");
  std::ofstream(cfg_path) << R"({"scenariooo": {}})";
  EXPECT_EQ(cli({"train", "--config", cfg_path}), 1);
}

TEST(Cli, OutputDirEnvOverride) {
  TmpDir dir("cli_envdir");
  const std::string cfg_path = dir.file("cfg.json");
  {
    nlohmann::json j;
    j["scenario"] = scenario_to_json(reduced_scenario());
    j["ppo"] = {{"total_steps", 16}, {"rollout_len", 4}, {"n_envs", 4},
                {"minibatches", 2},  {"epochs", 1},      {"eval_interval", 0}};
    j["variant"] = "mappo";
    j["seed"] = 1;
    j["output_dir"] = dir.file("ignored");
    std::ofstream(cfg_path) << j.dump(2);
  }
  ::setenv("ABMT_OUTPUT_DIR", dir.file("overridden").c_str(), 1);
  EXPECT_EQ(cli({"train", "--config", cfg_path}), 0);
  ::unsetenv("ABMT_OUTPUT_DIR");
  EXPECT_TRUE(std::filesystem::exists(dir.file("overridden/metrics.csv")));
  EXPECT_FALSE(std::filesystem::exists(dir.file("ignored")));
}

}  // namespace
