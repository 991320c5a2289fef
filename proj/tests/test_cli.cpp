#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "deiqt/checkpoint.hpp"
#include "deiqt/commands.hpp"

using namespace deiqt;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("deiqt_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

RunConfig toy_run(const fs::path& out) {
  RunConfig cfg;
  apply_config_text(cfg,
                    "patch_size = 4\ncrop = 12\ndim = 16\nheads = 2\nencoder_depth = 2\npanel_size = 3\n"
                    "epochs = 2\ndecay_every = 1\ncrops_per_image = 1\nbatch_size = 8\nbase_lr = 1e-3\n"
                    "eval_crops = 2\nn_base = 5\nlevels = 3\nimage_size = 16\nprecision = 64\n",
                    "toy");
  cfg.out = out.string();
  return cfg;
}

}  // namespace

TEST(Config, DefaultsFollowTheSchedule) {
  const RunConfig cfg;
  EXPECT_EQ(get_config_value(cfg, "epochs"), "9");
  EXPECT_EQ(std::stod(get_config_value(cfg, "base_lr")), 2e-4);
  EXPECT_EQ(get_config_value(cfg, "decay_every"), "3");
  EXPECT_EQ(get_config_value(cfg, "crops_per_image"), "10");
  EXPECT_EQ(get_config_value(cfg, "batch_size"), "16");
  EXPECT_EQ(get_config_value(cfg, "repeats"), "10");
  EXPECT_EQ(get_config_value(cfg, "fractions"), "0.2,0.4,0.6");
  EXPECT_EQ(get_config_value(cfg, "depths"), "1,2,4,8");
  for (const auto& k : config_keys()) EXPECT_FALSE(k.doc.empty()) << k.key;
}

TEST(Config, TextRoundTrip) {
  RunConfig a = toy_run("x");
  a.train.base_lr = 3.14159e-5;
  a.kinds = "white_noise,blockiness";
  RunConfig b;
  apply_config_text(b, config_text(a), "echo");
  EXPECT_EQ(config_text(b), config_text(a));
  EXPECT_EQ(parse_model_config(model_config_text(a.model)).dim, 16);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  RunConfig cfg;
  EXPECT_THROW(set_config_value(cfg, "learning_rate", "1"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "epochs", "nine"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "epochs", "9x"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "precision", "16"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "resume", "maybe"), ConfigError);
  try {
    apply_config_text(cfg, "# ok\nepochs = 3\nbogus = 1\n", "file.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("file.cfg:3"), std::string::npos) << e.what();
  }
  cfg = RunConfig{};
  cfg.fractions = "0.2,0.9";
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = RunConfig{};
  cfg.mode = "everything";
  EXPECT_THROW(validate(cfg), ConfigError);
  EXPECT_EQ(parse_kinds("all").size(), 4u);
  EXPECT_THROW(parse_kinds("gaussian_blur,jpeg"), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path dir = temp_dir("ck");
  Rng rng(1);
  const auto model = init_model<float>(ModelConfig::toy(), rng);
  TrainConfig tc;
  auto params = const_cast<DeiqtModel<float>&>(model).parameters();
  auto opt = make_optimizer_state<float>(params, tc);
  opt.first[0][0] = 0.25f;
  save_checkpoint(dir / "m.ckpt", make_checkpoint(model, 42, &opt));
  const Checkpoint ck = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ck.step, 42u);
  EXPECT_TRUE(ck.has_optimizer());
  const auto back = restore_model<float>(ck);
  const auto a = model.parameters();
  const auto b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].tensor->data, b[i].tensor->data) << a[i].name;
  const auto opt_back = restore_optimizer(ck, back, tc);
  EXPECT_EQ(opt_back.first[0][0], 0.25f);
  EXPECT_EQ(opt_back.step, 42);
  save_checkpoint(dir / "again.ckpt", make_checkpoint(back, 42, &opt_back));
  EXPECT_EQ(slurp(dir / "m.ckpt"), slurp(dir / "again.ckpt"));
}

TEST(Checkpoint, DistinctErrors) {
  const fs::path dir = temp_dir("ckerr");
  Rng rng(2);
  const auto model = init_model<double>(ModelConfig::toy(), rng);
  save_checkpoint(dir / "good.ckpt", make_checkpoint(model, 1));
  const std::string bytes = slurp(dir / "good.ckpt");
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream f(dir / name, std::ios::binary);
    f << content;
  };
  auto message = [&](const std::string& name) {
    try {
      load_checkpoint(dir / name);
    } catch (const CheckpointError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  write("magic.ckpt", "NOPE" + bytes.substr(4));
  std::string v2 = bytes;
  v2[4] = 2;
  write("version.ckpt", v2);
  write("short.ckpt", bytes.substr(0, bytes.size() - 7));
  write("long.ckpt", bytes + "x");
  EXPECT_NE(message("magic.ckpt").find("magic"), std::string::npos);
  EXPECT_NE(message("version.ckpt").find("version"), std::string::npos);
  EXPECT_NE(message("short.ckpt").find("truncated"), std::string::npos);
  EXPECT_NE(message("long.ckpt").find("trailing"), std::string::npos);
}

TEST(Checkpoint, ShapeMismatchNamesTensorAndLeavesModel) {
  ModelConfig wide = ModelConfig::toy();
  wide.dim = 24;
  wide.heads = 2;
  Rng rng(3);
  const auto big = init_model<double>(wide, rng);
  auto small = init_model<double>(ModelConfig::toy(), rng);
  const auto before = small.embed.cls_token.data;
  try {
    load_parameters(small, make_checkpoint(big, 0));
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("embed.patch_proj.weight"), std::string::npos) << e.what();
  }
  EXPECT_EQ(small.embed.cls_token.data, before);
  EXPECT_THROW(check_config(make_checkpoint(big, 0), ModelConfig::toy()), CheckpointError);
}

TEST(Checkpoint, EncoderOnlyLoadIgnoresHead) {
  Rng rng(4);
  ModelConfig enc = ModelConfig::toy();
  enc.variant = Variant::kEncoderOnly;
  const auto pretrained = init_model<double>(enc, rng);
  auto model = init_model<double>(ModelConfig::toy(), rng);
  const auto head_before = model.head.fc1.weight.data;
  load_parameters(model, make_checkpoint(pretrained, 0), true);
  EXPECT_EQ(model.encoder[1].mlp.fc2.weight.data, pretrained.encoder[1].mlp.fc2.weight.data);
  EXPECT_EQ(model.head.fc1.weight.data, head_before);
}

TEST(Commands, GenDataCountsAndDeterminism) {
  const fs::path dir = temp_dir("gen");
  RunConfig cfg;
  cfg.n_base = 3;
  cfg.image_size = 16;
  cfg.out = (dir / "a").string();
  cmd_gen_data(cfg);
  cfg.out = (dir / "b").string();
  cmd_gen_data(cfg);
  cfg.seed = 1;
  cfg.out = (dir / "c").string();
  cmd_gen_data(cfg);
  const std::string a = slurp(dir / "a" / "manifest.csv");
  EXPECT_EQ(a, slurp(dir / "b" / "manifest.csv"));
  EXPECT_EQ(slurp(dir / "a/images/b0002_blockiness_4.ppm"), slurp(dir / "b/images/b0002_blockiness_4.ppm"));
  EXPECT_NE(slurp(dir / "a/images/b0000_white_noise_2.ppm"), slurp(dir / "c/images/b0000_white_noise_2.ppm"));
  EXPECT_EQ(read_manifest(dir / "a" / "manifest.csv").size(), 60u);
  EXPECT_TRUE(fs::exists(dir / "a" / "config.txt"));
  EXPECT_EQ(RunConfig{}.n_base * 4 * RunConfig{}.levels, 2000);
}

TEST(Commands, TrainEvalResumeAndMismatch) {
  const fs::path dir = temp_dir("train");
  RunConfig cfg = toy_run(dir / "data");
  cmd_gen_data(cfg);
  cfg.manifest = (dir / "data" / "manifest.csv").string();
  cfg.out = (dir / "run").string();
  const std::string summary = cmd_train(cfg);
  EXPECT_NE(summary.find("test srcc="), std::string::npos) << summary;
  const std::string log = slurp(dir / "run" / "train_log.txt");
  EXPECT_NE(log.find("lr=0.001 "), std::string::npos);
  EXPECT_NE(log.find("lr=0.0001 "), std::string::npos);
  // 48 training images in batches of 8 for 2 epochs.
  EXPECT_EQ(load_checkpoint(dir / "run" / "model.ckpt").step, 12u);

  RunConfig ev = cfg;
  ev.checkpoint = (dir / "run" / "model.ckpt").string();
  ev.out = (dir / "ev1").string();
  cmd_eval(ev);
  ev.out = (dir / "ev2").string();
  cmd_eval(ev);
  EXPECT_EQ(slurp(dir / "ev1" / "eval_report.txt"), slurp(dir / "ev2" / "eval_report.txt"));

  RunConfig wrong = ev;
  wrong.model.dim = 8;
  EXPECT_THROW(cmd_eval(wrong), CheckpointError);

  {
    std::ofstream f(dir / "one.csv");
    f << "path,score,group\ndata/images/b0000_gaussian_blur_0.ppm,1,base0\n";
  }
  RunConfig single = ev;
  single.manifest = (dir / "one.csv").string();
  try {
    cmd_eval(single);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("n >= 2"), std::string::npos) << e.what();
  }

  RunConfig more = cfg;
  more.train.epochs = 3;
  more.resume = true;
  more.checkpoint = (dir / "run" / "model.ckpt").string();
  cmd_train(more);
  EXPECT_EQ(load_checkpoint(dir / "run" / "model.ckpt").step, 18u);
  EXPECT_NE(slurp(dir / "run" / "train_log.txt").find("step=12 epoch=2"), std::string::npos);
}

TEST(Commands, DiagnosticsWriteFiles) {
  const fs::path dir = temp_dir("diag");
  RunConfig cfg = toy_run(dir / "data");
  cmd_gen_data(cfg);
  cfg.manifest = (dir / "data" / "manifest.csv").string();
  cfg.out = (dir / "out").string();
  EXPECT_NE(cmd_gradcheck(cfg).find("max_rel_error="), std::string::npos);
  EXPECT_NE(cmd_panel_sim(cfg).find("row=2"), std::string::npos);
  cmd_attn_map(cfg);
  for (const char* f : {"gradcheck.txt", "panel_similarity.txt", "panel_similarity.svg", "attn_map.svg",
                        "attn_map.txt", "attn_overlay.ppm"}) {
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  }
  cfg.image = (dir / "missing.ppm").string();
  EXPECT_THROW(cmd_attn_map(cfg), IoError);
}

TEST(Protocol, StatisticsHelpers) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  const std::vector<double> v{1, 2, 3, 4};
  EXPECT_NEAR(sample_std(v), std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(sample_std(std::vector<double>{7}), 0.0);
}

TEST(Protocol, ModesHaveExpectedGroups) {
  RunConfig cfg = toy_run("unused");
  cfg.train.max_steps = 1;
  cfg.train.epochs = 1;
  cfg.repeats = 2;
  cfg.eval_crops = 1;
  Rng rng(5);
  const auto kinds = all_kinds();
  const Manifest data = gen_synthetic_dataset(10, 2, kinds, rng, 12);
  const std::map<std::string, std::vector<std::string>> expected{
      {"repeats", {"all"}},
      {"data-efficiency", {"fraction=0.2", "fraction=0.4", "fraction=0.6"}},
      {"depth-ablation", {"decoder_depth=1", "decoder_depth=2", "decoder_depth=4", "decoder_depth=8"}},
      {"component-ablation",
       {"variant=encoder-only", "variant=panel-no-decoder", "variant=decoder-random-queries",
        "variant=decoder-cls-queries", "variant=deiqt"}}};
  for (const auto& [mode, groups] : expected) {
    cfg.mode = mode;
    const ProtocolReport r = run_protocol(cfg, data);
    ASSERT_EQ(r.summaries.size(), groups.size()) << mode;
    EXPECT_EQ(r.runs.size(), groups.size() * 2) << mode;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      EXPECT_EQ(r.summaries[g].group, groups[g]);
      EXPECT_EQ(r.summaries[g].runs, 2u);
    }
    EXPECT_NE(r.runs[0].seed, r.runs[1].seed);
    if (mode == "data-efficiency") {
      EXPECT_EQ(r.runs[0].train_n, 2u * 4 * 2);
      EXPECT_EQ(r.runs[0].test_n, 2u * 4 * 2);
      EXPECT_EQ(r.runs.back().train_n, 6u * 4 * 2);
    }
  }
}
