#include "deiqt/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "deiqt/checkpoint.hpp"
#include "deiqt/decoder.hpp"
#include "deiqt/gradcheck.hpp"
#include "deiqt/training.hpp"

namespace deiqt {

namespace fs = std::filesystem;

namespace {

fs::path prepare_out(const RunConfig& cfg) {
  validate(cfg);
  const fs::path out(cfg.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
  write_text(out / "config.txt", config_text(cfg));
  return out;
}

Manifest load_manifest(const std::string& path, const char* key) {
  if (path.empty()) throw ConfigError(std::string(key) + " is required");
  Manifest m = read_manifest(path);
  load_images(m, fs::path(path).parent_path());
  m.validate();
  return m;
}

std::string metrics_line(const char* what, const EvalReport& r) {
  return std::string(what) + " srcc=" + format_double(r.srcc) + " plcc=" + format_double(r.plcc) +
         " n=" + std::to_string(r.n) + "\n";
}

template <typename T>
DeiqtModel<T> model_for(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) {
    Rng rng(derive_seed(cfg.seed, 1));
    return init_model<T>(cfg.model, rng);
  }
  const Checkpoint ck = load_checkpoint(cfg.checkpoint);
  check_config(ck, cfg.model);
  return restore_model<T>(ck);
}

template <typename F>
decltype(auto) with_precision(const RunConfig& cfg, F&& f) {
  if (cfg.train.precision == Precision::kFloat64) return f(double{});
  return f(float{});
}

template <typename T>
std::string train_impl(const RunConfig& cfg, const fs::path& out) {
  const Manifest all = load_manifest(cfg.manifest, "manifest");
  Manifest train_set;
  Manifest test_set;
  if (cfg.test_manifest.empty()) {
    SplitResult s = split(all, cfg.train_frac, derive_seed(cfg.seed, 0));
    train_set = std::move(s.train);
    test_set = std::move(s.test);
  } else {
    train_set = all;
    test_set = load_manifest(cfg.test_manifest, "test_manifest");
  }

  const fs::path ck_path = cfg.checkpoint.empty() ? out / "model.ckpt" : fs::path(cfg.checkpoint);
  Rng init_rng(derive_seed(cfg.seed, 1));
  DeiqtModel<T> model = init_model<T>(cfg.model, init_rng);
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, 2);

  OptimizerState<T> opt = make_optimizer_state<T>(model.parameters(), tc);
  FitHooks<T> hooks;
  if (cfg.resume) {
    const Checkpoint ck = load_checkpoint(ck_path);
    check_config(ck, cfg.model);
    load_parameters(model, ck);
    if (ck.has_optimizer()) opt = restore_optimizer(ck, model, tc);
    hooks.start_step = static_cast<long>(ck.step);
  }
  hooks.optimizer = &opt;

  std::ofstream log_file(out / "train_log.txt", cfg.resume ? std::ios::app : std::ios::trunc);
  if (!log_file) throw IoError("cannot open " + (out / "train_log.txt").string());
  hooks.on_step = [&](const StepRecord& r) { log_file << format_step(r) << "\n"; };
  const TrainLog log = fit(model, train_set, tc, hooks);
  log_file.close();

  const std::uint64_t steps = static_cast<std::uint64_t>(hooks.start_step) + log.steps.size();
  save_checkpoint(ck_path, make_checkpoint(model, steps, &opt));

  const LabelScale scale = label_scale(train_set, tc.normalize_labels);
  auto report_for = [&](const Manifest& m, std::uint64_t seed) {
    EvalReport r = evaluate(model, m, cfg.eval_crops, seed);
    if (tc.normalize_labels) {
      for (double& y : r.labels) y = scale.apply(y);
      r = make_report(r.refs, r.predictions, r.labels);
    }
    return r;
  };
  const EvalReport train_report = report_for(train_set, derive_seed(cfg.seed, 3));
  write_text(out / "train_report.txt", format_report(train_report));
  std::string summary = "steps=" + std::to_string(steps) + " checkpoint=" + ck_path.string() + "\n";
  summary += metrics_line("train", train_report);
  if (test_set.size() >= 2) {
    const EvalReport test_report = report_for(test_set, derive_seed(cfg.seed, 4));
    write_text(out / "test_report.txt", format_report(test_report));
    write_text(out / "test_scatter.svg", svg_scatter(test_report.labels, test_report.predictions,
                                                     "test predictions", "label", "prediction"));
    summary += metrics_line("test", test_report);
  }
  if (!log.steps.empty()) {
    Series loss{"loss", {}, {}};
    for (const auto& r : log.steps) {
      loss.x.push_back(static_cast<double>(r.step));
      loss.y.push_back(r.loss);
    }
    write_text(out / "loss.svg", svg_lines(std::span<const Series>(&loss, 1), "training loss", "step", "loss"));
    write_text(out / "cls_grad_hist.txt", format_histogram(cls_grad_stats(log)));
  }
  return summary;
}

template <typename T>
RunRecord protocol_run(const RunConfig& cfg, const ModelConfig& model_cfg, const SplitResult& data,
                       std::uint64_t run_seed) {
  Rng init_rng(derive_seed(run_seed, 1));
  DeiqtModel<T> model = init_model<T>(model_cfg, init_rng);
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(run_seed, 2);
  fit(model, data.train, tc);
  const EvalReport r = evaluate(model, data.test, cfg.eval_crops, derive_seed(run_seed, 3));
  RunRecord rec;
  rec.seed = run_seed;
  rec.train_n = data.train.size();
  rec.test_n = data.test.size();
  rec.srcc = r.srcc;
  rec.plcc = r.plcc;
  return rec;
}

struct ProtocolGroup {
  std::string name;
  ModelConfig model;
  double fraction = 0.0;  // 0: plain split
};

std::vector<ProtocolGroup> protocol_groups(const RunConfig& cfg) {
  std::vector<ProtocolGroup> groups;
  if (cfg.mode == "repeats") {
    groups.push_back({"all", cfg.model, 0.0});
  } else if (cfg.mode == "data-efficiency") {
    for (double f : parse_double_list(cfg.fractions, "fractions")) {
      groups.push_back({"fraction=" + format_double(f), cfg.model, f});
    }
  } else if (cfg.mode == "depth-ablation") {
    for (int d : parse_int_list(cfg.depths, "depths")) {
      ModelConfig m = cfg.model;
      m.decoder_depth = d;
      groups.push_back({"decoder_depth=" + std::to_string(d), m, 0.0});
    }
  } else if (cfg.mode == "component-ablation") {
    for (Variant v : {Variant::kEncoderOnly, Variant::kPanelNoDecoder, Variant::kDecoderRandomQuery,
                      Variant::kDecoderClsQuery, Variant::kDeiqt}) {
      ModelConfig m = cfg.model;
      m.variant = v;
      if (v == Variant::kDecoderRandomQuery) m.panel_size = 1;
      groups.push_back({"variant=" + variant_name(v), m, 0.0});
    }
  } else {
    throw ConfigError("unknown protocol mode '" + cfg.mode + "'");
  }
  for (const auto& g : groups) g.model.validate();
  return groups;
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double sample_std(std::span<const double> values) {
  if (values.empty()) throw ContractError("standard deviation of an empty list");
  if (values.size() == 1) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

std::string cmd_gen_data(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  Rng rng(cfg.seed);
  const auto kinds = parse_kinds(cfg.kinds);
  Manifest m = gen_synthetic_dataset(cfg.n_base, cfg.levels, kinds, rng, cfg.image_size);
  std::error_code ec;
  fs::create_directories(out / "images", ec);
  if (ec) throw IoError("cannot create " + (out / "images").string() + ": " + ec.message());
  for (auto& s : m.samples) {
    s.image_ref = "images/" + s.image_ref;
    write_pnm(out / s.image_ref, *s.image);
  }
  write_manifest(out / "manifest.csv", m);
  return "samples=" + std::to_string(m.size()) + " groups=" + std::to_string(group_ids(m).size()) +
         " manifest=" + (out / "manifest.csv").string() + "\n";
}

std::string cmd_train(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  return with_precision(cfg, [&](auto tag) { return train_impl<decltype(tag)>(cfg, out); });
}

std::string cmd_eval(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  if (cfg.checkpoint.empty()) throw ConfigError("checkpoint is required");
  const Manifest m = load_manifest(cfg.manifest, "manifest");
  const EvalReport r = with_precision(cfg, [&](auto tag) {
    using T = decltype(tag);
    return evaluate(model_for<T>(cfg), m, cfg.eval_crops, cfg.seed);
  });
  write_text(out / "eval_report.txt", format_report(r));
  write_text(out / "eval_scatter.svg", svg_scatter(r.labels, r.predictions, "predictions", "label", "prediction"));
  return metrics_line("eval", r);
}

std::string cmd_gradcheck(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  Rng rng(derive_seed(cfg.seed, 1));
  DeiqtModel<double> model = init_model<double>(cfg.model, rng);
  const auto c = static_cast<std::size_t>(cfg.model.channels);
  const auto hw = static_cast<std::size_t>(cfg.model.crop);
  const Tensor<double> image = random_normal<double>({c, hw, hw}, rng);
  const double target = rng.uniform();
  const auto params = model.parameters();
  const GradCheckResult r = grad_check(
      [&](Tape<double>& t) { return smooth_l1_loss(predict(t, image, model).score, target, cfg.train.smooth_l1_beta); },
      params, cfg.grad_eps);
  std::string text = "max_rel_error=" + format_double(r.max_rel_error) + " worst=" + r.worst_param + "[" +
                     std::to_string(r.worst_index) + "] analytic=" + format_double(r.analytic) +
                     " numeric=" + format_double(r.numeric) + " elements=" + std::to_string(r.elements_checked) +
                     " tensors=" + std::to_string(params.size()) + "\n";
  write_text(out / "gradcheck.txt", text);
  return text;
}

std::string cmd_panel_sim(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const Manifest m = load_manifest(cfg.manifest, "manifest");
  const PanelDiagnostics d = with_precision(cfg, [&](auto tag) {
    using T = decltype(tag);
    return panel_cosine(model_for<T>(cfg), m);
  });
  const std::string text = format_panel(d);
  write_text(out / "panel_similarity.txt", text);
  write_text(out / "panel_similarity.svg", svg_heatmap(d.similarity, "panel cosine similarity"));
  return text;
}

std::string cmd_attn_map(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  std::string path = cfg.image;
  if (path.empty()) {
    if (cfg.manifest.empty()) throw ConfigError("image or manifest is required");
    const Manifest m = read_manifest(cfg.manifest);
    if (m.empty()) throw ConfigError("manifest " + cfg.manifest + " is empty");
    const fs::path ref(m.samples.front().image_ref);
    path = (ref.is_relative() ? fs::path(cfg.manifest).parent_path() / ref : ref).string();
  }
  const Image full = read_pnm(path);
  const auto hw = static_cast<std::size_t>(cfg.model.crop);
  if (full.shape[1] < hw || full.shape[2] < hw) {
    throw ContractError("image " + path + " is " + shape_str(full.shape) + ", smaller than the " +
                        std::to_string(hw) + "px crop: resize the image or configure a smaller crop");
  }
  const Image centre = crop(full, (full.shape[1] - hw) / 2, (full.shape[2] - hw) / 2, hw);
  const Tensor<double> map = with_precision(cfg, [&](auto tag) {
    using T = decltype(tag);
    return attention_map(model_for<T>(cfg), to_model_input<T>(centre));
  });
  Image overlay = centre;
  for (std::size_t ch = 0; ch < overlay.shape[0]; ++ch) {
    for (std::size_t i = 0; i < hw * hw; ++i) overlay.data[ch * hw * hw + i] *= 0.2 + 0.8 * map.data[i];
  }
  write_pnm(out / "attn_overlay.ppm", overlay);
  write_text(out / "attn_map.svg", svg_heatmap(map, "cross-attention"));
  std::ostringstream text;
  for (std::size_t y = 0; y < hw; ++y) {
    for (std::size_t x = 0; x < hw; ++x) text << (x ? " " : "") << format_double(map.data[y * hw + x]);
    text << "\n";
  }
  write_text(out / "attn_map.txt", text.str());
  return "attn_map=" + (out / "attn_map.txt").string() + " overlay=" + (out / "attn_overlay.ppm").string() + "\n";
}

ProtocolReport run_protocol(const RunConfig& cfg, const Manifest& data) {
  validate(cfg);
  if (cfg.repeats < 1) throw ConfigError("repeats must be at least 1");
  const std::vector<ProtocolGroup> groups = protocol_groups(cfg);
  const std::size_t total_groups = group_ids(data).size();

  ProtocolReport report;
  report.mode = cfg.mode;
  std::vector<SplitResult> splits;
  for (int r = 0; r < cfg.repeats; ++r) {
    const std::uint64_t s = derive_seed(cfg.seed, static_cast<std::uint64_t>(r));
    splits.push_back(split(data, cfg.mode == "data-efficiency" ? 0.8 : cfg.train_frac, derive_seed(s, 0)));
  }
  for (const ProtocolGroup& g : groups) {
    std::vector<double> s_values;
    std::vector<double> p_values;
    for (int r = 0; r < cfg.repeats; ++r) {
      const std::uint64_t s = derive_seed(cfg.seed, static_cast<std::uint64_t>(r));
      SplitResult run_data;
      if (g.fraction > 0.0) {
        const auto n = static_cast<std::size_t>(std::lround(g.fraction * static_cast<double>(total_groups)));
        if (n == 0) throw ConfigError("fraction " + format_double(g.fraction) + " selects no groups");
        run_data.train = take_groups(splits[r].train, n, derive_seed(s, 5));
        run_data.test = splits[r].test;
      } else {
        run_data = splits[r];
      }
      RunRecord rec = with_precision(cfg, [&](auto tag) {
        return protocol_run<decltype(tag)>(cfg, g.model, run_data, s);
      });
      rec.group = g.name;
      rec.index = r;
      s_values.push_back(rec.srcc);
      p_values.push_back(rec.plcc);
      report.runs.push_back(std::move(rec));
    }
    report.summaries.push_back({g.name, s_values.size(), median(s_values), median(p_values), sample_std(s_values),
                                sample_std(p_values)});
  }
  return report;
}

std::string format_protocol(const ProtocolReport& report) {
  std::string out;
  for (const RunRecord& r : report.runs) {
    out += "run mode=" + report.mode + " group=" + r.group + " index=" + std::to_string(r.index) +
           " seed=" + std::to_string(r.seed) + " train_n=" + std::to_string(r.train_n) +
           " test_n=" + std::to_string(r.test_n) + " srcc=" + format_double(r.srcc) +
           " plcc=" + format_double(r.plcc) + "\n";
  }
  for (const GroupSummary& s : report.summaries) {
    out += "summary mode=" + report.mode + " group=" + s.group + " runs=" + std::to_string(s.runs) +
           " median_srcc=" + format_double(s.median_srcc) + " median_plcc=" + format_double(s.median_plcc) +
           " std_srcc=" + format_double(s.std_srcc) + " std_plcc=" + format_double(s.std_plcc) + "\n";
  }
  return out;
}

std::string cmd_protocol(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const Manifest data = load_manifest(cfg.manifest, "manifest");
  const std::string text = format_protocol(run_protocol(cfg, data));
  write_text(out / ("protocol_" + cfg.mode + ".txt"), text);
  return text;
}

}  // namespace deiqt
