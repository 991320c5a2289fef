#include "deiqt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "deiqt/decoder.hpp"

namespace deiqt {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw ContractError(std::string(what) + ": length mismatch " + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
  }
  if (a.size() < 2) throw ContractError(std::string(what) + ": need n >= 2, got " + std::to_string(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw NonFiniteError(std::string(what) + ": non-finite input");
  }
}

double pearson(std::span<const double> a, std::span<const double> b, const char* what) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw ContractError(std::string(what) + ": zero variance, correlation undefined");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double srcc(std::span<const double> pred, std::span<const double> label) {
  check_pair(pred, label, "srcc");
  const auto rp = average_ranks(pred);
  const auto rl = average_ranks(label);
  return pearson(rp, rl, "srcc");
}

double plcc(std::span<const double> pred, std::span<const double> label) {
  check_pair(pred, label, "plcc");
  return pearson(pred, label, "plcc");
}

EvalReport make_report(std::vector<std::string> refs, std::vector<double> predictions, std::vector<double> labels) {
  EvalReport r;
  r.srcc = srcc(predictions, labels);
  r.plcc = plcc(predictions, labels);
  r.n = predictions.size();
  r.refs = std::move(refs);
  r.predictions = std::move(predictions);
  r.labels = std::move(labels);
  return r;
}

template <typename T>
std::vector<double> predict_images(const DeiqtModel<T>& model, const Manifest& manifest, int crops_per_image,
                                   std::uint64_t seed) {
  if (manifest.empty()) throw ContractError("evaluate: empty manifest");
  const int hw = model.config.crop;
  std::vector<double> out;
  out.reserve(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const Sample& s = manifest.samples[i];
    if (!s.image) throw ContractError("evaluate: image not loaded for " + s.image_ref);
    Rng rng(derive_seed(seed, i));
    double total = 0.0;
    for (const auto& w : crop_windows(s.image->shape[1], s.image->shape[2], crops_per_image, hw, rng)) {
      total += predict(model, to_model_input<T>(crop(*s.image, w.top, w.left, hw))).score;
    }
    out.push_back(total / crops_per_image);
  }
  return out;
}

template <typename T>
EvalReport evaluate(const DeiqtModel<T>& model, const Manifest& manifest, int crops_per_image, std::uint64_t seed) {
  std::vector<double> preds = predict_images(model, manifest, crops_per_image, seed);
  std::vector<std::string> refs;
  std::vector<double> labels;
  for (const auto& s : manifest.samples) {
    refs.push_back(s.image_ref);
    labels.push_back(s.score);
  }
  return make_report(std::move(refs), std::move(preds), std::move(labels));
}

std::string format_report(const EvalReport& r) {
  std::string out;
  for (std::size_t i = 0; i < r.n; ++i) {
    out += "pred=" + fmt("%.17g", r.predictions[i]) + " label=" + fmt("%.17g", r.labels[i]) + " ref=" + r.refs[i] +
           "\n";
  }
  out += "srcc=" + fmt("%.17g", r.srcc) + " plcc=" + fmt("%.17g", r.plcc) + " n=" + std::to_string(r.n) + "\n";
  return out;
}

double PanelDiagnostics::mean_off_diagonal() const {
  const std::size_t l = similarity.rows();
  if (l < 2) throw ContractError("mean_off_diagonal: need at least two panel members");
  double total = 0.0;
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = 0; j < l; ++j) {
      if (i != j) total += similarity.at(i, j);
    }
  }
  return total / static_cast<double>(l * (l - 1));
}

Tensor<double> cosine_matrix(const Tensor<double>& rows) {
  if (rows.rank() != 2) throw ShapeError("cosine_matrix: expected [L x D], got " + shape_str(rows.shape));
  const std::size_t l = rows.rows(), d = rows.cols();
  std::vector<double> norms(l);
  for (std::size_t i = 0; i < l; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += rows.at(i, k) * rows.at(i, k);
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0)) throw NonFiniteError("cosine_matrix: zero-norm embedding in row " + std::to_string(i));
  }
  Tensor<double> out({l, l}, 0.0);
  for (std::size_t i = 0; i < l; ++i) {
    out.at(i, i) = 1.0;
    for (std::size_t j = i + 1; j < l; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += rows.at(i, k) * rows.at(j, k);
      const double c = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      out.at(i, j) = c;
      out.at(j, i) = c;
    }
  }
  return out;
}

template <typename T>
PanelDiagnostics panel_cosine(const DeiqtModel<T>& model, const Manifest& manifest) {
  if (manifest.empty()) throw ContractError("panel_cosine: empty manifest");
  const std::size_t hw = model.config.crop;
  const std::size_t l = model.config.query_rows();
  PanelDiagnostics diag;
  diag.similarity = Tensor<double>({l, l}, 0.0);
  for (const auto& s : manifest.samples) {
    if (!s.image) throw ContractError("panel_cosine: image not loaded for " + s.image_ref);
    const std::size_t h = s.image->shape[1], w = s.image->shape[2];
    if (h < hw || w < hw) throw ContractError("panel_cosine: image " + s.image_ref + " smaller than crop");
    const Prediction<T> p = predict(model, to_model_input<T>(crop(*s.image, (h - hw) / 2, (w - hw) / 2, hw)));
    const Tensor<double> sim = cosine_matrix(p.quality_embeddings.template cast<double>());
    for (std::size_t k = 0; k < sim.numel(); ++k) diag.similarity.data[k] += sim.data[k];
    const auto [lo, hi] = std::minmax_element(p.panel_scores.begin(), p.panel_scores.end());
    diag.spread.push_back(*hi - *lo);
  }
  for (double& v : diag.similarity.data) v /= static_cast<double>(manifest.size());
  return diag;
}

std::string format_panel(const PanelDiagnostics& diag) {
  std::string out;
  const std::size_t l = diag.similarity.rows();
  for (std::size_t i = 0; i < l; ++i) {
    out += "row=" + std::to_string(i);
    for (std::size_t j = 0; j < l; ++j) out += " " + fmt("%.9g", diag.similarity.at(i, j));
    out += "\n";
  }
  for (std::size_t i = 0; i < diag.spread.size(); ++i) {
    out += "image=" + std::to_string(i) + " spread=" + fmt("%.9g", diag.spread[i]) + "\n";
  }
  if (l >= 2) out += "mean_off_diagonal=" + fmt("%.9g", diag.mean_off_diagonal()) + "\n";
  return out;
}

GradHistogram cls_grad_stats(const TrainLog& log, int bins) {
  if (log.steps.empty()) throw ContractError("cls_grad_stats: empty training log");
  if (bins < 1 || bins % 2 == 0) throw ContractError("cls_grad_stats: bin count must be odd and positive");
  double range = 0.0;
  for (const auto& s : log.steps) {
    if (s.cls_grad.empty()) throw ContractError("cls_grad_stats: step " + std::to_string(s.step) + " has no snapshot");
    for (double g : s.cls_grad) {
      if (!std::isfinite(g)) throw NonFiniteError("cls_grad_stats: non-finite gradient at step " + std::to_string(s.step));
      range = std::max(range, std::abs(g));
    }
  }
  if (range == 0.0) range = 1.0;
  // Widen slightly so the extreme entries fall strictly inside the outer bins.
  range *= 1.0 + 1e-9;
  GradHistogram h;
  const double width = 2.0 * range / bins;
  for (int b = 0; b <= bins; ++b) h.edges.push_back(-range + width * b);
  for (const auto& s : log.steps) {
    std::vector<std::size_t> counts(bins, 0);
    double mu = 0.0;
    for (double g : s.cls_grad) {
      const auto b = static_cast<long>(std::floor((g + range) / width));
      ++counts[std::clamp<long>(b, 0, bins - 1)];
      mu += g;
    }
    mu /= static_cast<double>(s.cls_grad.size());
    double var = 0.0;
    for (double g : s.cls_grad) var += (g - mu) * (g - mu);
    h.steps.push_back(s.step);
    h.counts.push_back(std::move(counts));
    h.variance.push_back(var / static_cast<double>(s.cls_grad.size()));
  }
  return h;
}

long variance_decay_step(std::span<const double> variance, double fraction, std::size_t window) {
  if (window == 0 || variance.size() < window) throw ContractError("variance_decay_step: series shorter than window");
  auto window_mean = [&](std::size_t s) {
    return std::accumulate(variance.begin() + s, variance.begin() + s + window, 0.0) / static_cast<double>(window);
  };
  const double initial = window_mean(0);
  for (std::size_t s = 1; s + window <= variance.size(); ++s) {
    if (window_mean(s) < fraction * initial) return static_cast<long>(s);
  }
  return -1;
}

std::string format_histogram(const GradHistogram& h) {
  std::string out = "edges";
  for (double e : h.edges) out += " " + fmt("%.9g", e);
  out += "\n";
  for (std::size_t i = 0; i < h.steps.size(); ++i) {
    out += "step=" + std::to_string(h.steps[i]) + " variance=" + fmt("%.9g", h.variance[i]) + " counts=";
    for (std::size_t b = 0; b < h.counts[i].size(); ++b) {
      if (b) out += ",";
      out += std::to_string(h.counts[i][b]);
    }
    out += "\n";
  }
  return out;
}

template <typename T>
Tensor<double> attention_grid(const Prediction<T>& prediction, const ModelConfig& config) {
  if (prediction.attention.empty()) throw ContractError("attention_grid: model variant has no decoder attention");
  const auto& last = prediction.attention.back();
  const std::size_t g = config.grid();
  const std::size_t n = g * g;
  Tensor<double> out({g, g}, 0.0);
  std::size_t rows = 0;
  for (const auto& head : last) {
    if (head.rank() != 2 || head.cols() != n) throw ShapeError("attention_grid: expected [L x N] maps");
    for (std::size_t r = 0; r < head.rows(); ++r) {
      for (std::size_t k = 0; k < n; ++k) out.data[k] += static_cast<double>(head.at(r, k));
    }
    rows += head.rows();
  }
  for (double& v : out.data) v /= static_cast<double>(rows);
  return out;
}

template <typename T>
Tensor<double> attention_map(const DeiqtModel<T>& model, const Tensor<T>& image) {
  const ModelConfig& cfg = model.config;
  const Tensor<double> grid = attention_grid(predict(model, image), cfg);
  const std::size_t hw = cfg.crop, p = cfg.patch_size, g = cfg.grid();
  const auto [lo, hi] = std::minmax_element(grid.data.begin(), grid.data.end());
  const double span = *hi - *lo;
  Tensor<double> out({hw, hw}, 1.0);
  if (span <= 0.0) return out;
  for (std::size_t y = 0; y < hw; ++y) {
    for (std::size_t x = 0; x < hw; ++x) {
      const std::size_t gy = std::min(y / p, g - 1), gx = std::min(x / p, g - 1);
      out.at(y, x) = (grid.at(gy, gx) - *lo) / span;
    }
  }
  return out;
}

namespace {

constexpr double kWidth = 480, kHeight = 360, kMargin = 50;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kMargin + (x - x0) / (x1 - x0) * (kWidth - 2 * kMargin); }
  double py(double y) const { return kHeight - kMargin - (y - y0) / (y1 - y0) * (kHeight - 2 * kMargin); }
};

Frame frame_for(std::span<const double> xs, std::span<const double> ys) {
  Frame f{0, 1, 0, 1};
  if (!xs.empty()) {
    const auto [xl, xh] = std::minmax_element(xs.begin(), xs.end());
    const auto [yl, yh] = std::minmax_element(ys.begin(), ys.end());
    f = {*xl, *xh, *yl, *yh};
  }
  if (f.x1 <= f.x0) f.x1 = f.x0 + 1;
  if (f.y1 <= f.y0) f.y1 = f.y0 + 1;
  return f;
}

std::string header(const std::string& title, const std::string& xl, const std::string& yl, const Frame& f) {
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
    << "</text>\n"
    << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\"" << kWidth - kMargin << "\" y2=\""
    << kHeight - kMargin << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\"" << kHeight - kMargin
    << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
    << escape(xl) << "</text>\n"
    << "<text x=\"12\" y=\"" << kHeight / 2 << "\" font-size=\"12\" transform=\"rotate(-90 12 " << kHeight / 2
    << ")\" text-anchor=\"middle\">" << escape(yl) << "</text>\n"
    << "<text x=\"" << kMargin << "\" y=\"" << kHeight - kMargin + 15 << "\" font-size=\"10\">" << f.x0 << "</text>\n"
    << "<text x=\"" << kWidth - kMargin << "\" y=\"" << kHeight - kMargin + 15
    << "\" font-size=\"10\" text-anchor=\"end\">" << f.x1 << "</text>\n"
    << "<text x=\"" << kMargin - 4 << "\" y=\"" << kHeight - kMargin << "\" font-size=\"10\" text-anchor=\"end\">"
    << f.y0 << "</text>\n"
    << "<text x=\"" << kMargin - 4 << "\" y=\"" << kMargin + 4 << "\" font-size=\"10\" text-anchor=\"end\">" << f.y1
    << "</text>\n";
  return o.str();
}

}  // namespace

std::string svg_scatter(std::span<const double> x, std::span<const double> y, const std::string& title,
                        const std::string& x_label, const std::string& y_label) {
  if (x.size() != y.size()) throw ContractError("svg_scatter: length mismatch");
  const Frame f = frame_for(x, y);
  std::ostringstream o;
  o << header(title, x_label, y_label, f);
  for (std::size_t i = 0; i < x.size(); ++i) {
    o << "<circle cx=\"" << f.px(x[i]) << "\" cy=\"" << f.py(y[i]) << "\" r=\"2.5\" fill=\"steelblue\"/>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string svg_lines(std::span<const Series> series, const std::string& title, const std::string& x_label,
                      const std::string& y_label) {
  static const char* const kColors[] = {"steelblue", "darkorange", "seagreen", "crimson", "purple", "saddlebrown"};
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ContractError("svg_lines: length mismatch in " + s.name);
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  const Frame f = frame_for(xs, ys);
  std::ostringstream o;
  o << header(title, x_label, y_label, f);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kColors[k % std::size(kColors)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < series[k].x.size(); ++i) {
      o << f.px(series[k].x[i]) << "," << f.py(series[k].y[i]) << " ";
    }
    o << "\"/>\n<text x=\"" << kWidth - kMargin << "\" y=\"" << kMargin + 14 * k << "\" font-size=\"11\" fill=\""
      << color << "\" text-anchor=\"end\">" << escape(series[k].name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string svg_heatmap(const Tensor<double>& values, const std::string& title) {
  if (values.rank() != 2 || values.numel() == 0) throw ShapeError("svg_heatmap: expected a non-empty matrix");
  const std::size_t rows = values.rows(), cols = values.cols();
  const auto [lo, hi] = std::minmax_element(values.data.begin(), values.data.end());
  const double span = *hi > *lo ? *hi - *lo : 1.0;
  const double cell = std::min((kWidth - 2 * kMargin) / cols, (kHeight - 2 * kMargin) / rows);
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
    << "</text>\n";
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const int v = static_cast<int>(std::lround(255.0 * (values.at(r, c) - *lo) / span));
      o << "<rect x=\"" << kMargin + c * cell << "\" y=\"" << kMargin + r * cell << "\" width=\"" << cell
        << "\" height=\"" << cell << "\" fill=\"rgb(" << v << "," << v / 3 << "," << 255 - v << ")\"/>\n";
    }
  }
  o << "<text x=\"" << kMargin << "\" y=\"" << kHeight - 10 << "\" font-size=\"10\">min " << *lo << "  max " << *hi
    << "</text>\n</svg>\n";
  return o.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

#define DEIQT_INSTANTIATE_METRICS(T)                                                                          \
  template std::vector<double> predict_images<T>(const DeiqtModel<T>&, const Manifest&, int, std::uint64_t); \
  template EvalReport evaluate<T>(const DeiqtModel<T>&, const Manifest&, int, std::uint64_t);                \
  template PanelDiagnostics panel_cosine<T>(const DeiqtModel<T>&, const Manifest&);                         \
  template Tensor<double> attention_grid<T>(const Prediction<T>&, const ModelConfig&);                      \
  template Tensor<double> attention_map<T>(const DeiqtModel<T>&, const Tensor<T>&);

DEIQT_INSTANTIATE_METRICS(float)
DEIQT_INSTANTIATE_METRICS(double)

}  // namespace deiqt
