// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dflow/io.hpp"

namespace dflow {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<int> predict_rows(const Classifier& f, std::span<const AdvSample> samples,
                              const Tensor AdvSample::*field) {
  constexpr std::size_t chunk = 256;
  const std::size_t d = f.config().input_dim;
  std::vector<int> out;
  out.reserve(samples.size());
  for (std::size_t s = 0; s < samples.size(); s += chunk) {
    const std::size_t e = std::min(samples.size(), s + chunk);
    std::vector<float> buf;
    buf.reserve((e - s) * d);
    for (std::size_t i = s; i < e; ++i) {
      const Tensor& t = samples[i].*field;
      if (t.size() != d) throw std::invalid_argument("sample size does not match classifier input");
      buf.insert(buf.end(), t.data().begin(), t.data().end());
    }
    const auto pred = f.predict(Tensor({e - s, d}, std::move(buf)));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

VictimAsr asr_from_predictions(const std::vector<int>& pred, std::span<const AdvSample> samples,
                               std::size_t num_classes, const std::string& name, bool white_box) {
  VictimAsr r;
  r.name = name;
  r.white_box = white_box;
  std::vector<std::size_t> hits(num_classes, 0);
  r.per_class_count.assign(num_classes, 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int c = samples[i].target;
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) throw std::invalid_argument("target out of range");
    ++r.per_class_count[c];
    hits[c] += pred[i] == c;
  }
  r.per_class.assign(num_classes, kNaN);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (r.per_class_count[c] == 0) continue;
    r.per_class[c] = static_cast<double>(hits[c]) / static_cast<double>(r.per_class_count[c]);
    sum += r.per_class[c];
    ++present;
  }
  r.mean = sum / static_cast<double>(present);
  return r;
}

std::string fixed(double v, int precision) {
  if (std::isnan(v)) return "-";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, precision);
  return std::string(buf, res.ptr);
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

// ---- success rates -----------------------------------------------------------------

double EvalReport::black_box_mean() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : victims) {
    if (v.white_box) continue;
    sum += v.mean;
    ++n;
  }
  return n == 0 ? kNaN : sum / static_cast<double>(n);
}

VictimAsr compute_asr(const Classifier& f, std::span<const AdvSample> samples, const std::string& name,
                      bool white_box) {
  if (samples.empty()) throw std::invalid_argument("compute_asr on an empty sample list");
  return asr_from_predictions(predict_rows(f, samples, &AdvSample::x_adv), samples, f.num_classes(), name,
                              white_box);
}

EvalReport evaluate_victims(std::span<const Victim> victims, std::span<const AdvSample> samples,
                            std::uint64_t seed) {
  if (victims.empty()) throw std::invalid_argument("no victims");
  const auto sources = std::count_if(victims.begin(), victims.end(), [](const Victim& v) { return v.white_box; });
  if (sources != 1) throw std::invalid_argument("exactly one victim must be the white-box source");
  EvalReport rep;
  rep.num_classes = victims.front().model->num_classes();
  rep.samples = samples.size();
  rep.seed = seed;
  for (const auto& v : victims) {
    if (!v.model) throw std::invalid_argument("victim " + v.name + " has no model");
    if (v.model->num_classes() != rep.num_classes) throw std::invalid_argument("victims disagree on class count");
    rep.victims.push_back(compute_asr(*v.model, samples, v.name, v.white_box));
  }
  return rep;
}

EvalReport transfer_matrix(std::span<const Victim> victims, const AttackHandle& attack, const Dataset& data,
                           std::span<const int> targets, std::uint64_t seed) {
  const auto samples = attack(data, targets);
  return evaluate_victims(victims, samples, seed);
}

std::string format_transfer_table(std::span<const EvalReport> rows, std::span<const std::string> row_labels) {
  if (rows.empty()) throw std::invalid_argument("empty transfer table");
  if (rows.size() != row_labels.size()) throw std::invalid_argument("one label per row required");
  std::size_t label_w = 6;
  for (const auto& l : row_labels) label_w = std::max(label_w, l.size());
  std::vector<std::string> cols;
  for (const auto& v : rows.front().victims) cols.push_back(v.white_box ? v.name + "*" : v.name);
  cols.push_back("avg(bb)");
  std::vector<std::size_t> w;
  for (const auto& c : cols) w.push_back(std::max<std::size_t>(c.size(), 7));

  std::ostringstream os;
  auto pad = [&](const std::string& s, std::size_t width) {
    os << std::string(width > s.size() ? width - s.size() : 0, ' ') << s;
  };
  os << std::string("method") << std::string(label_w - 6, ' ');
  for (std::size_t i = 0; i < cols.size(); ++i) {
    os << "  ";
    pad(cols[i], w[i]);
  }
  os << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].victims.size() + 1 != cols.size()) throw std::invalid_argument("rows disagree on victims");
    os << row_labels[r] << std::string(label_w - row_labels[r].size(), ' ');
    for (std::size_t i = 0; i < rows[r].victims.size(); ++i) {
      os << "  ";
      pad(fixed(100.0 * rows[r].victims[i].mean, 2), w[i]);
    }
    os << "  ";
    pad(fixed(100.0 * rows[r].black_box_mean(), 2), w.back());
    os << '\n';
  }
  return os.str();
}

// ---- defenses ----------------------------------------------------------------------

void DefenseSpec::validate() const {
  switch (kind) {
    case Kind::none: return;
    case Kind::gaussian:
      if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("gaussian sigma must be >= 0");
      return;
    case Kind::median:
      if (window == 0 || window % 2 == 0) throw std::invalid_argument("median window must be odd and >= 1");
      return;
    case Kind::quantize:
      if (levels < 2) throw std::invalid_argument("quantize levels must be >= 2");
      return;
  }
}

std::string DefenseSpec::label() const {
  switch (kind) {
    case Kind::none: return "none";
    case Kind::gaussian: return "gaussian:" + format_number(sigma);
    case Kind::median: return "median:" + std::to_string(window);
    case Kind::quantize: return "quantize:" + std::to_string(levels);
  }
  return "?";
}

DefenseSpec DefenseSpec::parse(const std::string& s) {
  DefenseSpec d;
  const auto colon = s.find(':');
  const std::string kind = s.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : s.substr(colon + 1);
  auto num = [&](auto& out) {
    const auto [p, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), out);
    if (arg.empty() || ec != std::errc{} || p != arg.data() + arg.size()) {
      throw std::invalid_argument("bad defense argument: " + s);
    }
  };
  if (kind == "none" && arg.empty()) {
    d.kind = Kind::none;
  } else if (kind == "gaussian") {
    d.kind = Kind::gaussian;
    num(d.sigma);
  } else if (kind == "median") {
    d.kind = Kind::median;
    num(d.window);
  } else if (kind == "quantize") {
    d.kind = Kind::quantize;
    num(d.levels);
  } else {
    throw std::invalid_argument("unknown defense: " + s);
  }
  d.validate();
  return d;
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * n - 2);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

namespace {

void gaussian_image(std::span<const float> in, std::span<float> out, std::size_t h, std::size_t w, double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double ksum = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    ksum += k[i + radius];
  }
  for (double& v : k) v /= ksum;
  std::vector<double> tmp(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t j = -radius; j <= radius; ++j) {
        acc += k[j + radius] * in[r * w + reflect_index(static_cast<std::ptrdiff_t>(c) + j, w)];
      }
      tmp[r * w + c] = acc;
    }
  }
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t j = -radius; j <= radius; ++j) {
        acc += k[j + radius] * tmp[reflect_index(static_cast<std::ptrdiff_t>(r) + j, h) * w + c];
      }
      out[r * w + c] = clamp01(acc);
    }
  }
}

void median_image(std::span<const float> in, std::span<float> out, std::size_t h, std::size_t w,
                  std::size_t window) {
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  std::vector<float> win;
  win.reserve(window * window);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      win.clear();
      for (std::ptrdiff_t dr = -half; dr <= half; ++dr) {
        for (std::ptrdiff_t dc = -half; dc <= half; ++dc) {
          win.push_back(in[reflect_index(static_cast<std::ptrdiff_t>(r) + dr, h) * w +
                           reflect_index(static_cast<std::ptrdiff_t>(c) + dc, w)]);
        }
      }
      const auto mid = win.begin() + static_cast<std::ptrdiff_t>(win.size() / 2);
      std::nth_element(win.begin(), mid, win.end());
      out[r * w + c] = clamp01(*mid);
    }
  }
}

}  // namespace

Tensor apply_defense(const Tensor& x, std::size_t height, std::size_t width, const DefenseSpec& spec) {
  spec.validate();
  const std::size_t d = height * width;
  if (d == 0 || x.size() % d != 0) throw std::invalid_argument("apply_defense: size is not a multiple of H*W");
  std::vector<float> out(x.size());
  const auto in = x.data();
  for (std::size_t b = 0; b < x.size() / d; ++b) {
    const auto src = in.subspan(b * d, d);
    const auto dst = std::span<float>(out).subspan(b * d, d);
    switch (spec.kind) {
      case DefenseSpec::Kind::none:
        for (std::size_t i = 0; i < d; ++i) dst[i] = clamp01(src[i]);
        break;
      case DefenseSpec::Kind::gaussian:
        if (spec.sigma == 0.0) {
          for (std::size_t i = 0; i < d; ++i) dst[i] = clamp01(src[i]);
        } else {
          gaussian_image(src, dst, height, width, spec.sigma);
        }
        break;
      case DefenseSpec::Kind::median:
        median_image(src, dst, height, width, spec.window);
        break;
      case DefenseSpec::Kind::quantize: {
        const double l = static_cast<double>(spec.levels - 1);
        for (std::size_t i = 0; i < d; ++i) {
          dst[i] = clamp01(std::round(std::clamp(static_cast<double>(src[i]), 0.0, 1.0) * l) / l);
        }
        break;
      }
    }
  }
  return Tensor(x.shape(), std::move(out));
}

std::vector<AdvSample> defend(std::span<const AdvSample> samples, std::size_t height, std::size_t width,
                              const DefenseSpec& spec) {
  std::vector<AdvSample> out(samples.begin(), samples.end());
  for (auto& s : out) {
    s.x_adv = apply_defense(s.x_adv, height, width, spec);
    s.predictions.clear();
  }
  return out;
}

// ---- statistics ----------------------------------------------------------------------

ConfidenceInterval split_confidence_interval(std::span<const double> values, double z) {
  if (values.size() < 2) throw std::invalid_argument("confidence interval needs at least 2 splits");
  const double k = static_cast<double>(values.size());
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); })) {
    return {values.front(), 0.0};
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / k;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double s = std::sqrt(ss / (k - 1.0));
  return {mean, z * s / std::sqrt(k)};
}

std::vector<double> split_asr(const Classifier& f, std::span<const AdvSample> samples, std::size_t num_images,
                              std::size_t k) {
  if (k < 2 || num_images < k) throw std::invalid_argument("split_asr needs 2 <= k <= num_images");
  if (samples.empty() || samples.size() % num_images != 0) {
    throw std::invalid_argument("sample count is not a multiple of the image count");
  }
  const auto pred = predict_rows(f, samples, &AdvSample::x_adv);
  std::vector<std::size_t> hits(k, 0), total(k, 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t split = (i % num_images) * k / num_images;
    ++total[split];
    hits[split] += pred[i] == samples[i].target;
  }
  std::vector<double> out(k);
  for (std::size_t s = 0; s < k; ++s) out[s] = static_cast<double>(hits[s]) / static_cast<double>(total[s]);
  return out;
}

std::string format_ci(const ConfidenceInterval& ci, double scale, int precision) {
  return fixed(scale * ci.mean, precision) + " ± " + fixed(scale * ci.half_width, precision);
}

// ---- perturbation-only classification -------------------------------------------------

Tensor scale_perturbation(const Tensor& delta) {
  if (delta.size() == 0) throw std::invalid_argument("empty perturbation");
  const auto d = delta.data();
  const auto [lo_it, hi_it] = std::minmax_element(d.begin(), d.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  std::vector<float> out(d.size());
  if (hi == lo) {
    std::fill(out.begin(), out.end(), 0.5f);
  } else {
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = clamp01((d[i] - lo) / (hi - lo));
  }
  return Tensor(delta.shape(), std::move(out));
}

double perturbation_asr(const Classifier& f, std::span<const AdvSample> samples) {
  if (samples.empty()) throw std::invalid_argument("perturbation_asr on an empty sample list");
  std::vector<AdvSample> scaled;
  scaled.reserve(samples.size());
  for (const auto& s : samples) {
    AdvSample p;
    p.target = s.target;
    p.x_adv = scale_perturbation(s.delta());
    scaled.push_back(std::move(p));
  }
  const auto pred = predict_rows(f, scaled, &AdvSample::x_adv);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scaled.size(); ++i) hits += pred[i] == scaled[i].target;
  return static_cast<double>(hits) / static_cast<double>(scaled.size());
}

// ---- image dumps ------------------------------------------------------------------------

std::uint8_t to_gray(float v) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

void write_pgm(const std::filesystem::path& path, const Tensor& image, std::size_t height, std::size_t width) {
  if (image.size() != height * width) throw std::invalid_argument("write_pgm: size mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  std::vector<char> px(image.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<char>(to_gray(image[i]));
  out.write(px.data(), static_cast<std::streamsize>(px.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  std::size_t maxval = 0;
  PgmImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (!in || magic != "P5" || maxval != 255) throw std::runtime_error("unsupported pgm: " + path.string());
  in.get();
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw std::runtime_error("truncated pgm: " + path.string());
  return img;
}

std::array<std::filesystem::path, 3> emit_visualization(const AdvSample& sample, std::size_t height,
                                                        std::size_t width, const std::filesystem::path& dir,
                                                        const std::string& stem) {
  std::array<std::filesystem::path, 3> paths{dir / (stem + "_pre.pgm"), dir / (stem + "_adv.pgm"),
                                             dir / (stem + "_delta.pgm")};
  write_pgm(paths[0], sample.x_pre, height, width);
  write_pgm(paths[1], sample.x_adv, height, width);
  write_pgm(paths[2], scale_perturbation(sample.delta()), height, width);
  return paths;
}

}  // namespace dflow
