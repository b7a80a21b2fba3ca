#include "occfill/eval.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <set>
#include <json.hpp>

#include "occfill/errors.hpp"
#include "occfill/pipeline.hpp"

namespace occfill {

namespace {

void require_same_shape(const ImageBuffer& a, const ImageBuffer& b, const char* what) {
  if (a.empty() || b.empty() || a.tensor().sizes() != b.tensor().sizes()) {
    throw ShapeError(std::string(what) + ": images differ in shape");
  }
}

// Pixel values mapped to [0,1] in double precision, CHW order.
std::vector<double> unit_pixels(const ImageBuffer& img) {
  auto t = ((img.tensor().to(torch::kFloat64) + 1.0) * 0.5).contiguous();
  return {t.data_ptr<double>(), t.data_ptr<double>() + t.numel()};
}

std::vector<double> luma(const ImageBuffer& img) {
  const auto px = unit_pixels(img);
  const size_t plane = static_cast<size_t>(img.height() * img.width());
  std::vector<double> y(plane);
  for (size_t i = 0; i < plane; ++i) y[i] = 0.299 * px[i] + 0.587 * px[plane + i] + 0.114 * px[2 * plane + i];
  return y;
}

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

std::array<double, kSsimWindow> gaussian_taps() {
  std::array<double, kSsimWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Valid-region separable Gaussian filter of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& in, int64_t h, int64_t w) {
  static const auto g = gaussian_taps();
  const int64_t ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::vector<double> rows(static_cast<size_t>(h * ow));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) s += g[k] * in[y * w + x + k];
      rows[y * ow + x] = s;
    }
  std::vector<double> out(static_cast<size_t>(oh * ow));
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) s += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

// Neumaier-compensated mean.
struct Mean {
  double sum = 0.0, comp = 0.0;
  int64_t n = 0;
  void add(double v) {
    const double t = sum + v;
    comp += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
    ++n;
  }
  double value() const { return n ? (sum + comp) / static_cast<double>(n) : 0.0; }
};

}  // namespace

double psnr(const ImageBuffer& a, const ImageBuffer& b, const Mask* region) {
  require_same_shape(a, b, "psnr");
  const auto pa = unit_pixels(a), pb = unit_pixels(b);
  const size_t plane = static_cast<size_t>(a.height() * a.width());
  const float* m = nullptr;
  torch::Tensor mt;
  if (region) {
    if (region->height() != a.height() || region->width() != a.width()) throw ShapeError("psnr: mask shape");
    mt = region->tensor().contiguous();
    m = mt.data_ptr<float>();
  }
  double se = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < pa.size(); ++i) {
    if (m && m[i % plane] < 0.5f) continue;
    const double d = pa[i] - pb[i];
    se += d * d;
    ++n;
  }
  if (n == 0) throw ShapeError("psnr: empty region");
  const double mse = se / static_cast<double>(n);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
  require_same_shape(a, b, "ssim");
  const int64_t h = a.height(), w = a.width();
  if (h < kSsimWindow || w < kSsimWindow) throw SizeError("ssim needs images of at least 11x11");
  const auto x = luma(a), y = luma(b);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w), my = filter_valid(y, h, w);
  const auto sxx = filter_valid(xx, h, w), syy = filter_valid(yy, h, w), sxy = filter_valid(xy, h, w);
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  Mean mean;
  for (size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
    mean.add(((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2)));
  }
  return mean.value();
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

VerificationResult verify_identity(const IdentityEmbedder& embedder, const ImageBuffer& a, const ImageBuffer& b,
                                   double threshold, std::string pair_id) {
  VerificationResult r;
  r.pair_id = std::move(pair_id);
  r.threshold = threshold;
  if (a.bit_equal(b)) {
    r.cosine_similarity = 1.0;
  } else {
    const auto ea = embedder.embed(a), eb = embedder.embed(b);
    r.cosine_similarity = cosine_similarity(ea, eb);
  }
  r.same = r.cosine_similarity >= threshold;
  return r;
}

double equal_error_threshold(const std::vector<ScoredPair>& pairs) {
  std::vector<double> same, diff;
  for (const auto& p : pairs) (p.same ? same : diff).push_back(p.score);
  if (same.empty() || diff.empty()) throw CalibrationError("need both same-identity and different-identity pairs");
  std::sort(same.begin(), same.end());
  std::sort(diff.begin(), diff.end());
  std::vector<double> candidates;
  for (const auto& p : pairs) candidates.push_back(p.score);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  double best_t = candidates.front(), best_gap = 2.0, best_sum = 2.0;
  for (double t : candidates) {
    // same == (score >= t)
    const double frr = static_cast<double>(std::lower_bound(same.begin(), same.end(), t) - same.begin()) /
                       static_cast<double>(same.size());
    const double far = static_cast<double>(diff.end() - std::lower_bound(diff.begin(), diff.end(), t)) /
                       static_cast<double>(diff.size());
    const double gap = std::abs(far - frr), sum = far + frr;
    if (gap < best_gap - 1e-12 || (std::abs(gap - best_gap) <= 1e-12 && sum < best_sum)) {
      best_t = t;
      best_gap = gap;
      best_sum = sum;
    }
  }
  return best_t;
}

double calibrate_threshold(const IdentityEmbedder& embedder, const DatasetManifest& manifest) {
  const auto test = manifest.indices(Split::Test);
  std::set<std::string> ids;
  for (auto i : test) ids.insert(manifest.records()[i].identity_id);
  if (ids.size() < 2) throw CalibrationError("test split needs at least two identities");
  SampleBuilder builder(manifest, MaskSpec{});
  std::vector<std::vector<float>> emb;
  for (auto i : test) emb.push_back(embedder.embed(builder.aligned(i)));
  std::vector<ScoredPair> pairs;
  for (size_t i = 0; i < test.size(); ++i)
    for (size_t j = i + 1; j < test.size(); ++j) {
      pairs.push_back({cosine_similarity(emb[i], emb[j]),
                       manifest.records()[test[i]].identity_id == manifest.records()[test[j]].identity_id});
    }
  return equal_error_threshold(pairs);
}

std::string MetricReport::to_json() const {
  nlohmann::json j{{"psnr_mean", psnr_mean},         {"ssim_mean", ssim_mean},
                   {"verif_vs_groundtruth", verif_vs_groundtruth},
                   {"verif_vs_reference", verif_vs_reference},
                   {"n_samples", n_samples},          {"n_skipped", n_skipped},
                   {"threshold", threshold}};
  return j.dump(2);
}

std::string MetricReport::to_table() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "metric                 value\n"
                "psnr_mean (dB)      %8.3f\n"
                "ssim_mean           %8.4f\n"
                "verif_vs_groundtruth%8.4f\n"
                "verif_vs_reference  %8.4f\n"
                "n_samples           %8lld\n"
                "n_skipped           %8lld\n"
                "threshold           %8.4f\n",
                psnr_mean, ssim_mean, verif_vs_groundtruth, verif_vs_reference, static_cast<long long>(n_samples),
                static_cast<long long>(n_skipped), threshold);
  return buf;
}

MetricReport evaluate_predictor(const Predictor& predictor, const DatasetManifest& manifest,
                                const IdentityEmbedder& embedder, const EvalOptions& options) {
  const auto test = manifest.indices(Split::Test);
  if (test.empty()) throw SpecError("evaluate: test split is empty");
  MaskSpec spec = options.mask;
  spec.jitter = 0.0;
  spec.validate();
  SampleBuilder builder(manifest, spec);

  MetricReport report;
  report.threshold = options.threshold ? *options.threshold : calibrate_threshold(embedder, manifest);
  Mean p, s, vg, vr;
  for (auto idx : test) {
    try {
      const auto sample = builder.build(idx, derive_seed(options.seed, idx));
      const auto out = predictor(sample);
      p.add(psnr(out, sample.target, options.hole_only ? &sample.mask : nullptr));
      s.add(ssim(out, sample.target));
      vg.add(verify_identity(embedder, out, sample.target, report.threshold).same ? 1.0 : 0.0);
      vr.add(verify_identity(embedder, out, sample.reference, report.threshold).same ? 1.0 : 0.0);
      ++report.n_samples;
    } catch (const std::exception& e) {
      std::cerr << "evaluate: skipping record " << idx << ": " << e.what() << '\n';
      ++report.n_skipped;
    }
  }
  const auto total = static_cast<double>(test.size());
  if (static_cast<double>(report.n_skipped) > 0.1 * total) {
    throw TrainingError("evaluate: " + std::to_string(report.n_skipped) + " of " + std::to_string(test.size()) +
                        " samples skipped");
  }
  report.psnr_mean = p.value();
  report.ssim_mean = s.value();
  report.verif_vs_groundtruth = vg.value();
  report.verif_vs_reference = vr.value();
  return report;
}

MetricReport evaluate(Generator& generator, const DatasetManifest& manifest, const IdentityEmbedder& embedder,
                      const EvalOptions& options) {
  generator->eval();
  Predictor pred = [&](const TrainingSample& s) {
    return infer_single(generator, s.masked, s.mask, s.reference, s.pose);
  };
  return evaluate_predictor(pred, manifest, embedder, options);
}

namespace {

std::string pose_label(const PoseAngles& p) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g,%g,%g", p.pitch, p.yaw, p.roll);
  return buf;
}

// Cells side by side above a caption strip carrying each cell's pose.
ImageBuffer contact_sheet(const std::vector<ImageBuffer>& cells, const std::vector<PoseAngles>& poses) {
  const int h = static_cast<int>(cells.front().height()), w = static_cast<int>(cells.front().width());
  const int strip = std::max(12, h / 5);
  const int n = static_cast<int>(cells.size());
  cv::Mat sheet(h + strip, w * n, CV_8UC3, cv::Scalar(0, 0, 0));
  const double font = std::max(0.25, w / 200.0);
  for (int k = 0; k < n; ++k) {
    auto t = cells[k].tensor().contiguous();
    const float* d = t.data_ptr<float>();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        auto& px = sheet.at<cv::Vec3b>(y, k * w + x);
        for (int c = 0; c < 3; ++c) px[c] = unit_to_byte(d[(c * h + y) * w + x]);
      }
    cv::putText(sheet, pose_label(poses[k]), cv::Point(k * w + 2, h + strip - strip / 4), cv::FONT_HERSHEY_SIMPLEX,
                font, cv::Scalar(255, 255, 255), 1, cv::LINE_AA);
  }
  auto out = torch::empty({3, h + strip, w * n}, torch::kFloat32);
  auto acc = out.accessor<float, 3>();
  for (int y = 0; y < sheet.rows; ++y)
    for (int x = 0; x < sheet.cols; ++x) {
      const auto& px = sheet.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) acc[c][y][x] = byte_to_unit(px[c]);
    }
  return ImageBuffer(out);
}

}  // namespace

PoseSweep pose_sweep(Generator& generator, const TrainingSample& sample, const std::vector<PoseAngles>& poses) {
  if (poses.empty()) throw SpecError("pose_sweep needs at least one pose");
  generator->eval();
  PoseSweep sweep;
  sweep.poses = poses;
  for (const auto& pose : poses) {
    sweep.cells.push_back(infer_single(generator, sample.masked, sample.mask, sample.reference, pose));
  }
  sweep.sheet = contact_sheet(sweep.cells, poses);
  return sweep;
}

double masked_l1(const ImageBuffer& a, const ImageBuffer& b, const Mask& mask) {
  require_same_shape(a, b, "masked_l1");
  if (mask.height() != a.height() || mask.width() != a.width()) throw ShapeError("masked_l1: mask shape");
  auto m = (mask.tensor() > 0.5).to(torch::kFloat64);
  const double holes = m.sum().item<double>();
  if (holes == 0.0) return 0.0;
  auto diff = (a.tensor().to(torch::kFloat64) - b.tensor().to(torch::kFloat64)).abs() * m;
  return diff.sum().item<double>() / (holes * 3.0);
}

}  // namespace occfill
