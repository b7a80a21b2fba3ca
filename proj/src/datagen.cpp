#include "occfill/datagen.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "occfill/config.hpp"
#include "occfill/errors.hpp"

namespace occfill {

namespace {

double round_half_up(double v) { return std::floor(v + 0.5); }

nlohmann::json point_json(const Point2& p) { return nlohmann::json::array({p.x, p.y}); }

Point2 point_from_json(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

}  // namespace

uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

PoseAngles parse_pose(const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.size() != 3) throw EncodingError("pose '" + text + "' is not pitch,yaw,roll");
  try {
    return {std::stod(trim(parts[0])), std::stod(trim(parts[1])), std::stod(trim(parts[2]))};
  } catch (const std::exception&) {
    throw EncodingError("pose '" + text + "' has a non-numeric angle");
  }
}

std::vector<PoseAngles> parse_pose_list(const std::string& text) {
  std::vector<PoseAngles> out;
  for (const auto& item : split(text, ';')) {
    if (!trim(item).empty()) out.push_back(parse_pose(item));
  }
  return out;
}

// ---------------------------------------------------------------------------
// MaskSpec

void MaskSpec::validate() const {
  for (double v : {top, bottom, left, right}) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw MaskError("box edges must lie in [0, 1]");
  }
  if (!(top < bottom) || !(left < right)) throw MaskError("box must satisfy top < bottom and left < right");
  if (!std::isfinite(jitter) || jitter < 0.0 || jitter >= 0.5) throw MaskError("jitter must lie in [0, 0.5)");
}

void MaskSpec::validate_for_training() const {
  validate();
  if (area_fraction() > 0.75) throw MaskError("training box covers more than 75% of the frame");
}

// ---------------------------------------------------------------------------
// Manifest

DatasetManifest::DatasetManifest(std::vector<FaceRecord> records, int64_t image_size, std::filesystem::path root)
    : records_(std::move(records)), image_size_(image_size), root_(std::move(root)) {
  for (size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].identity_id.empty()) throw IoError("record " + std::to_string(i) + " has no identity_id");
    identities_[records_[i].identity_id].push_back(i);
  }
}

std::vector<size_t> DatasetManifest::indices(Split split) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<std::string> DatasetManifest::identity_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : identities_) out.push_back(id);
  return out;
}

std::filesystem::path DatasetManifest::image_path(size_t index) const {
  std::filesystem::path p = records_.at(index).image_path;
  return p.is_absolute() ? p : root_ / p;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& r : records_) {
    nlohmann::json j;
    j["identity_id"] = r.identity_id;
    j["image_path"] = r.image_path;
    j["landmarks"] = {{"left_eye", point_json(r.landmarks.left_eye)},
                      {"right_eye", point_json(r.landmarks.right_eye)},
                      {"nose_tip", point_json(r.landmarks.nose_tip)},
                      {"mouth_left", point_json(r.landmarks.mouth_left)},
                      {"mouth_right", point_json(r.landmarks.mouth_right)}};
    j["pose"] = {{"pitch", r.pose.pitch}, {"yaw", r.pose.yaw}, {"roll", r.pose.roll}};
    j["split"] = split_name(r.split);
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path, int64_t image_size) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<FaceRecord> records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      FaceRecord r;
      r.identity_id = j.at("identity_id").get<std::string>();
      r.image_path = j.at("image_path").get<std::string>();
      const auto& lm = j.at("landmarks");
      r.landmarks = {point_from_json(lm.at("left_eye")), point_from_json(lm.at("right_eye")),
                     point_from_json(lm.at("nose_tip")), point_from_json(lm.at("mouth_left")),
                     point_from_json(lm.at("mouth_right"))};
      const auto& p = j.at("pose");
      r.pose = {p.at("pitch").get<double>(), p.at("yaw").get<double>(), p.at("roll").get<double>()};
      const auto s = j.at("split").get<std::string>();
      if (s != "train" && s != "test") throw IoError("split must be train or test");
      r.split = s == "train" ? Split::Train : Split::Test;
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return DatasetManifest(std::move(records), image_size, path.parent_path());
}

void assign_splits(std::vector<FaceRecord>& records) {
  std::map<std::string, std::vector<size_t>> groups;
  for (size_t i = 0; i < records.size(); ++i) groups[records[i].identity_id].push_back(i);
  for (auto& [_, idx] : groups) {
    const auto n_test = static_cast<size_t>(round_half_up(0.1 * static_cast<double>(idx.size())));
    for (size_t k = 0; k < idx.size(); ++k) {
      records[idx[k]].split = k + n_test >= idx.size() ? Split::Test : Split::Train;
    }
  }
}

std::vector<FaceRecord> import_landmark_csv(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open landmark CSV " + csv_path.string());
  std::vector<FaceRecord> records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split(line, ',');
    for (auto& f : fields) f = trim(f);
    if (lineno == 1 && fields[0] == "image_path") continue;
    if (fields.size() != 14) {
      throw IoError(csv_path.string() + ":" + std::to_string(lineno) + ": expected 14 columns");
    }
    std::array<double, 13> v{};
    try {
      for (size_t k = 0; k < 13; ++k) v[k] = std::stod(fields[k + 1]);
    } catch (const std::exception&) {
      throw IoError(csv_path.string() + ":" + std::to_string(lineno) + ": non-numeric field");
    }
    FaceRecord r;
    r.image_path = fields[0];
    r.identity_id = std::filesystem::path(fields[0]).parent_path().filename().string();
    if (r.identity_id.empty()) {
      throw IoError(csv_path.string() + ":" + std::to_string(lineno) + ": image path has no identity directory");
    }
    r.landmarks = {{v[0], v[1]}, {v[2], v[3]}, {v[4], v[5]}, {v[6], v[7]}, {v[8], v[9]}};
    r.pose = {v[10], v[11], v[12]};
    records.push_back(std::move(r));
  }
  assign_splits(records);
  return records;
}

// ---------------------------------------------------------------------------
// Alignment, pose maps, occlusion

Point2 canonical_nose_tip(int64_t out_size) {
  const auto s = static_cast<double>(out_size);
  return {round_half_up(0.5 * s), round_half_up(0.6 * s)};
}

AlignedFace align_face(const ImageBuffer& image, const Landmarks& landmarks, int64_t out_size) {
  if (out_size < 32) throw AlignmentError("out_size must be at least 32");
  for (const auto& p : landmarks.points()) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw AlignmentError("non-finite landmark");
  }
  const auto w = image.width();
  const auto h = image.height();
  const auto& nose = landmarks.nose_tip;
  if (nose.x < 0.0 || nose.y < 0.0 || nose.x >= static_cast<double>(w) || nose.y >= static_cast<double>(h)) {
    throw AlignmentError("nose tip lies outside the image");
  }
  const double scale = static_cast<double>(out_size) / static_cast<double>(w);
  const Point2 anchor = canonical_nose_tip(out_size);

  auto out = torch::zeros({3, out_size, out_size});
  auto src = image.tensor().accessor<float, 3>();
  auto dst = out.accessor<float, 3>();
  for (int64_t v = 0; v < out_size; ++v) {
    const double sy = nose.y + (static_cast<double>(v) - anchor.y) / scale;
    for (int64_t u = 0; u < out_size; ++u) {
      const double sx = nose.x + (static_cast<double>(u) - anchor.x) / scale;
      if (sx < 0.0 || sy < 0.0 || sx > static_cast<double>(w - 1) || sy > static_cast<double>(h - 1)) continue;
      const auto x0 = static_cast<int64_t>(std::floor(sx));
      const auto y0 = static_cast<int64_t>(std::floor(sy));
      const double fx = sx - static_cast<double>(x0);
      const double fy = sy - static_cast<double>(y0);
      if (fx == 0.0 && fy == 0.0) {
        for (int64_t c = 0; c < 3; ++c) dst[c][v][u] = src[c][y0][x0];
        continue;
      }
      const int64_t x1 = std::min(x0 + 1, w - 1);
      const int64_t y1 = std::min(y0 + 1, h - 1);
      for (int64_t c = 0; c < 3; ++c) {
        const double top = (1.0 - fx) * src[c][y0][x0] + fx * src[c][y0][x1];
        const double bot = (1.0 - fx) * src[c][y1][x0] + fx * src[c][y1][x1];
        dst[c][v][u] = static_cast<float>((1.0 - fy) * top + fy * bot);
      }
    }
  }
  auto map = [&](const Point2& p) {
    return Point2{(p.x - nose.x) * scale + anchor.x, (p.y - nose.y) * scale + anchor.y};
  };
  Landmarks mapped{map(landmarks.left_eye), map(landmarks.right_eye), map(landmarks.nose_tip),
                   map(landmarks.mouth_left), map(landmarks.mouth_right)};
  return {ImageBuffer(out), mapped, scale};
}

ImageBuffer render_pose_map(const PoseAngles& pose, int64_t size) {
  if (size < 1) throw EncodingError("pose map size must be positive");
  const std::array<double, 3> angles{pose.pitch, pose.yaw, pose.roll};
  std::array<float, 3> rgb{};
  for (size_t c = 0; c < 3; ++c) {
    if (!std::isfinite(angles[c])) throw EncodingError("non-finite pose angle");
    rgb[c] = static_cast<float>(std::clamp(angles[c], -90.0, 90.0) / 90.0);
  }
  return ImageBuffer::filled(size, size, rgb);
}

PixelBox resolve_mask_box(const MaskSpec& spec, int64_t size, uint64_t rng_seed) {
  spec.validate();
  std::array<double, 4> e{spec.top, spec.bottom, spec.left, spec.right};
  if (spec.jitter > 0.0) {
    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> d(-spec.jitter, spec.jitter);
    for (auto& v : e) v = std::clamp(v + d(rng), 0.0, 1.0);
  }
  const auto s = static_cast<double>(size);
  PixelBox b{static_cast<int64_t>(round_half_up(e[0] * s)), static_cast<int64_t>(round_half_up(e[1] * s)),
             static_cast<int64_t>(round_half_up(e[2] * s)), static_cast<int64_t>(round_half_up(e[3] * s))};
  if (b.top >= b.bottom || b.left >= b.right) throw MaskError("occlusion box is empty after jitter");
  return b;
}

Occlusion apply_occlusion(const ImageBuffer& image, const MaskSpec& spec, uint64_t rng_seed) {
  if (!image.is_square()) throw ShapeError("occlusion expects a square image");
  const auto b = resolve_mask_box(spec, image.height(), rng_seed);
  auto mask = torch::zeros({1, image.height(), image.width()});
  mask.index_put_({0, torch::indexing::Slice(b.top, b.bottom), torch::indexing::Slice(b.left, b.right)}, 1.0f);
  auto masked = torch::where(mask.expand({3, -1, -1}) > 0.5f, torch::zeros({}), image.tensor());
  return {ImageBuffer(masked), Mask(mask)};
}

// ---------------------------------------------------------------------------
// Samples

SampleBuilder::SampleBuilder(const DatasetManifest& manifest, MaskSpec mask)
    : manifest_(&manifest), mask_(mask), cache_(manifest.records().size()) {
  mask_.validate();
}

const ImageBuffer& SampleBuilder::aligned(size_t index) const {
  if (index >= cache_.size()) throw PairingError("record index " + std::to_string(index) + " out of range");
  auto& slot = cache_[index];
  if (!slot) {
    const auto img = load_png(manifest_->image_path(index));
    slot = align_face(img, manifest_->records()[index].landmarks, manifest_->image_size()).image;
  }
  return *slot;
}

TrainingSample SampleBuilder::build(size_t record_index, uint64_t rng_seed,
                                    const std::optional<std::string>& cross_identity) const {
  const auto& records = manifest_->records();
  if (record_index >= records.size()) {
    throw PairingError("record index " + std::to_string(record_index) + " out of range");
  }
  const auto& record = records[record_index];
  const auto& ids = manifest_->identities();
  const std::string& ref_id = cross_identity ? *cross_identity : record.identity_id;
  const auto it = ids.find(ref_id);
  if (it == ids.end()) throw PairingError("unknown identity '" + ref_id + "'");
  std::vector<size_t> candidates;
  for (size_t i : it->second) {
    if (i != record_index) candidates.push_back(i);
  }
  if (candidates.empty()) {
    throw PairingError("identity '" + ref_id + "' has no record usable as reference for record " +
                       std::to_string(record_index));
  }
  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<size_t> pick(0, candidates.size() - 1);
  const size_t ref = candidates[pick(rng)];

  TrainingSample s;
  s.record_index = record_index;
  s.reference_index = ref;
  s.pose = record.pose;
  s.target = aligned(record_index);
  s.reference = aligned(ref);
  auto occ = apply_occlusion(s.target, mask_, derive_seed(rng_seed, 1));
  s.masked = std::move(occ.masked);
  s.mask = std::move(occ.mask);
  s.pose_map = render_pose_map(record.pose, manifest_->image_size());
  return s;
}

TrainingSample sample_training_pair(const DatasetManifest& manifest, size_t record_index, uint64_t rng_seed,
                                    const std::optional<std::string>& cross_identity, const MaskSpec& mask) {
  SampleBuilder builder(manifest, mask);
  return builder.build(record_index, rng_seed, cross_identity);
}

SampleBatch collate(const std::vector<TrainingSample>& samples) {
  if (samples.empty()) throw ShapeError("cannot collate an empty batch");
  std::vector<torch::Tensor> m, k, r, l, t;
  for (const auto& s : samples) {
    m.push_back(s.masked.tensor());
    k.push_back(s.mask.tensor());
    r.push_back(s.reference.tensor());
    l.push_back(s.pose_map.tensor());
    t.push_back(s.target.tensor());
  }
  try {
    return {torch::stack(m), torch::stack(k), torch::stack(r), torch::stack(l), torch::stack(t)};
  } catch (const c10::Error&) {
    throw ShapeError("samples in a batch must share one image size");
  }
}

}  // namespace occfill
