#include "occfill/toy_faces.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "occfill/errors.hpp"

namespace occfill {

namespace {

using Rgb = std::array<double, 3>;

constexpr double kDeg = std::numbers::pi / 180.0;

struct Vec3 {
  double x, y, z;
};

// Rz(roll) * Rx(pitch) * Ry(yaw), orthographic projection onto (x, y).
struct Projector {
  double cy, sy, cp, sp, cr, sr;
  explicit Projector(const PoseAngles& p)
      : cy(std::cos(p.yaw * kDeg)), sy(std::sin(p.yaw * kDeg)), cp(std::cos(p.pitch * kDeg)),
        sp(std::sin(p.pitch * kDeg)), cr(std::cos(p.roll * kDeg)), sr(std::sin(p.roll * kDeg)) {}

  std::array<double, 2> operator()(const Vec3& v) const {
    const double x1 = v.x * cy + v.z * sy;
    const double z1 = -v.x * sy + v.z * cy;
    const double y2 = v.y * cp - z1 * sp;
    return {x1 * cr - y2 * sr, x1 * sr + y2 * cr};
  }
};

struct Ellipse {
  double cx, cy, a, b;  // centre and semi-axes in normalised units, in the rolled frame
  // Squared normalised radius of (x, y); <= 1 means inside.
  double radius2(double x, double y, double cr, double sr) const {
    const double dx = x - cx;
    const double dy = y - cy;
    const double lx = dx * cr + dy * sr;
    const double ly = -dx * sr + dy * cr;
    return (lx * lx) / (a * a) + (ly * ly) / (b * b);
  }
  // Vertical coordinate in the rolled frame, relative to the centre.
  double local_y(double x, double y, double cr, double sr) const { return -(x - cx) * sr + (y - cy) * cr; }
};

Rgb scale(const Rgb& c, double k) { return {c[0] * k, c[1] * k, c[2] * k}; }

Rgb jitter(const Rgb& c, std::mt19937_64& rng, double amount) {
  std::uniform_real_distribution<double> d(-amount, amount);
  Rgb out{};
  for (size_t i = 0; i < 3; ++i) out[i] = std::clamp(c[i] + d(rng), 0.0, 1.0);
  return out;
}

}  // namespace

ToyIdentity sample_toy_identity(uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  static const std::array<Rgb, 5> kHair{{{0.08, 0.06, 0.05}, {0.36, 0.21, 0.10}, {0.86, 0.72, 0.40},
                                         {0.62, 0.22, 0.10}, {0.62, 0.62, 0.62}}};
  static const std::array<Rgb, 5> kIris{{{0.20, 0.40, 0.88}, {0.22, 0.62, 0.30}, {0.42, 0.24, 0.08},
                                         {0.55, 0.58, 0.64}, {0.80, 0.58, 0.12}}};
  ToyIdentity id;
  const double r = u(0.45, 0.98);
  const double g = r * u(0.62, 0.86);
  id.skin = {r, g, g * u(0.55, 0.9)};
  id.hair = jitter(kHair[static_cast<size_t>(u(0.0, 5.0))], rng, 0.06);
  id.iris = jitter(kIris[static_cast<size_t>(u(0.0, 5.0))], rng, 0.08);
  id.lips = jitter({id.skin[0] * 0.95, id.skin[1] * 0.5, id.skin[2] * 0.55}, rng, 0.05);
  id.eye_half_width = u(0.055, 0.085);
  id.eye_aspect = u(0.40, 0.75);
  id.eye_spacing = u(0.13, 0.18);
  id.brow_thickness = u(0.012, 0.035);
  id.brow_gap = u(0.065, 0.095);
  id.face_half_width = u(0.28, 0.36);
  id.face_half_height = u(0.36, 0.44);
  id.mouth_half_width = u(0.08, 0.13);
  return id;
}

ToyShot sample_toy_shot(uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  ToyShot s;
  s.pose = {u(-30.0, 30.0), u(-45.0, 45.0), u(-15.0, 15.0)};
  s.shift_x = u(-0.03, 0.03);
  s.shift_y = u(-0.03, 0.03);
  s.brightness = u(0.92, 1.08);
  const double grey = u(0.15, 0.85);
  s.background = jitter({grey, grey, grey}, rng, 0.08);
  return s;
}

ToyFace render_toy_face(const ToyIdentity& id, const ToyShot& shot, int64_t size) {
  if (size < 8) throw SpecError("toy face size must be at least 8");
  const Projector proj(shot.pose);
  const double cyaw = std::abs(proj.cy);
  const double cpitch = std::abs(proj.cp);
  const double cr = proj.cr;
  const double sr = proj.sr;
  const double ox = 0.5 + shot.shift_x;
  const double oy = 0.5 + shot.shift_y;
  auto place = [&](const Vec3& v) {
    const auto p = proj(v);
    return std::array<double, 2>{ox + p[0], oy + p[1]};
  };

  const double fw = id.face_half_width * (0.9 + 0.1 * cyaw);
  const Ellipse face{ox, oy, fw, id.face_half_height};
  const Ellipse hair{ox, oy - 0.03, fw * 1.1, id.face_half_height * 1.08};

  struct Feature {
    Ellipse e;
    Rgb color;
  };
  std::vector<Feature> features;
  const Rgb brow_color = scale(id.hair, 0.8);
  const Rgb nose_color = scale(id.skin, 0.78);
  std::array<std::array<double, 2>, 2> eye_centres{};
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? -id.eye_spacing : id.eye_spacing;
    const auto brow = place({sx, -0.06 - id.brow_gap, 0.21});
    features.push_back({{brow[0], brow[1], id.eye_half_width * 1.2 * cyaw, id.brow_thickness * cpitch}, brow_color});
  }
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? -id.eye_spacing : id.eye_spacing;
    const auto eye = place({sx, -0.06, 0.20});
    eye_centres[static_cast<size_t>(side)] = eye;
    const double a = id.eye_half_width * cyaw;
    const double b = id.eye_half_width * id.eye_aspect * cpitch;
    const double iris_r = id.eye_half_width * id.eye_aspect * 0.85;
    features.push_back({{eye[0], eye[1], a, b}, {0.95, 0.95, 0.93}});
    features.push_back({{eye[0], eye[1], iris_r * cyaw, std::min(iris_r, b)}, id.iris});
    features.push_back({{eye[0], eye[1], iris_r * 0.4 * cyaw, std::min(iris_r, b) * 0.4}, {0.03, 0.03, 0.03}});
  }
  const auto nose = place({0.0, 0.10, 0.30});
  features.push_back({{nose[0], nose[1], 0.03, 0.022 * cpitch}, nose_color});
  const auto mouth = place({0.0, 0.22, 0.20});
  features.push_back({{mouth[0], mouth[1], id.mouth_half_width * cyaw, 0.022 * cpitch}, id.lips});
  const auto mouth_l = place({-id.mouth_half_width, 0.22, 0.20});
  const auto mouth_r = place({id.mouth_half_width, 0.22, 0.20});

  auto shade = [&](double x, double y) -> Rgb {
    for (auto it = features.rbegin(); it != features.rend(); ++it) {
      if (it->e.radius2(x, y, cr, sr) <= 1.0) return it->color;
    }
    const double rf = face.radius2(x, y, cr, sr);
    if (rf <= 1.0) {
      if (face.local_y(x, y, cr, sr) < -0.62 * id.face_half_height) return id.hair;
      return scale(id.skin, 1.0 - 0.18 * rf);
    }
    if (hair.radius2(x, y, cr, sr) <= 1.0 && hair.local_y(x, y, cr, sr) < 0.1) return id.hair;
    return shot.background;
  };

  constexpr int kSub = 3;
  const double inv = 1.0 / static_cast<double>(size);
  auto t = torch::empty({3, size, size});
  auto acc = t.accessor<float, 3>();
  for (int64_t py = 0; py < size; ++py) {
    for (int64_t px = 0; px < size; ++px) {
      Rgb sum{0.0, 0.0, 0.0};
      for (int j = 0; j < kSub; ++j) {
        for (int i = 0; i < kSub; ++i) {
          const double x = (static_cast<double>(px) + (i + 0.5) / kSub) * inv;
          const double y = (static_cast<double>(py) + (j + 0.5) / kSub) * inv;
          const Rgb c = shade(x, y);
          for (size_t k = 0; k < 3; ++k) sum[k] += c[k];
        }
      }
      for (size_t k = 0; k < 3; ++k) {
        const double v = std::clamp(sum[k] / (kSub * kSub) * shot.brightness, 0.0, 1.0);
        // Quantise to 8 bits so in-memory renders equal their PNG round trip.
        acc[static_cast<int64_t>(k)][py][px] = byte_to_unit(unit_to_byte(static_cast<float>(v * 2.0 - 1.0)));
      }
    }
  }
  const auto s = static_cast<double>(size);
  auto to_px = [&](const std::array<double, 2>& p) { return Point2{p[0] * s - 0.5, p[1] * s - 0.5}; };
  Landmarks lm{to_px(eye_centres[0]), to_px(eye_centres[1]), to_px(nose), to_px(mouth_l), to_px(mouth_r)};
  return {ImageBuffer(t), lm};
}

DatasetManifest generate_toy_dataset(int64_t n_identities, int64_t images_per_identity, int64_t size,
                                     uint64_t rng_seed, const std::filesystem::path& out_dir) {
  if (n_identities < 2) throw SpecError("toy dataset needs at least 2 identities");
  if (images_per_identity < 2) throw SpecError("toy dataset needs at least 2 images per identity");
  try {
    std::filesystem::create_directories(out_dir / "images");
  } catch (const std::filesystem::filesystem_error& e) {
    throw IoError("cannot create " + out_dir.string() + ": " + e.what());
  }

  std::vector<FaceRecord> records;
  records.reserve(static_cast<size_t>(n_identities * images_per_identity));
  char name[64];
  for (int64_t i = 0; i < n_identities; ++i) {
    const auto identity = sample_toy_identity(derive_seed(rng_seed, 1'000'000 + static_cast<uint64_t>(i)));
    std::snprintf(name, sizeof(name), "id_%03lld", static_cast<long long>(i));
    const std::string id_name = name;
    for (int64_t k = 0; k < images_per_identity; ++k) {
      const auto record_index = static_cast<uint64_t>(i * images_per_identity + k);
      const auto shot = sample_toy_shot(derive_seed(rng_seed, record_index));
      const auto face = render_toy_face(identity, shot, size);
      std::snprintf(name, sizeof(name), "img_%04lld.png", static_cast<long long>(k));
      const std::string rel = "images/" + id_name + "/" + name;
      save_png(out_dir / rel, face.image);
      records.push_back({id_name, rel, face.landmarks, shot.pose, Split::Train});
    }
  }
  assign_splits(records);
  DatasetManifest manifest(std::move(records), size, out_dir);
  manifest.save(out_dir / "manifest.jsonl");
  return manifest;
}

}  // namespace occfill
