#include "occfill/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "occfill/config.hpp"
#include "occfill/errors.hpp"
#include "occfill/eval.hpp"
#include "occfill/trainer.hpp"

namespace occfill {

ImageBuffer infer_single(Generator& generator, const ImageBuffer& masked, const Mask& mask,
                         const ImageBuffer& reference, const PoseAngles& pose) {
  const int64_t size = generator->spec().image_size;
  if (masked.empty() || masked.height() != size || masked.width() != size) {
    throw ShapeError("input must be " + std::to_string(size) + "x" + std::to_string(size));
  }
  if (reference.empty() || reference.tensor().sizes() != masked.tensor().sizes()) {
    throw ShapeError("reference must match the input shape");
  }
  if (mask.tensor().dim() != 3 || mask.height() != size || mask.width() != size) {
    throw ShapeError("mask must match the input shape");
  }
  const auto out = generator_forward(generator, masked, reference, render_pose_map(pose, size));
  return composite(masked, out, mask);
}

void PoseSource::validate() const {
  switch (kind) {
    case Kind::Fixed:
      if (!fixed_pose || file) throw PoseSourceError("fixed pose source takes a pose and no file");
      break;
    case Kind::PerFrameFile:
    case Kind::Regressor:
      if (!file || fixed_pose) throw PoseSourceError("file-based pose source takes a file and no fixed pose");
      break;
  }
}

int64_t frame_number(const std::filesystem::path& frame) {
  const auto stem = frame.stem().string();
  if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw IoError("frame name is not numeric: " + frame.filename().string());
  }
  return std::stoll(stem);
}

std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("frame directory not found: " + dir.string());
  std::vector<std::pair<int64_t, std::filesystem::path>> frames;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".png") continue;
    frames.emplace_back(frame_number(e.path()), e.path());
  }
  std::sort(frames.begin(), frames.end());
  std::vector<std::filesystem::path> out;
  for (auto& f : frames) out.push_back(std::move(f.second));
  return out;
}

std::map<int64_t, PoseAngles> read_pose_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PoseSourceError("cannot open pose file " + path.string());
  std::map<int64_t, PoseAngles> poses;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto f = split(line, ',');
    if (f.size() != 4) throw PoseSourceError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    if (lineno == 1 && trim(f[0]) == "frame") continue;
    try {
      poses[std::stoll(trim(f[0]))] = {std::stod(trim(f[1])), std::stod(trim(f[2])), std::stod(trim(f[3]))};
    } catch (const std::exception&) {
      throw PoseSourceError(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return poses;
}

VideoResult infer_video(const VideoJob& job) {
  auto g = load_generator(job.checkpoint);
  return infer_video(job, g);
}

VideoResult infer_video(const VideoJob& job, Generator& generator) {
  job.pose_source.validate();
  const int64_t size = generator->spec().image_size;
  MaskSpec spec = job.mask_spec;
  spec.jitter = 0.0;
  spec.validate();

  const auto frames = list_frames(job.frame_dir);
  if (frames.empty()) throw IoError("no PNG frames in " + job.frame_dir.string());

  // Resolve every pose before writing anything.
  std::vector<PoseAngles> poses(frames.size());
  if (job.pose_source.kind == PoseSource::Kind::Fixed) {
    std::fill(poses.begin(), poses.end(), *job.pose_source.fixed_pose);
  } else if (job.pose_source.kind == PoseSource::Kind::PerFrameFile) {
    const auto table = read_pose_csv(*job.pose_source.file);
    for (size_t i = 0; i < frames.size(); ++i) {
      auto it = table.find(frame_number(frames[i]));
      if (it == table.end()) throw PoseSourceError("no pose for frame " + frames[i].filename().string());
      poses[i] = it->second;
    }
  }
  PoseRegressor regressor{nullptr};
  if (job.pose_source.kind == PoseSource::Kind::Regressor) regressor = load_pose_regressor(*job.pose_source.file);

  const auto reference = resize_image(load_png(job.reference_image), size, size);
  std::filesystem::create_directories(job.out_dir);
  generator->eval();

  VideoResult result;
  std::optional<std::ofstream> csv;
  if (job.ground_truth_dir) {
    result.metrics_csv = job.out_dir / "metrics.csv";
    csv.emplace(*result.metrics_csv, std::ios::trunc);
    *csv << "frame,psnr,ssim,temporal_l1\n";
  }
  ImageBuffer previous;
  double sum_l1 = 0.0;
  for (size_t i = 0; i < frames.size(); ++i) {
    const auto frame = resize_image(load_png(frames[i]), size, size);
    const auto occ = apply_occlusion(frame, spec, 0);
    if (regressor) poses[i] = pose_regress(regressor, occ.masked);
    const auto out = infer_single(generator, occ.masked, occ.mask, reference, poses[i]);
    const auto path = job.out_dir / frames[i].filename();
    save_png(path, out);
    result.frames.push_back(path);

    const double l1 = previous.empty() ? 0.0 : masked_l1(out, previous, occ.mask);
    result.temporal_l1.push_back(l1);
    sum_l1 += l1;
    previous = out;

    if (csv) {
      const auto gt = resize_image(load_png(*job.ground_truth_dir / frames[i].filename()), size, size);
      char row[160];
      std::snprintf(row, sizeof(row), "%lld,%.6f,%.6f,%.6f\n", static_cast<long long>(frame_number(frames[i])),
                    psnr(out, gt), ssim(out, gt), l1);
      *csv << row;
    }
  }
  result.mean_temporal_l1 = frames.size() > 1 ? sum_l1 / static_cast<double>(frames.size() - 1) : 0.0;
  return result;
}

}  // namespace occfill
