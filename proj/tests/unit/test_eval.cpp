#include <doctest.h>

#include <json.hpp>

#include "../support.hpp"
#include "occfill/errors.hpp"
#include "occfill/eval.hpp"
#include "occfill/pipeline.hpp"
#include "occfill/trainer.hpp"

using namespace occfill;
using testing::random_image;

namespace {

class FlatEmbedder final : public IdentityEmbedder {
 public:
  torch::Tensor embed_batch(const torch::Tensor& images) const override {
    return images.flatten(1).slice(1, 0, 4) * scale;
  }
  int64_t dim() const override { return 4; }
  bool frozen() const override { return true; }
  uint64_t checksum() const override { return 0; }
  double scale = 1.0;
};

std::shared_ptr<ConvIdentityEmbedder> untrained_embedder() {
  ConvEmbedder net(64, 16, 10);
  init_weights(*net, 3);
  auto e = std::make_shared<ConvIdentityEmbedder>(net);
  e->freeze();
  return e;
}

}  // namespace

TEST_CASE("PSNR conventions") {
  std::mt19937_64 rng(1);
  const auto a = random_image(rng, 16, 16);
  CHECK(psnr(a, a) == kPsnrCap);
  const auto zero = ImageBuffer::zeros(16, 16);
  // 0.2 in [-1,1] is an offset of 0.1 in [0,1].
  const auto shifted = ImageBuffer::filled(16, 16, {0.2f, 0.2f, 0.2f});
  CHECK(psnr(zero, shifted) == doctest::Approx(20.0).epsilon(1e-6));
  const auto b = random_image(rng, 16, 16);
  CHECK(std::abs(psnr(a, b) - psnr(b, a)) < 1e-9);
  CHECK_THROWS_AS(psnr(a, random_image(rng, 8, 8)), ShapeError);

  auto m = torch::zeros({1, 16, 16});
  m.slice(1, 4, 8).fill_(1.0f);
  const Mask region(m);
  const auto partly = composite(zero, shifted, region);
  CHECK(psnr(zero, partly, &region) == doctest::Approx(20.0).epsilon(1e-6));
  CHECK(psnr(zero, partly) > 20.0);
}

TEST_CASE("SSIM conventions") {
  std::mt19937_64 rng(2);
  const auto a = random_image(rng, 32, 32), b = random_image(rng, 32, 32);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-9);
  CHECK(ssim(a, b) >= -1.0);
  CHECK(ssim(a, b) <= 1.0);
  CHECK_THROWS_AS(ssim(random_image(rng, 10, 10), random_image(rng, 10, 10)), SizeError);
  CHECK_THROWS_AS(ssim(a, random_image(rng, 16, 16)), ShapeError);
}

TEST_CASE("SSIM of a toy face against its photometric negative is low") {
  const auto m = testing::toy_manifest();
  SampleBuilder b(m, MaskSpec{});
  for (size_t i : {0, 50, 120}) {
    const auto& face = b.aligned(i);
    const ImageBuffer negative(-face.tensor());  // 1 - x on [0,1]
    CHECK(ssim(face, negative) < 0.3);
  }
}

TEST_CASE("verification decisions") {
  FlatEmbedder e;
  const auto a = ImageBuffer::filled(4, 4, {0.5f, 0.1f, 0.2f});
  const auto r = verify_identity(e, a, a, 1.0, "self");
  CHECK(r.cosine_similarity == 1.0);
  CHECK(r.same);
  CHECK(r.pair_id == "self");

  const std::vector<float> x{1, 0, 0}, y{0, 1, 0};
  CHECK(cosine_similarity(x, y) == 0.0);
  const std::vector<float> p{0.3f, -0.2f, 0.9f}, q{0.1f, 0.4f, 0.5f}, q5{0.5f, 2.0f, 2.5f};
  CHECK(cosine_similarity(p, q) == doctest::Approx(cosine_similarity(p, q5)).epsilon(1e-6));

  // Scaling the embedding never flips a decision.
  auto t = torch::zeros({3, 4, 4});
  t[0][0][0] = 0.5f;
  t[0][0][1] = -0.2f;
  const ImageBuffer c(t);
  const double base = verify_identity(e, a, c, 0.0).cosine_similarity;
  e.scale = 7.5;
  CHECK(verify_identity(e, a, c, 0.0).cosine_similarity == doctest::Approx(base).epsilon(1e-6));
}

TEST_CASE("equal-error threshold") {
  const std::vector<ScoredPair> pairs = {{0.9, true}, {0.8, true}, {0.7, true}, {0.4, true},
                                         {0.6, false}, {0.3, false}, {0.2, false}, {0.1, false}};
  // At 0.7: FRR 1/4, FAR 0/4; at 0.6: FRR 1/4, FAR 1/4.
  CHECK(equal_error_threshold(pairs) == 0.6);
  CHECK_THROWS_AS(equal_error_threshold({{0.5, true}}), CalibrationError);

  const auto m = testing::toy_manifest();
  std::vector<FaceRecord> one;
  for (const auto& r : m.records())
    if (r.identity_id == "id_000") one.push_back(r);
  CHECK_THROWS_AS(calibrate_threshold(*untrained_embedder(), DatasetManifest(one, 64, m.root())), CalibrationError);
}

TEST_CASE("ground truth as prediction hits the metric ceiling") {
  const auto m = testing::toy_manifest();
  EvalOptions opt;
  const auto r = evaluate_predictor([](const TrainingSample& s) { return s.target; }, m, *untrained_embedder(), opt);
  CHECK(r.n_samples == 20);
  CHECK(r.n_skipped == 0);
  CHECK(r.psnr_mean == kPsnrCap);
  CHECK(r.ssim_mean == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.verif_vs_groundtruth == 1.0);
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["n_samples"] == 20);
  CHECK(r.to_table().find("psnr_mean") != std::string::npos);
}

TEST_CASE("too many failed samples abort the evaluation") {
  const auto m = testing::toy_manifest();
  int calls = 0;
  auto flaky = [&](const TrainingSample& s) {
    if (calls++ % 4 == 0) throw ShapeError("synthetic failure");
    return s.target;
  };
  EvalOptions opt;
  opt.threshold = 0.5;
  CHECK_THROWS_AS(evaluate_predictor(flaky, m, *untrained_embedder(), opt), TrainingError);
  calls = 1;
  auto rare = [&](const TrainingSample& s) {
    if (++calls == 5) throw ShapeError("synthetic failure");
    return s.target;
  };
  const auto r = evaluate_predictor(rare, m, *untrained_embedder(), opt);
  CHECK(r.n_skipped == 1);
  CHECK(r.n_samples == 19);
}

TEST_CASE("evaluation does not modify the model") {
  const auto m = testing::toy_manifest();
  auto g = build_generator({64, 9, 3, 8, 0}, 1);
  const auto before = parameter_checksum(*g);
  EvalOptions opt;
  opt.threshold = 0.5;
  const auto r = evaluate(g, m, *untrained_embedder(), opt);
  CHECK(parameter_checksum(*g) == before);
  CHECK(std::isfinite(r.psnr_mean));
  CHECK(r.verif_vs_reference >= 0.0);
  CHECK(r.verif_vs_reference <= 1.0);
}

TEST_CASE("a toy-trained model beats an untrained one and the raw masked input") {
  const auto m = testing::toy_manifest();
  auto emb = untrained_embedder();
  TrainConfig c;
  c.epochs = 5;
  c.generator = {64, 9, 3, 16, 0};
  c.discriminator = {6, 3, 16};
  const auto dir = testing::scratch_dir("eval_trained");
  auto trained = load_generator(train(c, m, emb.get(), TrainOptions{dir, false, nullptr}));
  auto untrained = build_generator(c.generator, 0);
  EvalOptions opt;
  opt.threshold = 0.5;
  const auto rt = evaluate(trained, m, *emb, opt);
  const auto ru = evaluate(untrained, m, *emb, opt);
  const auto rm = evaluate_predictor([](const TrainingSample& s) { return s.masked; }, m, *emb, opt);
  CHECK(rt.psnr_mean > ru.psnr_mean);
  CHECK(rt.psnr_mean > rm.psnr_mean);
}

TEST_CASE("pose sweep cells share the background") {
  const auto m = testing::toy_manifest();
  SampleBuilder b(m, MaskSpec{});
  const auto s = b.build(m.indices(Split::Test)[0], 1);
  auto g = build_generator({64, 9, 3, 8, 0}, 4);
  const auto sweep = pose_sweep(g, s, parse_pose_list("15,20,0;15,40,0;0,0,0"));
  REQUIRE(sweep.cells.size() == 3);
  const auto outside = s.mask.tensor().expand({3, 64, 64}) < 0.5;
  for (const auto& c : sweep.cells) {
    CHECK(torch::equal(c.tensor().masked_select(outside), s.masked.tensor().masked_select(outside)));
  }
  CHECK(sweep.sheet.width() == 3 * 64);
  CHECK(sweep.sheet.height() > 64);
  CHECK(masked_l1(sweep.cells[0], sweep.cells[1], s.mask) > 0.0);
  CHECK_THROWS_AS(pose_sweep(g, s, {}), SpecError);
}

TEST_CASE("masked L1 only looks inside the hole") {
  auto m = torch::zeros({1, 4, 4});
  m[0][0][0] = 1.0f;
  const Mask mask(m);
  auto t = torch::zeros({3, 4, 4});
  t.select(0, 1).fill_(0.5f);
  t[0][0][0] = 0.3f;
  CHECK(masked_l1(ImageBuffer::zeros(4, 4), ImageBuffer(t), mask) == doctest::Approx((0.3 + 0.5) / 3.0));
  CHECK(masked_l1(ImageBuffer::zeros(4, 4), ImageBuffer(t), Mask::zeros(4, 4)) == 0.0);
}
