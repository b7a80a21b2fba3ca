#include <doctest.h>

#include <fstream>

#include "../support.hpp"
#include "occfill/cli.hpp"
#include "occfill/config.hpp"
#include "occfill/image.hpp"
#include "occfill/trainer.hpp"

using namespace occfill;
namespace fs = std::filesystem;

namespace {

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "occfill");
  return run_cli(args);
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(cli({}) == 1);
  CHECK(cli({"launch"}) == 1);
  CHECK(cli({"train", "--bogus"}) == 1);
  CHECK(cli({"train", "--set", "no_such_key=1"}) == 1);
  CHECK(cli({"train", "--config", "/nonexistent/run.cfg"}) == 1);
  CHECK(cli({"--help"}) == 0);
}

TEST_CASE("runtime errors exit with 2") {
  const auto dir = testing::scratch_dir("cli_runtime");
  CHECK(cli({"train", "--set", "manifest=" + (dir / "missing.jsonl").string()}) == 2);
}

TEST_CASE("toy workflow through the command line") {
  const auto dir = testing::scratch_dir("cli_workflow");
  {
    std::ofstream cfg(dir / "toy.cfg");
    cfg << "data_dir = " << (dir / "data").string() << "\n"
        << "out_dir = " << (dir / "run").string() << "\n"
        << "image_size = 32\ntoy_identities = 3\ntoy_images_per_identity = 20\n"
        << "gen_base_width = 8\ndisc_base_width = 8\ndisc_layers = 2\nembed_dim = 8\n"
        << "embedder_epochs = 2\nepochs = 1\nbatch_size = 8\n";
  }
  const std::string cfg = (dir / "toy.cfg").string();
  REQUIRE(cli({"gen-toy-data", "--config", cfg}) == 0);
  CHECK(fs::exists(dir / "data" / "manifest.jsonl"));
  CHECK(fs::exists(dir / "data" / "resolved_config"));
  REQUIRE(cli({"pretrain-embedder", "--config", cfg}) == 0);
  REQUIRE(cli({"train", "--config", cfg, "--set", "checkpoint_every=2"}) == 0);
  CHECK(latest_checkpoint(dir / "run").has_value());
  const auto resolved = Config::from_file(dir / "run" / "resolved_config");
  CHECK(resolved.get_int("checkpoint_every") == 2);
  CHECK(resolved.get_int("image_size") == 32);

  CHECK(cli({"evaluate", "--config", cfg}) == 0);
  CHECK(fs::exists(dir / "run" / "metrics.json"));

  CHECK(cli({"pose-sweep", "--config", cfg, "--checkpoint", latest_checkpoint(dir / "run")->string(), "--poses",
             "15,20,0;15,40,0", "--out", (dir / "sweep").string()}) == 0);
  const auto sheet = load_png(dir / "sweep" / "pose_sweep.png");
  CHECK(sheet.width() == 2 * 32);

  CHECK(cli({"train-pose-regressor", "--config", cfg, "--set", "pose_epochs=1"}) == 0);
  CHECK(fs::exists(dir / "run" / "pose_regressor.bin"));

  const auto input = dir / "data" / "images" / "id_000" / "img_0000.png";
  CHECK(cli({"infer", "--config", cfg, "--set", "input_image=" + input.string(), "--set",
             "reference_image=" + (dir / "data" / "images" / "id_000" / "img_0001.png").string(), "--set",
             "output_image=" + (dir / "single" / "out.png").string(), "--set", "pose=0,10,0"}) == 0);
  CHECK(fs::exists(dir / "single" / "out.png"));

  CHECK(cli({"benchmark", "--config", cfg, "--size", "32", "--set", "bench_iters=2"}) == 0);
  CHECK(cli({"ablation", "--config", cfg, "--embedder", (dir / "run" / "embedder.bin").string(), "--out",
             (dir / "ablation").string()}) == 0);
  CHECK(fs::exists(dir / "ablation" / "ablation.txt"));
}
