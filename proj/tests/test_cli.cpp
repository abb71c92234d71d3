#include "doctest_torch.hpp"

#include <fstream>
#include <iterator>

#include <opencv2/imgcodecs.hpp>

#include "test_support.hpp"
#include "ugdiml/cli.hpp"
#include "ugdiml/trainer.hpp"

using namespace ugdiml;
using ugdiml::testing::TempDir;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "ugdiml");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  return run_cli(static_cast<int>(args.size()), argv.data());
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

// One small dataset and a briefly trained checkpoint shared by the cases.
struct Workspace {
  TempDir dir{"cli"};
  std::filesystem::path config = dir / "tiny.json";
  std::filesystem::path checkpoint;

  Workspace() {
    REQUIRE(run({"synth", "-o", (dir / "data").string(), "--count", "6", "--size", "64",
                 "--bases", "4", "--seed", "3"}) == 0);
    write(config, R"({"model": {"profile": "tiny"},
      "train": {"mode": "CIML", "batch_size": 3, "learning_rate": 1e-3, "epochs": 1,
                "output_dir": ")" + (dir / "run").string() + R"("},
      "data": {"train_manifest": ")" + (dir / "data" / "manifest.jsonl").string() + R"(",
               "test_manifest": ")" + (dir / "data" / "manifest.jsonl").string() + R"(",
               "jpeg_aug": false}})");
    REQUIRE(run({"train", "-c", config.string(), "-q"}) == 0);
    checkpoint = dir / "run" / "final.ckpt";
  }

  std::string image(const char* kind, int i = 0) const {
    char name[64];
    std::snprintf(name, sizeof(name), "%s/train_%05d.png", kind, i);
    return (dir / "data" / name).string();
  }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run({}) == 1);
  CHECK(run({"frobnicate"}) == 1);
  CHECK(run({"infer"}) == 1);
  CHECK(run({"--help"}) == 0);
}

TEST_CASE("train writes a checkpoint and a loss log") {
  auto& w = workspace();
  CHECK(std::filesystem::exists(w.checkpoint));
  CHECK(std::filesystem::exists(w.dir / "run" / "config.json"));
  const auto log = slurp(w.dir / "run" / "train_log.jsonl");
  CHECK(std::count(log.begin(), log.end(), '\n') == 2);
  CHECK(log.find("\"lr\"") != std::string::npos);
}

TEST_CASE("malformed configs exit with 1") {
  auto& w = workspace();
  write(w.dir / "broken.json", "{ \"train\": ");
  CHECK(run({"train", "-c", (w.dir / "broken.json").string()}) == 1);
  write(w.dir / "unknown.json", R"({"train": {"epoch": 3}})");
  CHECK(run({"train", "-c", (w.dir / "unknown.json").string()}) == 1);
  write(w.dir / "nodata.json", R"({"train": {"epochs": 1}})");
  CHECK(run({"train", "-c", (w.dir / "nodata.json").string()}) == 1);
}

TEST_CASE("resumed runs continue the step counter") {
  auto& w = workspace();
  const auto out = (w.dir / "resumed").string();
  CHECK(run({"train", "-c", w.config.string(), "-q", "--output-dir", out, "--max-steps", "1"}) == 0);
  const auto ck = w.dir / "resumed" / "checkpoints" / "step_00000001.ckpt";
  REQUIRE(std::filesystem::exists(ck));
  CHECK(run({"train", "-c", w.config.string(), "-q", "--output-dir", out, "--resume",
             ck.string()}) == 0);
  CHECK(load_for_inference(w.dir / "resumed" / "final.ckpt").step == 2);
}

TEST_CASE("IML inference writes a binary mask") {
  auto& w = workspace();
  const auto out = w.dir / "infer_iml";
  CHECK(run({"infer", "--checkpoint", w.checkpoint.string(), "--forged", w.image("forged"),
             "-o", out.string()}) == 0);
  const cv::Mat mask = cv::imread((out / "mask.png").string(), cv::IMREAD_UNCHANGED);
  REQUIRE_FALSE(mask.empty());
  CHECK(mask.channels() == 1);
  CHECK(mask.rows == 64);
  CHECK(cv::countNonZero((mask != 0) & (mask != 255)) == 0);
}

TEST_CASE("trajectory dump writes one file per step") {
  auto& w = workspace();
  const auto out = w.dir / "infer_traj";
  CHECK(run({"infer", "--checkpoint", w.checkpoint.string(), "--forged", w.image("forged"),
             "--original", w.image("original"), "--steps", "3", "--dump-trajectory",
             "--uncertainty", "-o", out.string()}) == 0);
  int files = 0;
  for (const auto& e : std::filesystem::directory_iterator(out / "trajectory")) {
    CHECK(e.path().extension() == ".png");
    ++files;
  }
  CHECK(files == 3);
  CHECK(std::filesystem::exists(out / "uncertainty.png"));
}

TEST_CASE("inference artifacts are byte-for-byte reproducible") {
  auto& w = workspace();
  for (const char* name : {"rep_a", "rep_b"}) {
    REQUIRE(run({"infer", "--checkpoint", w.checkpoint.string(), "--forged", w.image("forged", 1),
                 "--original", w.image("original", 1), "--steps", "4", "--seed", "5",
                 "--dump-trajectory", "--uncertainty", "-o", (w.dir / name).string()}) == 0);
  }
  for (const char* file : {"mask.png", "probability.png", "uncertainty.png"}) {
    CHECK(slurp(w.dir / "rep_a" / file) == slurp(w.dir / "rep_b" / file));
  }
}

TEST_CASE("inference argument mismatches") {
  auto& w = workspace();
  const auto ck = w.checkpoint.string();
  CHECK(run({"infer", "--checkpoint", ck, "--forged", w.image("forged"), "--mode", "CIML"}) == 1);
  CHECK(run({"infer", "--checkpoint", ck, "--forged", w.image("forged"), "--original",
             w.image("original"), "--mode", "IML"}) == 1);
  CHECK(run({"infer", "--checkpoint", ck, "--forged", w.image("forged"), "--zero-noise",
             "--uncertainty"}) == 1);
  CHECK(run({"infer", "--checkpoint", (w.dir / "nope.ckpt").string(), "--forged",
             w.image("forged")}) == 2);
  CHECK(run({"infer", "--checkpoint", ck, "--forged", (w.dir / "nope.png").string()}) == 2);
}

TEST_CASE("zero-noise inference") {
  auto& w = workspace();
  CHECK(run({"infer", "--checkpoint", w.checkpoint.string(), "--forged", w.image("forged"),
             "--zero-noise", "-o", (w.dir / "zero").string()}) == 0);
  CHECK(std::filesystem::exists(w.dir / "zero" / "mask.png"));
}

TEST_CASE("eval reports and reproduces") {
  auto& w = workspace();
  for (const char* name : {"eval_a", "eval_b"}) {
    REQUIRE(run({"eval", "--checkpoint", w.checkpoint.string(), "--mode", "CIML", "--steps", "2",
                 "--seed", "9", "-o", (w.dir / name).string()}) == 0);
  }
  const auto report = slurp(w.dir / "eval_a" / "report.txt");
  for (const char* col : {"F1", "IOU", "AUC"}) CHECK(report.find(col) != std::string::npos);
  CHECK(slurp(w.dir / "eval_a" / "metrics.jsonl") == slurp(w.dir / "eval_b" / "metrics.jsonl"));
  CHECK(report == slurp(w.dir / "eval_b" / "report.txt"));
}

TEST_CASE("eval errors") {
  auto& w = workspace();
  write(w.dir / "empty.jsonl", R"({"schema":"ugdiml-manifest","version":1,"split":"test"})");
  CHECK(run({"eval", "--checkpoint", w.checkpoint.string(), "--manifest",
             (w.dir / "empty.jsonl").string()}) == 2);
  CHECK(run({"eval", "--checkpoint", w.checkpoint.string(), "--manifest",
             (w.dir / "absent.jsonl").string()}) == 2);
}

TEST_CASE("visualize builds a panel") {
  auto& w = workspace();
  const auto out = w.dir / "panel.png";
  REQUIRE(run({"infer", "--checkpoint", w.checkpoint.string(), "--forged", w.image("forged"),
               "--steps", "2", "--uncertainty", "-o", (w.dir / "vis").string()}) == 0);
  CHECK(run({"visualize", "--forged", w.image("forged"), "--gt", w.image("mask"), "--pred",
             (w.dir / "vis" / "mask.png").string(), "--uncertainty",
             (w.dir / "vis" / "uncertainty.png").string(), "-o", out.string()}) == 0);
  const cv::Mat panel = cv::imread(out.string());
  CHECK(panel.cols == 5 * 64);
  CHECK(panel.rows == 64);
}
