#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mftnet/cli.hpp"
#include "test_util.hpp"

using namespace mftnet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mftnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  const Run r = cli({"params", "--bogus"});
  CHECK(r.code == 2);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(cli({"params", "--precision", "16"}).code == 2);
  CHECK(cli({"--version"}).code == 0);
  CHECK(cli({"params", "--help"}).code == 0);
}

TEST_CASE("domain errors exit with 1") {
  const auto dir = testutil::temp_dir("cli-err");
  CHECK(cli({"params", "--variant", "huge", "--out", dir.string()}).code == 1);
  CHECK(cli({"train", "--out", dir.string()}).code == 1);  // no data
  CHECK(cli({"train", "--data", (dir / "none").string(), "--out", dir.string()}).code == 1);
  CHECK(cli({"params", "--config", (dir / "none.json").string()}).code == 1);
  std::ofstream(dir / "bad.json") << R"({"modle": {}})";
  CHECK(cli({"params", "--config", (dir / "bad.json").string()}).code == 1);
  fs::remove_all(dir);
}

TEST_CASE("params reports the totals and writes a manifest") {
  const auto dir = testutil::temp_dir("cli-params");
  const Run full = cli({"params", "--variant", "full", "--out", dir.string()});
  CHECK(full.code == 0);
  CHECK(full.out.find("trainable parameters: 16096") != std::string::npos);
  const Run base = cli({"params", "--variant", "eegnet-baseline", "--out", dir.string()});
  CHECK(base.out.find("trainable parameters: 3274") != std::string::npos);

  const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(m["version"] == kVersion);
  CHECK(m["command"] == "params");
  CHECK(m["seed"] == 42);
  CHECK(m["config"]["model"]["variant"] == "eegnet-baseline");
  CHECK(m["argv"].size() == 6);
  CHECK(m.contains("kernels"));
  CHECK(fs::exists(dir / "params.csv"));
  fs::remove_all(dir);
}

TEST_CASE("command-line overrides win over the config file") {
  const auto dir = testutil::temp_dir("cli-cfg");
  RunConfig rc;
  rc.model.variant = Variant::no_multiscale;
  rc.train.seed = 5;
  rc.train.epochs = 3;
  rc.out_dir = (dir / "from-file").string();
  std::ofstream(dir / "run.json") << run_config_to_json(rc);
  const RunConfig back = run_config_from_json(run_config_to_json(rc));
  CHECK(run_config_to_json(back) == run_config_to_json(rc));

  CHECK(cli({"params", "--config", (dir / "run.json").string()}).code == 0);
  auto m = nlohmann::json::parse(slurp(dir / "from-file" / "manifest.json"));
  CHECK(m["config"]["model"]["variant"] == "no-multiscale");
  CHECK(m["seed"] == 5);

  CHECK(cli({"params", "--config", (dir / "run.json").string(), "--seed", "9", "--variant", "full", "--out",
             (dir / "cli").string()})
            .code == 0);
  m = nlohmann::json::parse(slurp(dir / "cli" / "manifest.json"));
  CHECK(m["config"]["model"]["variant"] == "full");
  CHECK(m["seed"] == 9);
  CHECK(m["config"]["train"]["epochs"] == 3);
  fs::remove_all(dir);
}

TEST_CASE("synth, train, interpret and deletion-test end to end") {
  const auto dir = testutil::temp_dir("cli-e2e");
  const std::string data = (dir / "data").string();
  REQUIRE(cli({"synth", "--out", data, "--subjects", "1", "--sessions", "2", "--trials-per-class", "6", "--channels",
               "8", "--samples", "128", "--snr", "5"})
              .code == 0);
  CHECK(fs::exists(dir / "data" / "sub-01_ses-1.etf"));
  CHECK(fs::exists(dir / "data" / "sub-01_ses-1.json"));

  const std::string run = (dir / "run").string();
  const Run t = cli({"train", "--data", data, "--out", run, "--epochs", "2"});
  REQUIRE(t.code == 0);
  CHECK(t.out.find("session 2 accuracy") != std::string::npos);
  for (const char* f : {"history.csv", "results.csv", "model.mftw", "manifest.json"}) CHECK(fs::exists(fs::path(run) / f));
  const auto manifest = nlohmann::json::parse(slurp(fs::path(run) / "manifest.json"));
  CHECK(manifest["inputs"].size() == 2);
  CHECK(manifest["inputs"][0]["crc32"].get<std::string>().size() == 8);

  std::ofstream(dir / "montage.json") << R"(["F3","F4","C3","Cz","C4","P3","Pz","P4"])";
  const std::string interp = (dir / "interp").string();
  const Run i = cli({"interpret", "--data", data, "--out", interp, "--checkpoint", run + "/model.mftw",
                     "--finetune-epochs", "1", "--montage", (dir / "montage.json").string()});
  if (i.code == 0) {
    CHECK(slurp(fs::path(interp) / "scores_class0.csv").find("C3,") != std::string::npos);
    CHECK(fs::exists(fs::path(interp) / "map_class1.csv"));
  } else {
    // An untrained class may have no correctly classified trials.
    CHECK(i.code == 1);
    CHECK(i.err.find("correctly classified") != std::string::npos);
  }

  const std::string del = (dir / "del").string();
  const Run d = cli({"deletion-test", "--data", data, "--out", del, "--checkpoint", run + "/model.mftw",
                     "--finetune-epochs", "1", "--fractions", "0,0.5,1"});
  CHECK((d.code == 0 || d.code == 1));
  if (d.code == 0) CHECK(slurp(fs::path(del) / "deletion.csv").rfind("fraction,mean_confidence,std,mode,class", 0) == 0);
  CHECK(cli({"deletion-test", "--data", data, "--out", del, "--fractions", "0.5,1"}).code == 1);
  fs::remove_all(dir);
}

TEST_CASE("protocol output is identical across runs") {
  const auto dir = testutil::temp_dir("cli-proto");
  const std::string data = (dir / "data").string();
  REQUIRE(cli({"synth", "--out", data, "--subjects", "2", "--sessions", "2", "--trials-per-class", "4", "--channels",
               "8", "--samples", "128"})
              .code == 0);
  const Run a = cli({"protocol", "--data", data, "--out", (dir / "a").string(), "--epochs", "1"});
  const Run b = cli({"protocol", "--data", data, "--out", (dir / "b").string(), "--epochs", "1"});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(slurp(dir / "a" / "results.csv") == slurp(dir / "b" / "results.csv"));
  const auto summary = nlohmann::json::parse(slurp(dir / "a" / "summary.json"));
  CHECK(summary.contains("grand_mean"));
  CHECK(summary["subject_means"].size() == 2);
  CHECK(a.out.find("±") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("ablate prints the checkmark grid") {
  const auto dir = testutil::temp_dir("cli-ablate");
  const std::string data = (dir / "data").string();
  REQUIRE(cli({"synth", "--out", data, "--subjects", "1", "--sessions", "2", "--trials-per-class", "3", "--channels",
               "8", "--samples", "160"})
              .code == 0);
  const Run r = cli({"ablate", "--data", data, "--out", (dir / "out").string(), "--epochs", "1"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("✓") != std::string::npos);
  const std::string csv = slurp(dir / "out" / "ablation.csv");
  CHECK(csv.find("full,1,1,") != std::string::npos);
  CHECK(csv.find("eegnet-baseline,0,0,") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("latency reports timings") {
  const auto dir = testutil::temp_dir("cli-lat");
  RunConfig rc;
  rc.model = gradcheck_config();
  std::ofstream(dir / "small.json") << run_config_to_json(rc);
  const Run r = cli({"latency", "--config", (dir / "small.json").string(), "--trials", "5", "--warmup", "1", "--out",
                     dir.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("median") != std::string::npos);
  CHECK(fs::exists(dir / "latency.json"));
  fs::remove_all(dir);
}
