#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "datn/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "datn");
  std::ostringstream out, err;
  const int code = datn::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "datn_test_cli";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<json> lines(const std::string& text) {
  std::vector<json> v;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);)
    if (!line.empty()) v.push_back(json::parse(line));
  return v;
}

std::string small_corpus() {
  const auto p = scratch("corpus.txt");
  if (!fs::exists(p)) {
    std::string s;
    for (int i = 0; s.size() < 30000; ++i) s += "line " + std::to_string(i % 97) + " of a small test corpus.\n";
    std::ofstream(p) << s;
  }
  return p.string();
}

std::vector<std::string> tiny_train(const std::string& out) {
  return {"train", "--corpus", small_corpus(), "--steps", "4", "--batch", "2", "--seq-len", "32", "--eval-every", "2",
          "--out", out};
}

}  // namespace

TEST_CASE("maps") {
  auto r = invoke({"maps", "--name", "even", "--layers", "24"});
  CHECK(r.code == 0);
  CHECK(r.out == "{2,4,6,8,10,12,14,16,18,20,22,24}\n");
  CHECK(r.err.find("resolved config") != std::string::npos);
  CHECK(invoke({"maps", "--name", "bilateral", "--layers", "24"}).out == "{1,24}\n");
  r = invoke({"maps", "--layers", "24"});
  CHECK(r.out.find("bottom: {13,14,15,16,17,18,19,20,21,22,23,24}\n") != std::string::npos);
  CHECK(invoke({"maps", "--name", "hybrid", "--layers", "4", "--variant", "mlp"}).out == "{2,4}  mlp,standard,mlp,standard\n");
  CHECK(invoke({"maps", "--name", "sideways"}).code == 1);
}

TEST_CASE("usage errors and help") {
  CHECK(invoke({}).code == 1);
  CHECK(invoke({"frobnicate"}).code == 1);
  CHECK(invoke({"maps", "--bogus", "1"}).code == 1);
  CHECK(invoke({"cost", "--B", "x"}).code == 1);
  CHECK(invoke({"train"}).code == 1);  // --out is required
  const std::map<std::string, std::vector<std::string>> flags = {
      {"train", {"--config", "--corpus", "--steps", "--seed", "--out", "--layer-map", "--variant", "--dtype"}},
      {"eval", {"--checkpoint", "--contexts", "--skip", "--out"}},
      {"diagnose", {"--checkpoint", "--config", "--eval-file", "--csv", "--prelogits", "--out", "--seed"}},
      {"cost", {"--variant", "--metric", "--stage", "--B", "--L", "--d", "--h", "--t", "--precomputed", "--out"}},
      {"equiv", {"--variant", "--L", "--dtype", "--seed", "--out"}},
      {"maps", {"--name", "--layers", "--out"}},
  };
  for (const auto& [cmd, names] : flags) {
    CAPTURE(cmd);
    auto r = invoke({cmd, "--help"});
    CHECK(r.code == 0);
    for (const auto& f : names) CHECK(r.out.find(f) != std::string::npos);
  }
  CHECK(invoke({"--help"}).code == 0);
}

TEST_CASE("cost") {
  auto r = invoke({"cost", "--variant", "standard", "--metric", "flops", "--stage", "prefill", "--B", "1", "--L", "2",
                   "--d", "4"});
  CHECK(r.code == 0);
  CHECK(r.out == "256\n");
  r = invoke({"cost", "--variant", "mlp", "--metric", "cache", "--B", "7", "--L", "9", "--d", "12", "--h", "3"});
  CHECK(r.out == "0\n");
  r = invoke({"cost", "--variant", "approx", "--metric", "activation_memory", "--B", "1", "--L", "1", "--d", "6", "--h",
              "3", "--t", "4", "--formula"});
  CHECK(r.out == "51/2\n");
  CHECK(r.err.find("11BLd/t + 3Bd^2/ht") != std::string::npos);

  const auto csv = scratch("cost.csv");
  r = invoke({"cost", "--B", "1,2", "--L", "16", "--d", "8", "--h", "2", "--out", csv.string()});
  CHECK(r.code == 0);
  const std::string text = slurp(csv);
  CHECK(text.rfind("variant,metric,stage,B,L,d,h,t,value\n", 0) == 0);
  // 7 variants x 2 batch sizes x (3 stage-free metrics + flops at 2 stages).
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 7 * 2 * 5);
  CHECK_FALSE(fs::exists(csv.string() + ".tmp"));
  auto again = invoke({"cost", "--B", "2,1", "--L", "16", "--d", "8", "--h", "2"});
  CHECK(again.out == text);

  CHECK(invoke({"cost", "--variant", "standard", "--B", "1", "--L", "2", "--d", "5", "--h", "2"}).code == 1);
  CHECK(invoke({"cost", "--L", "2", "--d", "4"}).code == 1);
}

TEST_CASE("equiv") {
  auto r = invoke({"equiv", "--variant", "nonapprox", "--L", "32", "--dtype", "f64"});
  CHECK(r.code == 0);
  auto recs = lines(r.out);
  REQUIRE(recs.size() == 3);  // default head widths 1, 4, 16
  for (const auto& j : recs) {
    CHECK(j["passed"] == true);
    CHECK(j["max_rel_err"].get<double>() < 1e-10);
  }
  r = invoke({"equiv", "--dtype", "f32", "--L", "1,8,64", "--d-head", "4"});
  CHECK(r.code == 0);
  CHECK(lines(r.out).size() == 3 * 3);
  CHECK(invoke({"equiv", "--variant", "standard"}).code == 1);
}

TEST_CASE("train, eval and diagnose") {
  const auto ckpt = scratch("m.ckpt").string();
  auto r = invoke(tiny_train(ckpt));
  REQUIRE(r.code == 0);
  CHECK(r.err.find("resolved config") != std::string::npos);
  auto summary = json::parse(r.out);
  CHECK(summary["steps"] == 4);
  CHECK(summary["aborted"] == false);

  const auto log = lines(slurp(ckpt + ".log.jsonl"));
  std::size_t steps = 0;
  for (const auto& j : log) {
    if (j.contains("loss")) {
      ++steps;
      std::set<std::string> keys;
      for (const auto& [k, v] : j.items()) keys.insert(k);
      CHECK(keys == std::set<std::string>{"step", "loss", "lr", "grad_norm", "elapsed_s"});
    } else {
      CHECK(j.contains("val_loss"));
    }
  }
  CHECK(steps == 4);

  SUBCASE("reproducible artifacts") {
    const auto other = scratch("m2.ckpt").string();
    REQUIRE(invoke(tiny_train(other)).code == 0);
    CHECK(slurp(other) == slurp(ckpt));
    auto a = lines(slurp(ckpt + ".log.jsonl")), b = lines(slurp(other + ".log.jsonl"));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i].erase("elapsed_s");
      b[i].erase("elapsed_s");
      CHECK(a[i] == b[i]);
    }
  }

  SUBCASE("eval") {
    const auto out = scratch("ppl.jsonl").string();
    auto e = invoke({"eval", "--checkpoint", ckpt, "--contexts", "16,32", "--out", out});
    REQUIRE(e.code == 0);
    auto recs = lines(e.out);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0]["context"] == 16);
    CHECK(recs[0]["tokens"] == recs[1]["tokens"]);
    CHECK(slurp(out) == e.out);
    CHECK(invoke({"eval", "--checkpoint", ckpt, "--contexts", "512"}).code == 1);
    CHECK(invoke({"eval", "--checkpoint", scratch("missing.ckpt").string()}).code == 1);
  }

  SUBCASE("diagnose") {
    const auto csv = scratch("ind.csv").string(), pre = scratch("pre.jsonl").string();
    auto d = invoke({"diagnose", "--checkpoint", ckpt, "--eval-file", small_corpus(), "--sequences", "2", "--seq-len",
                     "16", "--csv", csv, "--prelogits", pre});
    REQUIRE(d.code == 0);
    auto recs = lines(d.out);
    REQUIRE(recs.size() == 4 * 2 + 4);
    const std::set<std::string> expected = {"layer", "head",  "entropy",  "conc",     "head_div",
                                            "sink",  "loc_foc0", "loc_foc1", "loc_foc2", "loc_foc3"};
    for (const auto& j : recs) {
      std::set<std::string> keys;
      for (const auto& [k, v] : j.items()) keys.insert(k);
      CHECK(keys == expected);
    }
    CHECK(recs[8]["head"].is_null());
    CHECK(lines(slurp(pre)).size() == 4);
    CHECK(slurp(csv).rfind("view,layer,head,", 0) == 0);
  }

  SUBCASE("diagnose refuses a mismatched config") {
    const auto cfg = scratch("other.json");
    std::ofstream(cfg) << R"({"model": {"preset": "desk", "layer_map": "uniform", "variant": "mlp"}})";
    CHECK(invoke({"diagnose", "--checkpoint", ckpt, "--config", cfg.string(), "--eval-file", small_corpus()}).code == 1);
  }
}

TEST_CASE("untrained diagnose from flags") {
  auto d = invoke({"diagnose", "--layer-map", "hybrid", "--variant", "approx", "--eval-file", small_corpus(),
                   "--sequences", "1", "--seq-len", "8"});
  REQUIRE(d.code == 0);
  CHECK(lines(d.out).size() == 4 * 2 + 4);
  CHECK(invoke({"diagnose"}).code == 1);
}

TEST_CASE("numerical failures exit with 2") {
  datn::Model<float> m(datn::preset("desk"), 0);
  m.parameter("final_norm").value[0] = std::numeric_limits<float>::infinity();
  const auto ckpt = scratch("broken.ckpt").string();
  datn::TrainConfig tc;
  tc.corpus_path = small_corpus();
  datn::save_checkpoint(m, tc, ckpt);
  auto r = invoke({"eval", "--checkpoint", ckpt, "--contexts", "16"});
  CHECK(r.code == 2);
  CHECK(r.err.find("numerical failure") != std::string::npos);
}
