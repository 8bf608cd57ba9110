#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "json.hpp"
#include "polpre/pipeline.hpp"
#include "polpre/synth.hpp"
#include "support.hpp"

using namespace polpre;

namespace {

struct Run {
  int rc;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int rc = run_cli(args, out, err);
  return {rc, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("exit codes") {
  const auto help = cli({"--help"});
  CHECK(help.rc == kExitOk);
  for (const char* sub : {"synth", "clean", "annotate", "align", "eval-mrr", "triplets", "mask",
                          "train", "eval"}) {
    CHECK(help.out.find(sub) != std::string::npos);
  }
  CHECK(cli({}).rc == kExitUsage);
  CHECK(cli({"frobnicate"}).rc == kExitUsage);
  CHECK(cli({"align", "--bogus"}).rc == kExitUsage);
  CHECK(cli({"--threads", "0", "synth"}).rc == kExitUsage);
  const auto missing = cli({"align", "--corpus", "no-such-corpus.jsonl", "--out", "x.jsonl"});
  CHECK(missing.rc == kExitData);
  CHECK(missing.err.find("no-such-corpus.jsonl") != std::string::npos);
}

TEST_CASE("a named annotation file that is missing is a data error") {
  gen::TempDir dir("missing");
  const auto s = (dir.path / "synth").string();
  REQUIRE(cli({"synth", "--out", s, "--stories", "2", "--distractors", "0"}).rc == kExitOk);
  const auto r = cli({"align", "--corpus", s + "/corpus.jsonl", "--entities", s + "/entities.jsonl",
                      "--sentiment", s + "/absent.jsonl", "--out", (dir.path / "c.jsonl").string()});
  CHECK(r.rc == kExitData);
  CHECK(r.err.find("absent.jsonl") != std::string::npos);
}

TEST_CASE("prompt subcommand") {
  const auto r = cli({"eval", "prompt", "--text", "X", "--target", "abortion"});
  CHECK(r.rc == kExitOk);
  CHECK(r.out.find("X [SEP] The stance towards abortion is [MASK] .") != std::string::npos);
  CHECK(cli({"eval", "prompt", "--text", "X", "--target", ""}).rc == kExitData);
  CHECK(cli({"eval", "prompt", "--text", "X", "--target", "a", "--template", "11"}).rc == kExitUsage);
}

TEST_CASE("synthetic generator") {
  SynthParams one;
  one.n_stories = 1;
  one.outlets.resize(3);
  const auto s = synthesize(one);
  CHECK(s.corpus.size() == 3);
  CHECK(s.gold.size() == 1);

  SynthParams p;
  p.n_stories = 12;
  p.seed = 4;
  const auto a = synthesize(p);
  const auto b = synthesize(p);
  CHECK(a.corpus == b.corpus);
  const AlignConfig cfg;
  const auto sim = oracle::story_similarity_matrix(a.corpus, a.planted, cfg);
  std::map<std::string, std::string> story;
  for (const auto& g : a.gold) {
    for (const auto& id : g.article_ids) story[id] = g.story_id;
  }
  for (std::size_t i = 0; i < a.corpus.size(); ++i) {
    double worst_within = 2.0, best_across = -1.0;
    for (std::size_t j = 0; j < a.corpus.size(); ++j) {
      if (i == j) continue;
      if (story[a.corpus[i].id] == story[a.corpus[j].id]) {
        worst_within = std::min(worst_within, sim[i][j]);
      } else {
        best_across = std::max(best_across, sim[i][j]);
      }
    }
    CHECK(worst_within > best_across);
  }
}

TEST_CASE("full pipeline is deterministic and writes chained manifests") {
  gen::TempDir one("pipe1"), two("pipe2");
  std::string log;
  REQUIRE(gen::run_pipeline(one.path, 1, 5, &log) == 0);
  REQUIRE(gen::run_pipeline(two.path, 3, 5) == 0);
  const auto m1 = gen::manifests(one.path);
  const auto m2 = gen::manifests(two.path);
  CHECK(m1.size() >= 10);
  CHECK(m1 == m2);
  CHECK(slurp(one / "model.json") == slurp(two / "model.json"));

  const auto align = nlohmann::json::parse(slurp(one / "clusters.jsonl.manifest.json"));
  CHECK(align["stage"] == "align");
  bool chained = false;
  for (const auto& in : align["inputs"]) chained |= in.contains("manifest_sha256");
  CHECK(chained);
  CHECK(std::filesystem::exists(one / "clusters.jsonl.timings.json"));

  // Rerunning a stage overwrites its outputs identically.
  const std::string before = slurp(one / "triplets.jsonl");
  CHECK(cli({"triplets", "--corpus", (one / "clean.jsonl").string(), "--clusters",
             (one / "clusters.jsonl").string(), "--out", (one / "triplets.jsonl").string(),
             "--seed", "5"})
            .rc == 0);
  CHECK(slurp(one / "triplets.jsonl") == before);
  CHECK(m1 == gen::manifests(one.path));

  const auto probe = nlohmann::json::parse(slurp(one / "probe.json"));
  CHECK(probe.contains("accuracy"));
}

TEST_CASE("config file layers under flags") {
  gen::TempDir dir("cfg");
  std::ofstream(dir / "run.toml") << "[synth]\nstories = 3\ndistractors = 0\nduplicates = 0\njunk = 0\n";
  REQUIRE(cli({"--config", (dir / "run.toml").string(), "synth", "--out", (dir / "a").string()}).rc == 0);
  CHECK(load_corpus(dir / "a/corpus.jsonl").size() == 3 * 6);
  REQUIRE(cli({"--config", (dir / "run.toml").string(), "synth", "--out", (dir / "b").string(),
               "--stories", "2"})
              .rc == 0);
  CHECK(load_corpus(dir / "b/corpus.jsonl").size() == 2 * 6);
}
