#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>

#include "polpre/alignment.hpp"
#include "polpre/synth.hpp"
#include "support.hpp"

using namespace polpre;

namespace {

Article dated(const std::string& id, const std::string& outlet, const std::string& date,
              const std::string& title, const std::string& body) {
  Article a;
  a.id = id;
  a.outlet = outlet;
  a.published = parse_date(date);
  a.url = "u";
  a.title = title;
  a.paragraphs = {body};
  a.retokenize();
  return a;
}

void tag(AnnotationSet& set, const Article& a, const std::string& word) {
  for (std::size_t i = 0; i < a.tokens.size(); ++i) {
    if (a.tokens[i] == word) {
      set.mutable_for_article(a.id).entities.push_back(
          {a.id, i, i + 1, EntityType::Person, word});
    }
  }
}

WordCounts bag(std::map<std::string, int> m) { return {m.begin(), m.end()}; }

SynthResult small_synth(std::uint64_t seed, std::size_t stories, std::size_t outlets = 3) {
  SynthParams p;
  p.n_stories = stories;
  p.outlets.resize(outlets);
  p.distractors = stories / 2;
  p.day_span = 40;
  p.seed = seed;
  return synthesize(p);
}

// Constraint-scope entity words, rebuilt from the raw spans.
std::set<std::string> constraint_set(const Article& a, const AnnotationSet& ann, std::size_t s) {
  const std::size_t limit = oracle::scope_tokens(a, s).size();
  std::set<std::string> out;
  for (const auto& span : ann.for_article(a.id).entities) {
    if (span.end > limit) continue;
    for (const auto& w : tokenize(span.surface, corpus_tokenizer())) {
      if (!english_stopwords().count(w)) out.insert(w);
    }
  }
  return out;
}

bool admissible(const Article& a, const Article& b, const std::set<std::string>& ea,
                const std::set<std::string>& eb, int window) {
  if (a.outlet == b.outlet) return false;
  const long gap = static_cast<long>(day_number(a.published)) - static_cast<long>(day_number(b.published));
  if (std::labs(gap) > window) return false;
  for (const auto& w : ea) {
    if (eb.count(w)) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("weighted Jaccard") {
  CHECK(weighted_jaccard(bag({{"trump", 2}, {"biden", 1}}), bag({{"trump", 1}, {"senate", 1}})) ==
        doctest::Approx(0.25));
  CHECK(weighted_jaccard(bag({{"a", 3}}), bag({{"a", 3}})) == 1.0);
  CHECK(weighted_jaccard({}, {}) == 0.0);
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    std::map<std::string, int> a, b;
    for (int k = 0; k < 6; ++k) {
      if (rng.bernoulli(0.6)) a[gen::word(rng, 1)] += 1 + static_cast<int>(rng.uniform_index(3));
      if (rng.bernoulli(0.6)) b[gen::word(rng, 1)] += 1 + static_cast<int>(rng.uniform_index(3));
    }
    std::set<std::string> words;
    for (auto& [w, _] : a) words.insert(w);
    for (auto& [w, _] : b) words.insert(w);
    double lo = 0, hi = 0;
    for (const auto& w : words) {
      lo += std::min(a.count(w) ? a[w] : 0, b.count(w) ? b[w] : 0);
      hi += std::max(a.count(w) ? a[w] : 0, b.count(w) ? b[w] : 0);
    }
    const double expect = hi > 0 ? lo / hi : 0.0;
    CHECK(weighted_jaccard(bag(a), bag(b)) == doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("entity words drop stopwords and out-of-scope spans") {
  std::vector<EntitySpan> spans{{"a", 0, 3, EntityType::Org, "The White House"},
                                {"a", 5, 6, EntityType::Person, "Biden"},
                                {"a", 9, 10, EntityType::Person, "Late"}};
  CHECK(entity_words(spans, 9) == bag({{"biden", 1}, {"house", 1}, {"white", 1}}));
}

TEST_CASE("config validation") {
  AlignConfig c;
  CHECK_NOTHROW(c.validate());
  c.alpha = 1.5;
  CHECK_THROWS_AS(c.validate(), DataError);
  c = {};
  c.theta = 0.0;
  CHECK_THROWS_AS(c.validate(), DataError);
  c = {};
  c.window_days = -1;
  CHECK_THROWS_AS(c.validate(), DataError);
}

TEST_CASE("index basics") {
  Corpus one;
  one.add(dated("a", "o", "2021-01-01", "Senate vote", "Lawmakers met."));
  const TfIdfIndex single(one, {}, AlignConfig{});
  CHECK(single.vector(0).norm() == doctest::Approx(1.0));

  Corpus c;
  c.add(dated("a", "o", "2021-01-01", "common alpha", "x."));
  c.add(dated("b", "p", "2021-01-01", "common beta", "y."));
  c.add(dated("d", "q", "2021-01-01", "common gamma", "z."));
  const TfIdfIndex idx(c, {}, AlignConfig{});
  const double common = idx.idf()[idx.vocabulary().at("common")];
  for (const auto& [term, k] : idx.vocabulary()) CHECK(idx.idf()[k] >= common);
  CHECK(idx.position("b") == 1);
  CHECK_THROWS_AS(idx.position("zz"), DataError);
}

TEST_CASE("scope end counts title and leading sentences") {
  const Article a = dated("a", "o", "2021-01-01", "Two words", "One. Two two. Three three three.");
  CHECK(scope_end(a, 0) == 2);
  CHECK(scope_end(a, 2) == 5);
  CHECK(scope_end(a, 10) == a.tokens.size());
}

TEST_CASE("index similarity equals the dense oracle") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto s = small_synth(seed, 10);
    Corpus c;
    for (std::size_t i = 0; i < std::min<std::size_t>(50, s.corpus.size()); ++i) c.add(s.corpus[i]);
    AlignConfig cfg;
    const TfIdfIndex idx(c, s.planted, cfg, 2);
    const auto dense = oracle::story_similarity_matrix(c, s.planted, cfg);
    for (std::size_t i = 0; i < c.size(); ++i) {
      CHECK(idx.vector(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
      for (std::size_t j = 0; j < c.size(); ++j) {
        const double got = idx.story_similarity(i, j, cfg.alpha);
        CHECK(std::abs(got - dense[i][j]) <= 1e-9);
        CHECK(std::abs(got - idx.story_similarity(j, i, cfg.alpha)) <= 1e-12);
      }
      CHECK(idx.story_similarity(i, (i + 1) % c.size(), 0.0) ==
            idx.entity_similarity(i, (i + 1) % c.size()));
    }
  }
}

TEST_CASE("similarity combination by hand") {
  Corpus c;
  c.add(dated("a", "o", "2021-01-01", "x", "y."));
  c.add(dated("b", "p", "2021-01-01", "x", "y."));
  AnnotationSet ann;
  tag(ann, c[0], "x");
  tag(ann, c[1], "x");
  const TfIdfIndex idx(c, ann, AlignConfig{});
  CHECK(idx.story_similarity(0, 1, 0.4) == doctest::Approx(1.0));
}

TEST_CASE("candidate window and entity constraint") {
  Corpus c;
  c.add(dated("a", "o", "2021-01-10", "Trump rally", "Crowd."));
  c.add(dated("b", "p", "2021-01-13", "Trump speech", "Crowd."));
  c.add(dated("d", "q", "2021-01-14", "Trump rally", "Crowd."));
  c.add(dated("e", "r", "2021-01-10", "Trump rally", "Crowd."));
  c.add(dated("f", "o", "2021-01-10", "Trump rally", "Crowd."));
  AnnotationSet ann;
  for (std::size_t i = 0; i < 4; ++i) tag(ann, c[i], "trump");
  tag(ann, c[4], "trump");
  ann.mutable_for_article("e").entities.clear();
  const TfIdfIndex idx(c, ann, AlignConfig{});
  const auto cand = idx.candidates(0, 3);
  CHECK(cand.count("p") == 1);
  CHECK(cand.count("q") == 0);
  CHECK(cand.count("r") == 0);
  CHECK(cand.count("o") == 0);
  CHECK(idx.within_window(0, 1, 3));
  CHECK_FALSE(idx.within_window(0, 2, 3));
  CHECK_FALSE(idx.shares_entity_word(0, 3));
}

TEST_CASE("align picks the best copy and dedupes inside the cluster") {
  Corpus c;
  c.add(dated("a", "o", "2021-01-10", "Trump wins vote", "The senate passed the bill today."));
  c.add(dated("b", "p", "2021-01-10", "Trump wins vote", "The senate passed the bill today!"));
  c.add(dated("b2", "p", "2021-01-11", "Trump wins vote", "Senate passes a measure after debate."));
  c.add(dated("e", "q", "2021-01-11", "Trump vote", "Lawmakers in the senate approved a bill."));
  AnnotationSet ann;
  for (const auto& a : c) tag(ann, a, "trump");
  const TfIdfIndex idx(c, ann, AlignConfig{});
  REQUIRE(idx.story_similarity(0, 1, 0.4) > idx.story_similarity(0, 2, 0.4));
  const auto clusters = align(c, ann, AlignConfig{});
  REQUIRE_FALSE(clusters.empty());
  const StoryCluster& first = clusters.front();
  CHECK(first.anchor_id == "a");
  // b wins outlet p over b2, then falls to the near-duplicate pass.
  CHECK(first.member_ids == std::vector<std::string>{"a", "e"});
  CHECK(align(Corpus{}, {}, AlignConfig{}).empty());
}

TEST_CASE("align equals exhaustive scoring") {
  for (std::uint64_t seed : {4, 5}) {
    const auto s = small_synth(seed, 30);
    AlignConfig cfg;
    const auto got = align(s.corpus, s.planted, cfg, 3);
    CHECK(got == align(s.corpus, s.planted, cfg, 1));
    const auto dense = oracle::story_similarity_matrix(s.corpus, s.planted, cfg);
    std::vector<std::set<std::string>> ent;
    for (const auto& a : s.corpus) ent.push_back(constraint_set(a, s.planted, cfg.entity_constraint_sentences));

    std::vector<StoryCluster> expect;
    for (std::size_t i = 0; i < s.corpus.size(); ++i) {
      std::map<std::string, std::pair<std::size_t, double>> best;
      for (std::size_t j = 0; j < s.corpus.size(); ++j) {
        if (!admissible(s.corpus[i], s.corpus[j], ent[i], ent[j], cfg.window_days)) continue;
        const auto it = best.find(s.corpus[j].outlet);
        if (it == best.end() || dense[i][j] > it->second.second) {
          best[s.corpus[j].outlet] = {j, dense[i][j]};
        }
      }
      StoryCluster cl;
      cl.anchor_id = s.corpus[i].id;
      cl.member_ids = {cl.anchor_id};
      for (const auto& [outlet, m] : best) {
        if (m.second >= cfg.theta) {
          cl.member_ids.push_back(s.corpus[m.first].id);
          cl.scores[s.corpus[m.first].id] = m.second;
        }
      }
      if (cl.member_ids.size() > 1) expect.push_back(cl);
    }
    REQUIRE(got.size() == expect.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      CHECK(got[k].anchor_id == expect[k].anchor_id);
      CHECK(got[k].member_ids == expect[k].member_ids);
      for (const auto& [id, score] : expect[k].scores) CHECK(std::abs(got[k].scores.at(id) - score) <= 1e-9);
    }
  }
}

TEST_CASE("cluster invariants and theta monotonicity") {
  const auto s = small_synth(6, 40, 5);
  AlignConfig cfg;
  std::map<std::string, std::size_t> previous;
  for (double theta : {0.1, 0.23, 0.4, 0.6, 0.9}) {
    cfg.theta = theta;
    const auto clusters = align(s.corpus, s.planted, cfg);
    std::map<std::string, std::size_t> sizes;
    for (const auto& cl : clusters) {
      CHECK(cl.member_ids.front() == cl.anchor_id);
      std::set<std::string> outlets;
      for (const auto& id : cl.member_ids) outlets.insert(s.corpus.at(id).outlet);
      CHECK(outlets.size() == cl.member_ids.size());
      for (const auto& [id, score] : cl.scores) CHECK(score >= theta);
      sizes[cl.anchor_id] = cl.member_ids.size();
    }
    for (const auto& [anchor, n] : sizes) {
      if (!previous.empty()) CHECK(n <= previous[anchor]);
    }
    previous = sizes;
  }
}

TEST_CASE("cluster and gold JSON round-trip") {
  gen::TempDir dir("align");
  const auto s = small_synth(7, 10);
  const auto clusters = align(s.corpus, s.planted, AlignConfig{});
  save_clusters(clusters, dir / "c.jsonl");
  const auto back = load_clusters(dir / "c.jsonl");
  REQUIRE(back.size() == clusters.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    CHECK(back[k].member_ids == clusters[k].member_ids);
    for (const auto& [id, v] : clusters[k].scores) CHECK(back[k].scores.at(id) == v);
  }
  std::vector<GoldGroup> gold{{"s1", {"a", "b"}}, {"s2", {"c"}}};
  {
    std::ofstream out(dir / "g.jsonl");
    for (const auto& g : gold) out << gold_group_to_json(g) << "\n";
  }
  const auto g = load_gold_groups(dir / "g.jsonl");
  REQUIRE(g.size() == 2);
  CHECK(g[0].article_ids == gold[0].article_ids);
}

TEST_CASE("MRR by definition") {
  // a's partner ranks first, b's partner second behind a decoy, c's partner is
  // outside the window.
  Corpus c;
  c.add(dated("a1", "o", "2021-01-10", "Trump tariffs steel", "Steel tariffs rise sharply."));
  c.add(dated("a2", "p", "2021-01-10", "Trump tariffs steel", "Steel tariffs rise sharply."));
  c.add(dated("c1", "o", "2021-03-10", "Trump golf", "Weekend golf outing."));
  c.add(dated("c2", "p", "2021-03-20", "Trump golf", "Weekend golf outing."));
  AnnotationSet ann;
  for (const auto& a : c) tag(ann, a, "trump");
  AlignConfig cfg;
  const auto r = evaluate_mrr({{"s", {"a1", "a2"}}, {"t", {"c1", "c2"}}}, c, ann, cfg);
  CHECK(r.reciprocal_ranks == std::vector<double>{1.0, 1.0, 0.0, 0.0});
  CHECK(r.mrr == doctest::Approx(0.5));
  CHECK_THROWS_AS(evaluate_mrr({{"s", {"a1", "zz"}}}, c, ann, cfg), DataError);
}

TEST_CASE("MRR on separable synthetic stories") {
  SynthParams p;
  p.n_stories = 30;
  p.seed = 3;
  const auto s = synthesize(p);
  const auto r = evaluate_mrr(s.gold, s.corpus, s.planted, AlignConfig{});
  CHECK(r.mrr >= 0.95);
  for (double rr : r.reciprocal_ranks) {
    CHECK((rr == 0.0 || std::abs(1.0 / rr - std::round(1.0 / rr)) < 1e-9));
  }
}
