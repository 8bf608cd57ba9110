#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "polpre/evaluation.hpp"
#include "support.hpp"

using namespace polpre;

namespace {

Article words_article(const std::string& id, Ideology ideology, const std::vector<std::string>& words) {
  Article a;
  a.id = id;
  a.outlet = "o";
  a.ideology = ideology;
  a.published = parse_date("2021-01-01");
  a.url = "u";
  std::string body;
  for (const auto& w : words) body += w + " ";
  a.paragraphs = {body};
  a.retokenize();
  return a;
}

struct Blobs {
  std::map<std::string, Eigen::VectorXd> emb;
  std::map<std::string, Ideology> labels;
};

Blobs blobs(Rng& rng, std::size_t per_class, double spread, bool three = false) {
  Blobs b;
  std::vector<Ideology> classes{Ideology::Left, Ideology::Right};
  if (three) classes.push_back(Ideology::Center);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::string id = "e" + std::to_string(c) + "_" + std::to_string(i);
      Eigen::VectorXd v(4);
      for (int k = 0; k < 4; ++k) v[k] = spread * rng.normal();
      v[static_cast<Eigen::Index>(c)] += 5.0;
      b.emb[id] = v;
      b.labels[id] = classes[c];
    }
  }
  return b;
}

}  // namespace

TEST_CASE("probe on separated blobs") {
  Rng rng(1);
  const auto b = blobs(rng, 50, 0.3);
  const auto r = linear_probe(b.emb, b.labels, 7);
  CHECK(r.accuracy == 1.0);
  CHECK(r.macro_f1 == doctest::Approx(1.0));
  CHECK(r.n_train + r.n_test == 100);
  CHECK(r.n_test == 20);

  const auto three = blobs(rng, 40, 0.3, true);
  CHECK(linear_probe(three.emb, three.labels, 7).accuracy == 1.0);
  CHECK(linear_probe(b.emb, b.labels, 7).accuracy == linear_probe(b.emb, b.labels, 7).accuracy);
}

TEST_CASE("probe preconditions") {
  Rng rng(2);
  auto b = blobs(rng, 3, 0.3);
  CHECK_THROWS_AS(linear_probe(b.emb, b.labels, 1), DataError);
  b = blobs(rng, 10, 0.3);
  for (auto& [id, l] : b.labels) l = Ideology::Left;
  CHECK_THROWS_AS(linear_probe(b.emb, b.labels, 1), DataError);
}

TEST_CASE("probe on shuffled labels stays near chance") {
  Rng rng(3);
  const auto b = blobs(rng, 300, 1.0);
  std::vector<Ideology> labels;
  for (const auto& [id, l] : b.labels) labels.push_back(l);
  rng.shuffle(labels);
  std::map<std::string, Ideology> shuffled;
  std::size_t k = 0;
  for (const auto& [id, l] : b.labels) shuffled[id] = labels[k++];
  const auto r = linear_probe(b.emb, shuffled, 5);
  const double n = static_cast<double>(r.n_test);
  const double sigma = std::sqrt(0.25 / n);
  CHECK(std::abs(r.accuracy - 0.5) <= 3 * sigma);
}

TEST_CASE("probe separability ordering survives isotropic scaling") {
  Rng rng(4);
  const auto tight = blobs(rng, 60, 1.5);
  const auto loose = blobs(rng, 60, 4.0);
  const double a_tight = linear_probe(tight.emb, tight.labels, 2).accuracy;
  const double a_loose = linear_probe(loose.emb, loose.labels, 2).accuracy;
  REQUIRE(a_tight > a_loose);
  for (double scale : {0.01, 100.0}) {
    auto t = tight, l = loose;
    for (auto& [id, v] : t.emb) v *= scale;
    for (auto& [id, v] : l.emb) v *= scale;
    CHECK(linear_probe(t.emb, t.labels, 2).accuracy > linear_probe(l.emb, l.labels, 2).accuracy);
  }
}

TEST_CASE("softmax objective gradient matches central differences") {
  Rng rng(5);
  Eigen::MatrixXd X(20, 4), W(4, 3);
  Eigen::RowVectorXd bias(3);
  std::vector<int> y;
  for (int i = 0; i < 20; ++i) {
    for (int j = 0; j < 4; ++j) X(i, j) = rng.normal();
    y.push_back(static_cast<int>(rng.uniform_index(3)));
  }
  for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = rng.normal();
  for (int c = 0; c < 3; ++c) bias[c] = rng.normal();
  Eigen::MatrixXd gw;
  Eigen::RowVectorXd gb;
  softmax_objective(X, y, W, bias, 0.01, &gw, &gb);
  const double h = 1e-6;
  double num = 0, den = 0;
  for (Eigen::Index i = 0; i < W.size(); ++i) {
    Eigen::MatrixXd up = W, down = W;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double g = (softmax_objective(X, y, up, bias, 0.01, nullptr, nullptr) -
                      softmax_objective(X, y, down, bias, 0.01, nullptr, nullptr)) / (2 * h);
    num += (g - gw.data()[i]) * (g - gw.data()[i]);
    den += g * g;
  }
  for (int c = 0; c < 3; ++c) {
    Eigen::RowVectorXd up = bias, down = bias;
    up[c] += h;
    down[c] -= h;
    const double g = (softmax_objective(X, y, W, up, 0.01, nullptr, nullptr) -
                      softmax_objective(X, y, W, down, 0.01, nullptr, nullptr)) / (2 * h);
    num += (g - gb[c]) * (g - gb[c]);
    den += g * g;
  }
  CHECK(std::sqrt(num / den) <= 1e-6);
}

TEST_CASE("perplexity by ideology") {
  Rng rng(6);
  std::vector<std::string> wide, narrow;
  for (int i = 0; i < 60; ++i) wide.push_back("w" + std::to_string(i));
  for (int i = 0; i < 6; ++i) narrow.push_back(wide[static_cast<std::size_t>(i)]);
  Corpus c;
  for (int i = 0; i < 12; ++i) {
    const Ideology ideo = kAllIdeologies[static_cast<std::size_t>(i % 3)];
    const auto& lex = ideo == Ideology::Right ? narrow : wide;
    std::vector<std::string> words;
    for (int k = 0; k < 80; ++k) words.push_back(lex[rng.uniform_index(lex.size())]);
    c.add(words_article("a" + std::to_string(i), ideo, words));
  }
  const Vocabulary vocab = build_vocab(c, 1);
  const int dim = 3;

  const auto uniform = ppl_by_ideology(EncoderModel<double>::zeros(vocab.size(), dim),
                                       MlmHead<double>::zeros(vocab.size(), dim), vocab, c, 200, 1);
  for (Ideology i : kAllIdeologies) CHECK(uniform.at(i) == doctest::Approx(vocab.size()).epsilon(1e-9));

  // Unigram head fitted to corpus frequencies.
  MlmHead<double> unigram = MlmHead<double>::zeros(vocab.size(), dim);
  std::vector<double> counts(static_cast<std::size_t>(vocab.size()), 1e-3);
  for (const auto& a : c) {
    for (int id : vocab.encode(a.tokens)) counts[static_cast<std::size_t>(id)] += 1;
  }
  for (int v = 0; v < vocab.size(); ++v) unigram.output_bias[v] = std::log(counts[static_cast<std::size_t>(v)]);
  const auto model = EncoderModel<double>::zeros(vocab.size(), dim);
  const auto ppl = ppl_by_ideology(model, unigram, vocab, c, 200, 1);
  CHECK(ppl.at(Ideology::Right) < ppl.at(Ideology::Left));
  CHECK(ppl.at(Ideology::Right) < ppl.at(Ideology::Center));

  Corpus single;
  single.add(c[0]);
  const auto one = ppl_by_ideology(model, unigram, vocab, single, 50, 9);
  const auto ids = vocab.encode(c[0].tokens);
  CHECK(one.at(c[0].ideology) ==
        doctest::Approx(pseudo_perplexity(model, unigram, ids, 50, derive_seed(9, c[0].id))).epsilon(1e-12));
  CHECK(one.size() == 1);
}

TEST_CASE("prompt rendering") {
  CHECK(render_prompt("X", "abortion") == "X [SEP] The stance towards abortion is [MASK] .");
  PromptTemplate bare;
  bare.pattern = "[MASK]. {target}";
  CHECK(render_prompt("Y", "guns", bare) == "Y [SEP] [MASK]. guns");
  CHECK(render_prompt("Y", "guns", stance_prompt_templates()[9]) == "Y [SEP] [MASK]. guns");
  CHECK(stance_prompt_templates().size() == 11);
  CHECK_THROWS_WITH_AS(render_prompt("X", ""), doctest::Contains("missing target"), DataError);
  PromptTemplate twice;
  twice.pattern = "{target} {target}";
  CHECK_THROWS_AS(render_prompt("X", "a", twice), DataError);
  std::set<std::string> seen;
  for (const char* p : {"a", "b", "a b"}) {
    for (const char* t : {"x", "y", "x y"}) seen.insert(render_prompt(p, t));
  }
  CHECK(seen.size() == 9);
}

TEST_CASE("mask report counts") {
  MaskedSequence s;
  s.id = "m";
  s.input_ids.assign(100, 5);
  for (std::size_t p = 0; p < 15; ++p) s.masked.push_back({p, 5, MaskAction::Mask});
  const auto r = mask_report({s}, {});
  CHECK(r.rate() == doctest::Approx(0.15));
  CHECK(r.mask_share() == 1.0);

  Rng rng(7);
  std::vector<std::string> tokens{"[MASK]", "[UNK]", "[PAD]"};
  for (int i = 0; i < 30; ++i) tokens.push_back("t" + std::to_string(i));
  const Vocabulary vocab(tokens);
  MaskConfig forced;
  forced.ratio_random = forced.ratio_keep = 0.0;
  AnnotationSet ann;
  std::vector<MaskedSequence> seqs, forced_seqs;
  std::size_t ent = 0, ent_m = 0, sent = 0, sent_m = 0, plain = 0, plain_m = 0, tok = 0, masked = 0;
  std::size_t keep = 0;
  for (int k = 0; k < 300; ++k) {
    std::vector<std::string> words;
    for (int i = 0; i < 60; ++i) words.push_back(tokens[3 + rng.uniform_index(30)]);
    const Article a = words_article("r" + std::to_string(k), Ideology::Left, words);
    auto& aa = ann.mutable_for_article(a.id);
    for (std::size_t i = 0; i + 8 < 60; i += 8) {
      aa.entities.push_back({a.id, i, i + 1 + rng.uniform_index(7), EntityType::Person, "x"});
    }
    for (std::size_t i = 0; i < 60; ++i) {
      if (rng.bernoulli(0.05)) aa.sentiment_positions.insert(i);
    }
    seqs.push_back(sample_mask(a, aa, vocab, MaskConfig{}));
    forced_seqs.push_back(sample_mask(a, aa, vocab, forced));

    std::vector<int> cls(60, 0);
    for (const auto& e : aa.entities) {
      if (e.length() > kMaxEntityTokens) continue;
      for (std::size_t i = e.start; i < e.end; ++i) cls[i] = 1;
    }
    for (std::size_t p : aa.sentiment_positions) {
      if (!cls[p]) cls[p] = 2;
    }
    std::vector<bool> hit(60, false);
    for (const auto& m : seqs.back().masked) {
      hit[m.position] = true;
      keep += m.action == MaskAction::Keep;
    }
    for (std::size_t i = 0; i < 60; ++i) {
      ++tok;
      masked += hit[i];
      if (cls[i] == 1) {
        ++ent;
        ent_m += hit[i];
      } else if (cls[i] == 2) {
        ++sent;
        sent_m += hit[i];
      } else {
        ++plain;
        plain_m += hit[i];
      }
    }
  }
  const auto rep = mask_report(seqs, ann);
  CHECK(rep.sequences == 300);
  CHECK(rep.tokens == tok);
  CHECK(rep.masked == masked);
  CHECK(rep.entity_tokens == ent);
  CHECK(rep.entity_masked == ent_m);
  CHECK(rep.sentiment_tokens == sent);
  CHECK(rep.sentiment_masked == sent_m);
  CHECK(rep.plain_tokens == plain);
  CHECK(rep.plain_masked == plain_m);
  CHECK(rep.keep_actions == keep);
  CHECK(rep.mask_actions + rep.random_actions + rep.keep_actions == masked);
  CHECK(mask_report(forced_seqs, ann).mask_share() == 1.0);
  CHECK(rep.to_json().find("\"rate\"") != std::string::npos);
  CHECK_FALSE(rep.to_table().empty());
}
