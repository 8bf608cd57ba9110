#pragma once

// Independent oracles and generators shared by the unit and acceptance
// tests. Nothing here calls the routine it is used to check.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <sstream>
#include <set>
#include <string>
#include <vector>

#include "polpre/alignment.hpp"
#include "polpre/annotate.hpp"
#include "polpre/corpus.hpp"
#include "polpre/model.hpp"
#include "polpre/pipeline.hpp"
#include "polpre/random.hpp"
#include "polpre/triplets.hpp"

namespace oracle {

using polpre::Article;
using polpre::Corpus;

// Full-matrix unit-cost edit distance.
inline std::size_t edit_distance(const std::u32string& a, const std::u32string& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
  }
  return d[a.size()][b.size()];
}

inline double edit_diff(const std::u32string& a, const std::u32string& b) {
  const std::size_t m = std::max(a.size(), b.size());
  return m == 0 ? 0.0 : static_cast<double>(edit_distance(a, b)) / static_cast<double>(m);
}

// Tokens of the title plus the first `sentences` body sentences, rebuilt from
// the raw text rather than from Article::tokens.
inline std::vector<std::string> scope_tokens(const Article& a, std::size_t sentences) {
  std::vector<std::string> out = polpre::tokenize(a.title, polpre::corpus_tokenizer());
  std::size_t taken = 0;
  for (const auto& para : a.paragraphs) {
    for (const auto& s : polpre::split_sentences(para)) {
      if (taken == sentences) return out;
      for (auto& t : polpre::tokenize(s, polpre::corpus_tokenizer())) out.push_back(t);
      ++taken;
    }
  }
  return out;
}

// Dense TF-IDF cosine + weighted Jaccard over entity words, all pairs.
inline std::vector<std::vector<double>> story_similarity_matrix(
    const Corpus& corpus, const polpre::AnnotationSet& ann, const polpre::AlignConfig& cfg) {
  const std::size_t n = corpus.size();
  std::vector<std::vector<std::string>> docs;
  std::set<std::string> terms;
  for (const auto& a : corpus) {
    docs.push_back(scope_tokens(a, cfg.sim_scope_sentences));
    terms.insert(docs.back().begin(), docs.back().end());
  }
  const std::vector<std::string> vocab(terms.begin(), terms.end());
  std::vector<std::vector<double>> vec(n, std::vector<double>(vocab.size(), 0.0));
  for (std::size_t t = 0; t < vocab.size(); ++t) {
    std::size_t df = 0;
    for (const auto& d : docs) df += std::count(d.begin(), d.end(), vocab[t]) > 0;
    const double idf = std::log((1.0 + n) / (1.0 + df)) + 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      vec[i][t] = static_cast<double>(std::count(docs[i].begin(), docs[i].end(), vocab[t])) * idf;
    }
  }
  for (auto& v : vec) {
    double s = 0.0;
    for (double x : v) s += x * x;
    if (s > 0) for (double& x : v) x /= std::sqrt(s);
  }
  std::vector<std::map<std::string, int>> bags(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t limit = docs[i].size();
    for (const auto& span : ann.for_article(corpus[i].id).entities) {
      if (span.end > limit) continue;
      for (const auto& w : polpre::tokenize(span.surface, polpre::corpus_tokenizer())) {
        if (!polpre::english_stopwords().count(w)) ++bags[i][w];
      }
    }
  }
  std::vector<std::vector<double>> sim(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < vocab.size(); ++t) dot += vec[i][t] * vec[j][t];
      double lo = 0.0, hi = 0.0;
      std::set<std::string> words;
      for (const auto& [w, _] : bags[i]) words.insert(w);
      for (const auto& [w, _] : bags[j]) words.insert(w);
      for (const auto& w : words) {
        const int a = bags[i].count(w) ? bags[i].at(w) : 0;
        const int b = bags[j].count(w) ? bags[j].at(w) : 0;
        lo += std::min(a, b);
        hi += std::max(a, b);
      }
      const double jac = hi > 0 ? lo / hi : 0.0;
      sim[i][j] = cfg.alpha * dot + (1.0 - cfg.alpha) * jac;
    }
  }
  return sim;
}

// Every ordered (anchor, positive, negative) of distinct members meeting the
// ideology-triplet definition, sorted.
inline std::vector<polpre::Triplet> ideology_triplets(const polpre::StoryCluster& c,
                                                      const Corpus& corpus) {
  using polpre::Ideology;
  std::vector<polpre::Triplet> out;
  for (const auto& a : c.member_ids) {
    for (const auto& p : c.member_ids) {
      for (const auto& n : c.member_ids) {
        if (a == p || a == n || p == n) continue;
        const Ideology ia = corpus.at(a).ideology;
        if (ia == Ideology::Center || corpus.at(p).ideology != ia) continue;
        const Ideology want = ia == Ideology::Left ? Ideology::Right : Ideology::Left;
        if (corpus.at(n).ideology != want) continue;
        out.push_back({polpre::TripletKind::Ideology, a, p, n});
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace oracle

namespace gen {

using polpre::Article;
using polpre::Ideology;
using polpre::Rng;

inline std::string word(Rng& rng, std::size_t len = 0) {
  static const char* letters = "abcdefghijklmnopqrstuvwxyz";
  if (len == 0) len = 2 + rng.uniform_index(6);
  std::string w;
  for (std::size_t i = 0; i < len; ++i) w += letters[rng.uniform_index(26)];
  return w;
}

inline Article article(Rng& rng, std::string id, std::string outlet, Ideology ideology,
                       std::size_t paragraphs = 2, std::size_t words = 20) {
  Article a;
  a.id = std::move(id);
  a.outlet = std::move(outlet);
  a.ideology = ideology;
  a.published = std::chrono::year_month_day{std::chrono::sys_days{std::chrono::year{2021} /
                                                                  1 / 1} +
                                            std::chrono::days{rng.uniform_index(60)}};
  a.url = "https://" + a.outlet + ".example/politics/" + a.id;
  a.title = "Title " + word(rng) + " " + word(rng);
  for (std::size_t p = 0; p < paragraphs; ++p) {
    std::string text;
    for (std::size_t w = 0; w < words; ++w) {
      if (!text.empty()) text += (w % 7 == 6) ? ". " : " ";
      text += word(rng);
    }
    a.paragraphs.push_back(text + ".");
  }
  a.retokenize();
  return a;
}

// Random corpus with per-ideology counts drawn from [0, max_per].
inline polpre::Corpus corpus(Rng& rng, std::size_t min_per, std::size_t max_per) {
  polpre::Corpus c;
  std::size_t k = 0;
  for (Ideology i : polpre::kAllIdeologies) {
    const std::size_t n = min_per + rng.uniform_index(max_per - min_per + 1);
    for (std::size_t j = 0; j < n; ++j) {
      c.add(article(rng, "g" + std::to_string(k++), std::string(polpre::to_string(i)) + "-outlet",
                    i, 1, 8));
    }
  }
  return c;
}

// Temporary directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    Rng rng(polpre::fnv1a64(tag) ^ static_cast<std::uint64_t>(
                                      std::chrono::steady_clock::now().time_since_epoch().count()));
    path = std::filesystem::temp_directory_path() / ("polpre-" + tag + "-" + word(rng, 10));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

// Runs synth through eval inside `dir` with small sizes. Returns the first
// nonzero exit code, or 0; `log` collects both streams.
inline int run_pipeline(const std::filesystem::path& dir, int threads, std::uint64_t seed,
                        std::string* log = nullptr) {
  const auto p = [&](const char* name) { return (dir / name).string(); };
  const std::string s = std::to_string(seed);
  const std::string t = std::to_string(threads);
  const std::vector<std::vector<std::string>> stages{
      {"synth", "--out", p("synth"), "--stories", "24", "--distractors", "12", "--seed", s},
      {"clean", "--in", p("synth/corpus.jsonl"), "--out", p("clean.jsonl"), "--patterns",
       p("synth/patterns"), "--train-politics", "--politics-model", p("politics.json"),
       "--self-mentions", p("synth/self_mentions.tsv"), "--leak-min-count", "5", "--seed", s},
      {"annotate", "--corpus", p("clean.jsonl"), "--heuristic", "--gazetteer",
       p("synth/gazetteer.txt"), "--lexicon", p("synth/lexicon.txt"), "--out-entities",
       p("entities.jsonl"), "--out-sentiment", p("sentiment.jsonl")},
      {"align", "--corpus", p("clean.jsonl"), "--entities", p("entities.jsonl"), "--sentiment",
       p("sentiment.jsonl"), "--out", p("clusters.jsonl")},
      {"triplets", "--corpus", p("clean.jsonl"), "--clusters", p("clusters.jsonl"), "--out",
       p("triplets.jsonl"), "--seed", s},
      {"mask", "--corpus", p("clean.jsonl"), "--entities", p("entities.jsonl"), "--sentiment",
       p("sentiment.jsonl"), "--out", p("masked.jsonl"), "--vocab-out", p("vocab.txt"), "--seed", s},
      {"train", "--corpus", p("clean.jsonl"), "--triplets", p("triplets.jsonl"), "--masked",
       p("masked.jsonl"), "--vocab", p("vocab.txt"), "--entities", p("entities.jsonl"),
       "--sentiment", p("sentiment.jsonl"), "--out", p("model.json"), "--trace", p("trace.csv"),
       "--steps", "20", "--dim", "8", "--seed", s},
      {"eval", "probe", "--corpus", p("clean.jsonl"), "--model", p("model.json"), "--vocab",
       p("vocab.txt"), "--out", p("probe.json"), "--seed", s},
      {"eval", "ppl", "--corpus", p("clean.jsonl"), "--model", p("model.json"), "--vocab",
       p("vocab.txt"), "--out", p("ppl.json"), "--positions", "20", "--seed", s},
      {"eval", "mask-report", "--masked", p("masked.jsonl"), "--corpus", p("clean.jsonl"),
       "--entities", p("entities.jsonl"), "--sentiment", p("sentiment.jsonl"), "--out",
       p("mask_report.json")},
  };
  for (const auto& stage : stages) {
    std::vector<std::string> args{"--threads", t};
    args.insert(args.end(), stage.begin(), stage.end());
    std::ostringstream out, err;
    const int rc = polpre::run_cli(args, out, err);
    if (log) *log += out.str() + err.str();
    if (rc != 0) return rc;
  }
  return 0;
}

// Relative path -> bytes of every "*.manifest.json" under `dir`.
inline std::map<std::string, std::string> manifests(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() < 14 || name.substr(name.size() - 14) != ".manifest.json") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    out[std::filesystem::relative(e.path(), dir).string()] = s.str();
  }
  return out;
}

}  // namespace gen

// Random models and a finite-difference harness for the encoder objectives.
namespace fd {

using namespace polpre;
using Model = EncoderModel<double>;
using Head = MlmHead<double>;

inline std::vector<int> random_ids(Rng& rng, int vocab, std::size_t n) {
  std::vector<int> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(Vocabulary::kReserved + static_cast<int>(rng.uniform_index(vocab - Vocabulary::kReserved)));
  }
  return out;
}

inline Model random_model(Rng& rng, int vocab, int dim) {
  Model m = Model::initialized(vocab, dim, rng, 0.5);
  for (Eigen::Index i = 0; i < m.projection.size(); ++i) m.projection.data()[i] += 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < m.bias.size(); ++i) m.bias[i] = 0.1 * rng.normal();
  return m;
}

inline Head random_head(Rng& rng, int vocab, int dim) {
  Head h = Head::initialized(vocab, dim, rng, 0.5);
  for (Eigen::Index i = 0; i < h.output_bias.size(); ++i) h.output_bias[i] = 0.1 * rng.normal();
  return h;
}

inline MaskedSequence random_masked(Rng& rng, int vocab, std::size_t n, std::size_t k) {
  MaskedSequence s;
  s.input_ids = random_ids(rng, vocab, n);
  for (std::size_t p : rng.sample_without_replacement(n, k)) {
    s.masked.push_back({p, s.input_ids[p], MaskAction::Mask});
    s.input_ids[p] = Vocabulary::kMask;
  }
  std::sort(s.masked.begin(), s.masked.end(),
            [](const auto& a, const auto& b) { return a.position < b.position; });
  return s;
}

// Flat views over every trainable coefficient.
inline std::vector<double*> params(Model& m, Head& h) {
  std::vector<double*> out;
  for (auto* mat : {&m.embeddings, &m.projection, &h.output}) {
    for (Eigen::Index i = 0; i < mat->size(); ++i) out.push_back(mat->data() + i);
  }
  for (auto* vec : {&m.bias, &h.output_bias}) {
    for (Eigen::Index i = 0; i < vec->size(); ++i) out.push_back(vec->data() + i);
  }
  return out;
}

inline std::vector<double> flatten(const EncoderGradient<double>& g, const HeadGradient<double>& hg) {
  std::vector<double> out;
  for (const auto* mat : {&g.embeddings, &g.projection, &hg.output}) {
    out.insert(out.end(), mat->data(), mat->data() + mat->size());
  }
  for (const auto* vec : {&g.bias, &hg.output_bias}) {
    out.insert(out.end(), vec->data(), vec->data() + vec->size());
  }
  return out;
}

inline double fd_relative_error(Model& m, Head& h, const std::function<double()>& loss,
                         const std::vector<double>& analytic) {
  const double step = 1e-5;
  auto ps = params(m, h);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double keep = *ps[i];
    *ps[i] = keep + step;
    const double up = loss();
    *ps[i] = keep - step;
    const double down = loss();
    *ps[i] = keep;
    const double g = (up - down) / (2 * step);
    num += (g - analytic[i]) * (g - analytic[i]);
    den += g * g;
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

// Smallest |hinge| or distance over the batch; small values sit near a kink.
inline double kink_distance(const Model& m, const std::vector<EncodedTriplet>& batch, const LossConfig& c) {
  double closest = 1e9;
  for (const auto& t : batch) {
    const auto a = doc_embed(m, std::span<const int>(t.anchor));
    const auto p = doc_embed(m, std::span<const int>(t.positive));
    const auto n = doc_embed(m, std::span<const int>(t.negative));
    const double margin = t.kind == TripletKind::Ideology ? c.delta_ideo : c.delta_story;
    const double hinge = (a - p).norm() - (a - n).norm() + margin;
    closest = std::min({closest, std::abs(hinge), (a - p).norm(), (a - n).norm()});
  }
  return closest;
}

inline std::vector<EncodedTriplet> random_triplets(Rng& rng, int vocab, std::size_t n) {
  std::vector<EncodedTriplet> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({i % 2 ? TripletKind::Story : TripletKind::Ideology,
                   random_ids(rng, vocab, 2 + rng.uniform_index(6)),
                   random_ids(rng, vocab, 2 + rng.uniform_index(6)),
                   random_ids(rng, vocab, 2 + rng.uniform_index(6))});
  }
  return out;
}

// Log-softmax of the target given the other positions, computed from scratch.
inline double oracle_log_prob(const Model& m, const Head& h, const std::vector<int>& ids, std::size_t pos) {
  Eigen::VectorXd ctx = Eigen::VectorXd::Zero(m.dim());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i != pos) ctx += m.embeddings.row(ids[i]).transpose();
  }
  if (ids.size() > 1) ctx /= static_cast<double>(ids.size() - 1);
  const Eigen::VectorXd hidden = m.projection * ctx + m.bias;
  const Eigen::VectorXd logits = h.output.transpose() * hidden + h.output_bias;
  double z = 0.0;
  for (Eigen::Index v = 0; v < logits.size(); ++v) z += std::exp(logits[v]);
  return logits[ids[pos]] - std::log(z);
}

}  // namespace fd
