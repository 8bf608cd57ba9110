#include "polpre/cleaning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <thread>

#include "json.hpp"
#include "polpre/random.hpp"

namespace polpre {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

bool contains_any(const std::string& haystack_lower,
                  const std::vector<std::string>& needles) {
  for (const auto& n : needles) {
    if (!n.empty() && haystack_lower.find(n) != std::string::npos) return true;
  }
  return false;
}

std::vector<std::string> lowered(std::vector<std::string> v) {
  for (auto& s : v) s = lower(s);
  return v;
}

template <typename Pred>
Corpus keep_if(const Corpus& corpus, Pred keep) {
  Corpus out;
  for (const auto& a : corpus) {
    if (keep(a)) out.add(a);
  }
  return out;
}

// Sorted hashes of the q-grams of `s`. Used for the q-gram counting lower
// bound on edit distance: one edit destroys at most q q-grams.
constexpr std::size_t kQ = 5;

std::vector<std::uint64_t> qgram_profile(std::u32string_view s) {
  std::vector<std::uint64_t> grams;
  if (s.size() < kQ) return grams;
  grams.reserve(s.size() - kQ + 1);
  for (std::size_t i = 0; i + kQ <= s.size(); ++i) {
    std::uint64_t h = 0x84222325ULL;
    for (std::size_t k = 0; k < kQ; ++k) h = splitmix64(h ^ s[i + k]);
    grams.push_back(h);
  }
  std::sort(grams.begin(), grams.end());
  return grams;
}

std::size_t multiset_overlap(const std::vector<std::uint64_t>& a,
                             const std::vector<std::uint64_t>& b) {
  std::size_t i = 0, j = 0, n = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

// Largest k with k / m < threshold, or -1.
long max_allowed_distance(std::size_t m, double threshold) {
  const double md = static_cast<double>(m);
  long k = static_cast<long>(std::ceil(threshold * md)) - 1;
  while (static_cast<double>(k + 1) / md < threshold) ++k;
  while (k >= 0 && static_cast<double>(k) / md >= threshold) --k;
  return k;
}

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

FilterPatternSet default_filter_patterns() {
  FilterPatternSet p;
  p.url_patterns = {"/video/", "/gallery/", "/slideshow/"};
  p.title_patterns = {"weekly digest", "10 sites you should know",
                      "day's end roundup", "photos of the week",
                      "5 things you need to know"};
  p.nonus_url_keywords = {"/world/",  "/international/", "/europe/",
                          "/africa/", "/asia/",          "/latin-america/",
                          "/middle-east/"};
  p.us_text_keywords = {"u.s.",  "united states", "obama",  "trump", "bush",
                        "biden", "pompeo",        "clinton", "pence"};
  return p;
}

FilterPatternSet load_filter_patterns(const std::filesystem::path& dir) {
  auto read = [&](const char* name) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) return std::vector<std::string>{};
    return lowered(read_list_file(path));
  };
  FilterPatternSet p;
  p.url_patterns = read("url.txt");
  p.title_patterns = read("title.txt");
  p.nonus_url_keywords = read("nonus_url.txt");
  p.us_text_keywords = read("us_text.txt");
  return p;
}

Corpus filter_non_articles(const Corpus& corpus,
                           const FilterPatternSet& patterns) {
  return keep_if(corpus, [&](const Article& a) {
    return !contains_any(lower(a.url), patterns.url_patterns) &&
           !contains_any(lower(a.title), patterns.title_patterns);
  });
}

Corpus filter_non_us(const Corpus& corpus, const FilterPatternSet& patterns) {
  return keep_if(corpus, [&](const Article& a) {
    if (!contains_any(lower(a.url), patterns.nonus_url_keywords)) return true;
    return contains_any(lower(a.full_text()), patterns.us_text_keywords);
  });
}

std::u32string to_code_points(std::string_view utf8) {
  std::u32string out;
  out.reserve(utf8.size());
  std::size_t i = 0;
  while (i < utf8.size()) {
    const auto b0 = static_cast<unsigned char>(utf8[i]);
    std::size_t len = b0 < 0x80 ? 1 : (b0 & 0xE0) == 0xC0 ? 2
                                 : (b0 & 0xF0) == 0xE0   ? 3
                                 : (b0 & 0xF8) == 0xF0   ? 4
                                                         : 1;
    if (i + len > utf8.size()) len = 1;
    char32_t cp = len == 1 ? b0 : len == 2 ? (b0 & 0x1F) : len == 3 ? (b0 & 0x0F) : (b0 & 0x07);
    bool valid = true;
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(utf8[i + k]);
      if ((b & 0xC0) != 0x80) {
        valid = false;
        break;
      }
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!valid) {
      cp = b0;
      len = 1;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({up + 1, row[j - 1] + 1,
                         diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

std::optional<std::size_t> bounded_levenshtein(std::u32string_view a,
                                               std::u32string_view b,
                                               std::size_t limit) {
  const std::size_t la = a.size(), lb = b.size();
  const std::size_t gap = la > lb ? la - lb : lb - la;
  if (gap > limit) return std::nullopt;
  const std::size_t inf = limit + 1;
  // Cells outside |i - j| <= limit cannot lie on a path of cost <= limit.
  std::vector<std::size_t> prev(lb + 1, inf), cur(lb + 1, inf);
  for (std::size_t j = 0; j <= std::min(lb, limit); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= la; ++i) {
    const std::size_t lo = i > limit ? i - limit : 0;
    const std::size_t hi = std::min(lb, i + limit);
    std::fill(cur.begin(), cur.end(), inf);
    std::size_t row_min = inf;
    if (lo == 0) {
      cur[0] = i <= limit ? i : inf;
      row_min = cur[0];
    }
    for (std::size_t j = std::max<std::size_t>(lo, 1); j <= hi; ++j) {
      std::size_t v = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      v = std::min(v, prev[j] + 1);
      v = std::min(v, cur[j - 1] + 1);
      cur[j] = std::min(v, inf);
      row_min = std::min(row_min, cur[j]);
    }
    if (row_min > limit) return std::nullopt;
    std::swap(prev, cur);
  }
  if (prev[lb] > limit) return std::nullopt;
  return prev[lb];
}

double normalized_edit_distance(std::u32string_view a, std::u32string_view b) {
  const std::size_t m = std::max(a.size(), b.size());
  if (m == 0) return 0.0;
  return static_cast<double>(levenshtein(a, b)) / static_cast<double>(m);
}

double near_duplicate_diff(const Article& a, const Article& b) {
  return normalized_edit_distance(to_code_points(a.full_text()),
                                  to_code_points(b.full_text()));
}

bool is_near_duplicate(std::u32string_view a, std::u32string_view b,
                       double threshold) {
  const std::size_t m = std::max(a.size(), b.size());
  if (m == 0) return 0.0 < threshold;
  const long limit = max_allowed_distance(m, threshold);
  if (limit < 0) return false;
  return bounded_levenshtein(a, b, static_cast<std::size_t>(limit)).has_value();
}

std::vector<bool> dedupe_mask(const std::vector<std::u32string>& texts,
                              const std::vector<std::size_t>& order_rank,
                              double threshold, int threads) {
  const std::size_t n = texts.size();
  std::vector<std::vector<std::uint64_t>> profiles(n);
  parallel_for(n, threads, [&](std::size_t i) { profiles[i] = qgram_profile(texts[i]); });
  std::vector<char> keep(n, 1);
  parallel_for(n, threads, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || order_rank[j] >= order_rank[i]) continue;
      const std::size_t m = std::max(texts[i].size(), texts[j].size());
      if (m == 0) {
        if (0.0 < threshold) {
          keep[i] = 0;
          break;
        }
        continue;
      }
      const long limit = max_allowed_distance(m, threshold);
      if (limit < 0) continue;
      const std::size_t gap = texts[i].size() > texts[j].size()
                                  ? texts[i].size() - texts[j].size()
                                  : texts[j].size() - texts[i].size();
      if (gap > static_cast<std::size_t>(limit)) continue;
      // q-gram lemma: shared >= max_grams - q * dist.
      const long grams = static_cast<long>(m) - static_cast<long>(kQ) + 1;
      const long needed = grams - static_cast<long>(kQ) * limit;
      if (needed > 0 &&
          static_cast<long>(multiset_overlap(profiles[i], profiles[j])) < needed) {
        continue;
      }
      if (bounded_levenshtein(texts[i], texts[j], static_cast<std::size_t>(limit))) {
        keep[i] = 0;
        break;
      }
    }
  });
  return {keep.begin(), keep.end()};
}

Corpus dedupe(const Corpus& corpus, double threshold, DedupeScope scope,
              int threads) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw DataError("dedupe threshold must lie in (0, 1]");
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    groups[scope == DedupeScope::WithinOutlet ? corpus[i].outlet : std::string()]
        .push_back(i);
  }
  std::vector<bool> keep(corpus.size(), true);
  for (const auto& [_, members] : groups) {
    std::vector<std::size_t> order(members.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      const Article& a = corpus[members[x]];
      const Article& b = corpus[members[y]];
      if (a.published != b.published) return a.published < b.published;
      return a.id < b.id;
    });
    std::vector<std::size_t> rank(members.size());
    for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
    std::vector<std::u32string> texts;
    texts.reserve(members.size());
    for (std::size_t idx : members) texts.push_back(to_code_points(corpus[idx].full_text()));
    const auto mask = dedupe_mask(texts, rank, threshold, threads);
    for (std::size_t k = 0; k < members.size(); ++k) keep[members[k]] = mask[k];
  }
  Corpus out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (keep[i]) out.add(corpus[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> unigrams_and_bigrams(const std::vector<std::string>& tokens) {
  std::vector<std::string> grams(tokens);
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    grams.push_back(tokens[i] + ' ' + tokens[i + 1]);
  }
  return grams;
}

Eigen::SparseVector<double> PoliticsClassifier::features(
    const std::vector<std::string>& tokens) const {
  std::map<int, double> counts;
  for (const auto& g : unigrams_and_bigrams(tokens)) {
    auto it = vocabulary.find(g);
    if (it != vocabulary.end()) counts[it->second] += 1.0;
  }
  Eigen::SparseVector<double> x(static_cast<Eigen::Index>(terms.size()));
  double norm2 = 0.0;
  for (auto& [idx, c] : counts) {
    c *= idf[idx];
    norm2 += c * c;
  }
  if (norm2 == 0.0) return x;
  const double norm = std::sqrt(norm2);
  for (const auto& [idx, c] : counts) x.insert(idx) = c / norm;
  return x;
}

double PoliticsClassifier::probability(const Article& article) const {
  const auto x = features(article.tokens);
  double z = bias;
  for (Eigen::SparseVector<double>::InnerIterator it(x); it; ++it) {
    z += weights[it.index()] * it.value();
  }
  return 1.0 / (1.0 + std::exp(-z));
}

double logistic_objective(const Eigen::SparseMatrix<double, Eigen::RowMajor>& X,
                          const Eigen::VectorXd& labels, const Eigen::VectorXd& w,
                          double b, double l2, Eigen::VectorXd* grad_w,
                          double* grad_b) {
  const Eigen::Index n = X.rows();
  const Eigen::VectorXd z = (X * w).array() + b;
  double loss = 0.0;
  Eigen::VectorXd residual(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    // log(1 + e^z) - y z, evaluated stably.
    const double zi = z[i];
    const double softplus = zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
    loss += softplus - labels[i] * zi;
    residual[i] = 1.0 / (1.0 + std::exp(-zi)) - labels[i];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  loss = loss * inv_n + 0.5 * l2 * w.squaredNorm();
  if (grad_w) *grad_w = (X.transpose() * residual) * inv_n + l2 * w;
  if (grad_b) *grad_b = residual.sum() * inv_n;
  return loss;
}

PoliticsClassifier train_politics_classifier(
    const std::vector<LabeledArticle>& labeled, const ClassifierOptions& options) {
  if (labeled.size() < 2) throw DataError("politics classifier needs at least 2 examples");
  bool has_pos = false, has_neg = false;
  for (const auto& [_, y] : labeled) (y ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) {
    throw DataError("politics classifier needs both politics and non-politics examples");
  }

  const std::size_t n = labeled.size();
  std::vector<std::map<std::string, int>> doc_counts(n);
  std::map<std::string, int> df;
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& g : unigrams_and_bigrams(labeled[i].first->tokens)) ++doc_counts[i][g];
    for (const auto& [g, _] : doc_counts[i]) ++df[g];
  }

  PoliticsClassifier model;
  const double max_df = options.max_df_fraction * static_cast<double>(n);
  std::vector<double> idf;
  for (const auto& [g, d] : df) {
    if (d < options.min_df || static_cast<double>(d) > max_df) continue;
    model.vocabulary.emplace(g, static_cast<int>(model.terms.size()));
    model.terms.push_back(g);
    idf.push_back(std::log((1.0 + n) / (1.0 + d)) + 1.0);
  }
  const auto dim = static_cast<Eigen::Index>(model.terms.size());
  model.idf = Eigen::Map<Eigen::VectorXd>(idf.data(), dim);

  std::vector<Eigen::Triplet<double>> entries;
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    y[static_cast<Eigen::Index>(i)] = labeled[i].second ? 1.0 : 0.0;
    const auto x = model.features(labeled[i].first->tokens);
    for (Eigen::SparseVector<double>::InnerIterator it(x); it; ++it) {
      entries.emplace_back(static_cast<int>(i), static_cast<int>(it.index()), it.value());
    }
  }
  Eigen::SparseMatrix<double, Eigen::RowMajor> X(static_cast<Eigen::Index>(n), dim);
  X.setFromTriplets(entries.begin(), entries.end());

  model.weights = Eigen::VectorXd::Zero(dim);
  model.bias = 0.0;
  Eigen::VectorXd gw;
  double gb = 0.0;
  for (int it = 0; it < options.iterations; ++it) {
    logistic_objective(X, y, model.weights, model.bias, options.l2, &gw, &gb);
    model.weights -= options.learning_rate * gw;
    model.bias -= options.learning_rate * gb;
  }
  return model;
}

PoliticsClassifier self_train_politics_classifier(
    const std::vector<LabeledArticle>& labeled,
    const std::vector<const Article*>& unlabeled, double p_pos, double p_neg,
    const ClassifierOptions& options) {
  auto first = train_politics_classifier(labeled, options);
  auto expanded = labeled;
  for (const Article* a : unlabeled) {
    const double p = first.probability(*a);
    if (p >= p_pos) {
      expanded.emplace_back(a, true);
    } else if (p <= 1.0 - p_neg) {
      expanded.emplace_back(a, false);
    }
  }
  return train_politics_classifier(expanded, options);
}

Corpus filter_non_politics(const Corpus& corpus, const PoliticsClassifier& model) {
  return keep_if(corpus, [&](const Article& a) { return model.is_politics(a); });
}

std::string classifier_to_json(const PoliticsClassifier& model) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json vocab = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < model.terms.size(); ++i) vocab[model.terms[i]] = i;
  j["vocabulary"] = std::move(vocab);
  j["idf"] = std::vector<double>(model.idf.data(), model.idf.data() + model.idf.size());
  j["weights"] = std::vector<double>(model.weights.data(),
                                     model.weights.data() + model.weights.size());
  j["bias"] = model.bias;
  return j.dump();
}

PoliticsClassifier classifier_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text.begin(), text.end());
    PoliticsClassifier model;
    const auto& vocab = j.at("vocabulary");
    model.terms.resize(vocab.size());
    for (auto it = vocab.begin(); it != vocab.end(); ++it) {
      const auto idx = it.value().get<std::size_t>();
      if (idx >= model.terms.size()) throw DataError("vocabulary index out of range");
      model.terms[idx] = it.key();
      model.vocabulary[it.key()] = static_cast<int>(idx);
    }
    const auto idf = j.at("idf").get<std::vector<double>>();
    const auto w = j.at("weights").get<std::vector<double>>();
    if (idf.size() != model.terms.size() || w.size() != model.terms.size()) {
      throw DataError("classifier dimensions disagree with vocabulary size");
    }
    model.idf = Eigen::Map<const Eigen::VectorXd>(idf.data(), static_cast<Eigen::Index>(idf.size()));
    model.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    model.bias = j.at("bias").get<double>();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed classifier: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

std::string normalize_sentence(std::string_view sentence) {
  std::string out;
  bool pending_space = false;
  for (char c : sentence) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
  }
  return out;
}

std::string mask_phrases(std::string_view text,
                         const std::vector<std::string>& phrases) {
  std::string result(text);
  for (const auto& phrase : phrases) {
    if (phrase.empty()) continue;
    const std::string needle = lower(phrase);
    std::string low = lower(result);
    std::string next;
    std::size_t pos = 0;
    for (std::size_t hit = low.find(needle); hit != std::string::npos;
         hit = low.find(needle, pos)) {
      next.append(result, pos, hit - pos);
      next += "[MASK]";
      pos = hit + needle.size();
    }
    next.append(result, pos, std::string::npos);
    result = std::move(next);
  }
  return result;
}

void mine_frequent_sentences(const Corpus& corpus, LeakPatternTable& table,
                             std::size_t min_count) {
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  for (const auto& a : corpus) {
    const auto it = table.find(a.outlet);
    const std::vector<std::string> none;
    const auto& phrases = it == table.end() ? none : it->second.self_mention_phrases;
    for (const auto& p : a.paragraphs) {
      for (const auto& s : split_sentences(mask_phrases(p, phrases))) {
        ++counts[a.outlet][normalize_sentence(s)];
      }
    }
  }
  for (auto& [outlet, sentences] : counts) {
    auto& dest = table[outlet].frequent_sentences;
    for (const auto& [s, c] : sentences) {
      if (c > min_count) dest.push_back(s);
    }
  }
}

LeakPatternTable load_self_mentions(const std::filesystem::path& path) {
  LeakPatternTable table;
  for (const auto& line : read_list_file(path)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(path.string() + ": expected 'outlet<TAB>phrase', got '" + line + "'");
    }
    table[line.substr(0, tab)].self_mention_phrases.push_back(lower(line.substr(tab + 1)));
  }
  return table;
}

LeakStripResult strip_media_leaks(const Corpus& corpus, const LeakPatternTable& table) {
  LeakStripResult result;
  for (const auto& a : corpus) {
    const auto it = table.find(a.outlet);
    if (it == table.end()) {
      result.corpus.add(a);
      continue;
    }
    const auto& patterns = it->second;
    std::unordered_set<std::string> frequent(patterns.frequent_sentences.begin(),
                                             patterns.frequent_sentences.end());
    Article out = a;
    out.title = mask_phrases(a.title, patterns.self_mention_phrases);
    out.paragraphs.clear();
    const std::size_t n = a.paragraphs.size();
    for (std::size_t i = 0; i < n; ++i) {
      std::string p = mask_phrases(a.paragraphs[i], patterns.self_mention_phrases);
      const bool edge = i < 2 || i + 2 >= n;
      bool leak = false;
      if (edge && !frequent.empty()) {
        for (const auto& s : split_sentences(p)) {
          if (frequent.count(normalize_sentence(s))) {
            leak = true;
            break;
          }
        }
      }
      if (!leak) out.paragraphs.push_back(std::move(p));
    }
    if (out.paragraphs.empty()) {
      std::clog << "warning: article " << a.id
                << " has no paragraphs left after leak removal; dropped\n";
      result.dropped_ids.push_back(a.id);
      continue;
    }
    out.retokenize();
    result.corpus.add(std::move(out));
  }
  return result;
}

Corpus balance_by_ideology(const Corpus& corpus, std::uint64_t seed) {
  std::map<Ideology, std::vector<std::size_t>> by_ideology;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_ideology[corpus[i].ideology].push_back(i);
  std::size_t target = std::numeric_limits<std::size_t>::max();
  for (Ideology ideology : kAllIdeologies) {
    const auto it = by_ideology.find(ideology);
    if (it == by_ideology.end() || it->second.empty()) {
      throw DataError("cannot balance: ideology " + std::string(to_string(ideology)) +
                      " is absent");
    }
    target = std::min(target, it->second.size());
  }
  Rng rng(seed);
  std::vector<bool> keep(corpus.size(), false);
  for (Ideology ideology : kAllIdeologies) {
    const auto& members = by_ideology[ideology];
    for (std::size_t k : rng.sample_without_replacement(members.size(), target)) {
      keep[members[k]] = true;
    }
  }
  Corpus out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (keep[i]) out.add(corpus[i]);
  }
  return out;
}

}  // namespace polpre
