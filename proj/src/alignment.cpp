#include "polpre/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "json.hpp"
#include "polpre/cleaning.hpp"

namespace polpre {

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n));
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

std::vector<std::string> constraint_word_set(const std::vector<EntitySpan>& spans,
                                             std::size_t limit) {
  std::vector<std::string> words;
  for (const auto& [w, _] : entity_words(spans, limit)) words.push_back(w);
  return words;  // entity_words output is sorted and unique
}

}  // namespace

void AlignConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DataError("alpha must lie in [0, 1]");
  if (!(theta > 0.0 && theta <= 1.0)) throw DataError("theta must lie in (0, 1]");
  if (window_days < 0) throw DataError("window_days must be >= 0");
}

double weighted_jaccard(const WordCounts& a, const WordCounts& b) {
  double num = 0.0, den = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) {
      den += a[i++].second;
    } else if (i == a.size() || b[j].first < a[i].first) {
      den += b[j++].second;
    } else {
      num += std::min(a[i].second, b[j].second);
      den += std::max(a[i].second, b[j].second);
      ++i;
      ++j;
    }
  }
  return den > 0.0 ? num / den : 0.0;
}

WordCounts entity_words(const std::vector<EntitySpan>& spans, std::size_t token_limit) {
  std::map<std::string, int> counts;
  const auto& stop = english_stopwords();
  for (const auto& s : spans) {
    if (s.end > token_limit) continue;
    for (auto& w : tokenize(s.surface, corpus_tokenizer())) {
      if (!stop.count(w)) ++counts[w];
    }
  }
  return {counts.begin(), counts.end()};
}

std::size_t scope_end(const Article& article, std::size_t sentences) {
  const auto segments = sentence_segments(article);
  const std::size_t take = std::min(segments.size(), sentences + 1);
  return take == 0 ? 0 : segments[take - 1].end;
}

TfIdfIndex::TfIdfIndex(const Corpus& corpus, const AnnotationSet& annotations,
                       const AlignConfig& config, int threads)
    : corpus_(&corpus) {
  const std::size_t n = corpus.size();
  std::vector<std::map<std::string, int>> tf(n);
  entity_bags_.resize(n);
  constraint_words_.resize(n);
  days_.resize(n);

  parallel_for(n, threads, [&](std::size_t i) {
    const Article& a = corpus[i];
    const auto segments = sentence_segments(a);
    auto limit = [&](std::size_t sentences) {
      const std::size_t take = std::min(segments.size(), sentences + 1);
      return take == 0 ? std::size_t{0} : segments[take - 1].end;
    };
    const std::size_t sim_end = limit(config.sim_scope_sentences);
    for (std::size_t t = 0; t < sim_end && t < a.tokens.size(); ++t) ++tf[i][a.tokens[t]];
    const auto& spans = annotations.for_article(a.id).entities;
    entity_bags_[i] = entity_words(spans, sim_end);
    constraint_words_[i] = constraint_word_set(spans, limit(config.entity_constraint_sentences));
    days_[i] = day_number(a.published);
  });

  // Serial merge keeps term ids independent of the worker count.
  std::map<std::string, int> df;
  for (const auto& counts : tf) {
    for (const auto& [term, _] : counts) ++df[term];
  }
  idf_.reserve(df.size());
  for (const auto& [term, d] : df) {
    vocabulary_.emplace(term, static_cast<int>(idf_.size()));
    idf_.push_back(std::log((1.0 + static_cast<double>(n)) / (1.0 + d)) + 1.0);
  }
  const auto dim = static_cast<Eigen::Index>(idf_.size());
  vectors_.assign(n, Eigen::SparseVector<double>(dim));
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<std::pair<int, double>> entries;
    double norm2 = 0.0;
    for (const auto& [term, c] : tf[i]) {
      const int idx = vocabulary_.at(term);
      const double w = c * idf_[idx];
      entries.emplace_back(idx, w);
      norm2 += w * w;
    }
    std::sort(entries.begin(), entries.end());
    auto& v = vectors_[i];
    v.reserve(static_cast<Eigen::Index>(entries.size()));
    if (norm2 == 0.0) return;
    const double norm = std::sqrt(norm2);
    for (const auto& [idx, w] : entries) v.insert(idx) = w / norm;
  });

  for (std::size_t i = 0; i < n; ++i) {
    by_outlet_[corpus[i].outlet].push_back(i);
    for (const auto& w : constraint_words_[i]) entity_postings_[w].push_back(i);
  }
  for (auto& [_, docs] : by_outlet_) {
    std::stable_sort(docs.begin(), docs.end(),
                     [&](std::size_t x, std::size_t y) { return days_[x] < days_[y]; });
  }
}

double TfIdfIndex::cosine(std::size_t a, std::size_t b) const {
  return vectors_[a].dot(vectors_[b]);
}

double TfIdfIndex::entity_similarity(std::size_t a, std::size_t b) const {
  return weighted_jaccard(entity_bags_[a], entity_bags_[b]);
}

double TfIdfIndex::story_similarity(std::size_t a, std::size_t b, double alpha) const {
  return alpha * cosine(a, b) + (1.0 - alpha) * entity_similarity(a, b);
}

bool TfIdfIndex::within_window(std::size_t a, std::size_t b, int window_days) const {
  return std::abs(days_[a] - days_[b]) <= window_days;
}

bool TfIdfIndex::shares_entity_word(std::size_t a, std::size_t b) const {
  const auto& x = constraint_words_[a];
  const auto& y = constraint_words_[b];
  std::size_t i = 0, j = 0;
  while (i < x.size() && j < y.size()) {
    if (x[i] < y[j]) {
      ++i;
    } else if (y[j] < x[i]) {
      ++j;
    } else {
      return true;
    }
  }
  return false;
}

std::map<std::string, std::vector<std::size_t>> TfIdfIndex::candidates(
    std::size_t anchor, int window_days) const {
  std::vector<std::size_t> hits;
  for (const auto& w : constraint_words_[anchor]) {
    const auto it = entity_postings_.find(w);
    if (it != entity_postings_.end()) hits.insert(hits.end(), it->second.begin(), it->second.end());
  }
  std::sort(hits.begin(), hits.end());
  hits.erase(std::unique(hits.begin(), hits.end()), hits.end());
  const std::string& own = (*corpus_)[anchor].outlet;
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t c : hits) {
    const std::string& outlet = (*corpus_)[c].outlet;
    if (c == anchor || outlet == own || !within_window(anchor, c, window_days)) continue;
    out[outlet].push_back(c);
  }
  return out;
}

std::size_t TfIdfIndex::position(std::string_view id) const {
  const auto idx = corpus_->index_of(id);
  if (!idx) throw DataError("article " + std::string(id) + " is not indexed");
  return *idx;
}

std::vector<StoryCluster> align(const TfIdfIndex& index, const AlignConfig& config,
                                int threads) {
  config.validate();
  const Corpus& corpus = index.corpus();
  std::vector<std::optional<StoryCluster>> slots(corpus.size());
  parallel_for(corpus.size(), threads, [&](std::size_t anchor) {
    std::vector<std::pair<std::size_t, double>> matches;
    for (const auto& [outlet, docs] : index.candidates(anchor, config.window_days)) {
      std::size_t best = docs.front();
      double best_score = -1.0;
      for (std::size_t d : docs) {
        const double s = index.story_similarity(anchor, d, config.alpha);
        if (s > best_score || (s == best_score && corpus[d].id < corpus[best].id)) {
          best = d;
          best_score = s;
        }
      }
      if (best_score >= config.theta) matches.emplace_back(best, best_score);
    }
    if (matches.empty()) return;

    // Anchor ranks first so it always survives; members by (date, id).
    std::vector<std::size_t> docs{anchor};
    for (const auto& m : matches) docs.push_back(m.first);
    std::vector<std::size_t> order(docs.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::sort(order.begin() + 1, order.end(), [&](std::size_t x, std::size_t y) {
      const Article& a = corpus[docs[x]];
      const Article& b = corpus[docs[y]];
      if (a.published != b.published) return a.published < b.published;
      return a.id < b.id;
    });
    std::vector<std::size_t> rank(docs.size());
    for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
    std::vector<std::u32string> texts;
    for (std::size_t d : docs) texts.push_back(to_code_points(corpus[d].full_text()));
    const auto keep = dedupe_mask(texts, rank, config.dedupe_threshold);

    StoryCluster cluster;
    cluster.anchor_id = corpus[anchor].id;
    cluster.member_ids.push_back(cluster.anchor_id);
    for (std::size_t k = 0; k < matches.size(); ++k) {
      if (!keep[k + 1]) continue;
      const std::string& id = corpus[matches[k].first].id;
      cluster.member_ids.push_back(id);
      cluster.scores[id] = matches[k].second;
    }
    if (cluster.member_ids.size() > 1) slots[anchor] = std::move(cluster);
  });
  std::vector<StoryCluster> clusters;
  for (auto& s : slots) {
    if (s) clusters.push_back(std::move(*s));
  }
  return clusters;
}

std::vector<StoryCluster> align(const Corpus& corpus, const AnnotationSet& annotations,
                                const AlignConfig& config, int threads) {
  config.validate();
  if (corpus.empty()) return {};
  const TfIdfIndex index(corpus, annotations, config, threads);
  return align(index, config, threads);
}

std::string cluster_to_json(const StoryCluster& cluster) {
  nlohmann::ordered_json j;
  j["anchor"] = cluster.anchor_id;
  auto members = nlohmann::ordered_json::array();
  for (const auto& id : cluster.member_ids) {
    if (id == cluster.anchor_id) continue;
    nlohmann::ordered_json m;
    m["id"] = id;
    m["score"] = cluster.scores.at(id);
    members.push_back(std::move(m));
  }
  j["members"] = std::move(members);
  return j.dump();
}

StoryCluster cluster_from_json(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line.begin(), line.end());
    StoryCluster c;
    c.anchor_id = j.at("anchor").get<std::string>();
    c.member_ids.push_back(c.anchor_id);
    for (const auto& m : j.at("members")) {
      const auto id = m.at("id").get<std::string>();
      c.member_ids.push_back(id);
      c.scores[id] = m.at("score").get<double>();
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed cluster: ") + e.what());
  }
}

void save_clusters(const std::vector<StoryCluster>& clusters,
                   const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& c : clusters) out << cluster_to_json(c) << '\n';
}

std::vector<StoryCluster> load_clusters(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<StoryCluster> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(cluster_from_json(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<GoldGroup> load_gold_groups(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<GoldGroup> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("story_id").get<std::string>(),
                     j.at("article_ids").get<std::vector<std::string>>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string gold_group_to_json(const GoldGroup& group) {
  nlohmann::ordered_json j;
  j["story_id"] = group.story_id;
  j["article_ids"] = group.article_ids;
  return j.dump();
}

MrrReport evaluate_mrr(const std::vector<GoldGroup>& gold, const TfIdfIndex& index,
                       const AlignConfig& config) {
  config.validate();
  const Corpus& corpus = index.corpus();
  MrrReport report;
  for (const auto& group : gold) {
    std::vector<std::size_t> members;
    for (const auto& id : group.article_ids) {
      if (!corpus.contains(id)) {
        throw DataError("gold group " + group.story_id + " references missing id " + id);
      }
      members.push_back(index.position(id));
    }
    std::sort(members.begin(), members.end());
    for (const auto& id : group.article_ids) {
      const std::size_t anchor = index.position(id);
      std::vector<std::pair<double, std::size_t>> ranked;
      for (const auto& [_, docs] : index.candidates(anchor, config.window_days)) {
        for (std::size_t d : docs) {
          const double s = index.story_similarity(anchor, d, config.alpha);
          if (s >= config.theta) ranked.emplace_back(s, d);
        }
      }
      std::sort(ranked.begin(), ranked.end(), [&](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first > y.first;
        return corpus[x.second].id < corpus[y.second].id;
      });
      double rr = 0.0;
      for (std::size_t r = 0; r < ranked.size(); ++r) {
        if (std::binary_search(members.begin(), members.end(), ranked[r].second)) {
          rr = 1.0 / static_cast<double>(r + 1);
          break;
        }
      }
      report.reciprocal_ranks.push_back(rr);
    }
  }
  report.anchors = report.reciprocal_ranks.size();
  double sum = 0.0;
  for (double rr : report.reciprocal_ranks) sum += rr;
  report.mrr = report.anchors ? sum / static_cast<double>(report.anchors) : 0.0;
  return report;
}

MrrReport evaluate_mrr(const std::vector<GoldGroup>& gold, const Corpus& corpus,
                       const AnnotationSet& annotations, const AlignConfig& config) {
  for (const auto& group : gold) {
    for (const auto& id : group.article_ids) {
      if (!corpus.contains(id)) {
        throw DataError("gold group " + group.story_id + " references missing id " + id);
      }
    }
  }
  if (corpus.empty()) return {};
  const TfIdfIndex index(corpus, annotations, config);
  return evaluate_mrr(gold, index, config);
}

}  // namespace polpre
