#pragma once

#include <Eigen/Sparse>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "polpre/annotate.hpp"
#include "polpre/corpus.hpp"

namespace polpre {

struct AlignConfig {
  double alpha = 0.4;
  double theta = 0.23;
  int window_days = 3;
  std::size_t sim_scope_sentences = 5;
  std::size_t entity_constraint_sentences = 3;
  double dedupe_threshold = 0.1;

  void validate() const;  // throws DataError
};

// Word -> count, sorted by word.
using WordCounts = std::vector<std::pair<std::string, int>>;

// Σ_w min(a_w, b_w) / Σ_w max(a_w, b_w); 0 when both are empty.
double weighted_jaccard(const WordCounts& a, const WordCounts& b);

// Entity surfaces split into lowercase words with stopwords removed. Only
// spans ending at or before `token_limit` contribute.
WordCounts entity_words(const std::vector<EntitySpan>& spans, std::size_t token_limit);

// Token index one past the title and the first `sentences` body sentences.
std::size_t scope_end(const Article& article, std::size_t sentences);

// Unigram TF-IDF over each article's title and leading sentences, with
// idf = ln((1 + N) / (1 + df)) + 1 and L2-normalized raw-count tf.
class TfIdfIndex {
 public:
  TfIdfIndex(const Corpus& corpus, const AnnotationSet& annotations,
             const AlignConfig& config, int threads = 1);

  std::size_t size() const { return vectors_.size(); }
  const Corpus& corpus() const { return *corpus_; }

  const std::unordered_map<std::string, int>& vocabulary() const { return vocabulary_; }
  const std::vector<double>& idf() const { return idf_; }
  const Eigen::SparseVector<double>& vector(std::size_t doc) const { return vectors_[doc]; }
  const WordCounts& entity_bag(std::size_t doc) const { return entity_bags_[doc]; }
  const std::vector<std::string>& constraint_words(std::size_t doc) const {
    return constraint_words_[doc];
  }

  double cosine(std::size_t a, std::size_t b) const;
  double entity_similarity(std::size_t a, std::size_t b) const;
  // alpha * cosine + (1 - alpha) * entity similarity.
  double story_similarity(std::size_t a, std::size_t b, double alpha) const;

  bool within_window(std::size_t a, std::size_t b, int window_days) const;
  bool shares_entity_word(std::size_t a, std::size_t b) const;

  // Other-outlet articles inside the date window that share an entity word
  // with the anchor, grouped by outlet name; positions ascending.
  std::map<std::string, std::vector<std::size_t>> candidates(std::size_t anchor,
                                                             int window_days) const;

  std::size_t position(std::string_view id) const;  // throws DataError

 private:
  const Corpus* corpus_;
  std::unordered_map<std::string, int> vocabulary_;
  std::vector<double> idf_;
  std::vector<Eigen::SparseVector<double>> vectors_;
  std::vector<WordCounts> entity_bags_;
  std::vector<std::vector<std::string>> constraint_words_;  // sorted unique
  std::vector<int> days_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_outlet_;  // date-sorted
  std::unordered_map<std::string, std::vector<std::size_t>> entity_postings_;
};

struct StoryCluster {
  std::string anchor_id;
  std::vector<std::string> member_ids;  // anchor first, then matches by outlet
  std::map<std::string, double> scores;  // non-anchor members

  friend bool operator==(const StoryCluster&, const StoryCluster&) = default;
};

// Every article anchors one candidate cluster; each other outlet contributes
// its best-scoring candidate when that score reaches theta. Near-duplicates
// inside a cluster are removed (the anchor always stays) and clusters left
// with only the anchor are dropped.
std::vector<StoryCluster> align(const Corpus& corpus, const AnnotationSet& annotations,
                                const AlignConfig& config, int threads = 1);
std::vector<StoryCluster> align(const TfIdfIndex& index, const AlignConfig& config,
                                int threads = 1);

std::string cluster_to_json(const StoryCluster& cluster);
StoryCluster cluster_from_json(std::string_view line);
void save_clusters(const std::vector<StoryCluster>& clusters, const std::filesystem::path& path);
std::vector<StoryCluster> load_clusters(const std::filesystem::path& path);

struct GoldGroup {
  std::string story_id;
  std::vector<std::string> article_ids;
};

std::vector<GoldGroup> load_gold_groups(const std::filesystem::path& path);
std::string gold_group_to_json(const GoldGroup& group);

struct MrrReport {
  double mrr = 0.0;
  std::size_t anchors = 0;
  std::vector<double> reciprocal_ranks;  // one per gold article, in file order
};

// Mean over gold articles of 1 / rank of the first same-story article among
// all candidates (other outlets, date window, shared entity word, score >=
// theta) ranked by score. Unreachable partners contribute 0.
MrrReport evaluate_mrr(const std::vector<GoldGroup>& gold, const TfIdfIndex& index,
                       const AlignConfig& config);
MrrReport evaluate_mrr(const std::vector<GoldGroup>& gold, const Corpus& corpus,
                       const AnnotationSet& annotations, const AlignConfig& config);

}  // namespace polpre
