#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "polpre/corpus.hpp"

namespace polpre {

// Lowercase substring patterns for the page filters.
struct FilterPatternSet {
  std::vector<std::string> url_patterns;
  std::vector<std::string> title_patterns;
  std::vector<std::string> nonus_url_keywords;
  std::vector<std::string> us_text_keywords;
};

// The non-article and non-US patterns published with the original corpus.
FilterPatternSet default_filter_patterns();

// Reads url.txt, title.txt, nonus_url.txt and us_text.txt from `dir`
// (missing files leave that list empty). Patterns are lowercased.
FilterPatternSet load_filter_patterns(const std::filesystem::path& dir);

Corpus filter_non_articles(const Corpus& corpus, const FilterPatternSet& patterns);

// Removes an article iff its url holds a non-US keyword and its text holds no
// US keyword.
Corpus filter_non_us(const Corpus& corpus, const FilterPatternSet& patterns);

// ---------------------------------------------------------------------------
// Near-duplicate detection

// Unit-cost edit distance over Unicode code points.
std::size_t levenshtein(std::u32string_view a, std::u32string_view b);

// Exact distance when it is <= limit, otherwise nullopt. Runs in
// O(limit * max(|a|, |b|)).
std::optional<std::size_t> bounded_levenshtein(std::u32string_view a,
                                               std::u32string_view b,
                                               std::size_t limit);

std::u32string to_code_points(std::string_view utf8);

// dist(a, b) / max(len(a), len(b)); 0 when both are empty.
double normalized_edit_distance(std::u32string_view a, std::u32string_view b);
double near_duplicate_diff(const Article& a, const Article& b);

// True iff near_duplicate_diff(a, b) < threshold, decided with a banded
// distance computation.
bool is_near_duplicate(std::u32string_view a, std::u32string_view b,
                       double threshold);

enum class DedupeScope { WithinOutlet, WithinCluster };

// Keeps-mask over `texts`: entry i is dropped iff some j has diff < threshold
// and precedes i in `order_rank` (earlier date, then smaller id).
std::vector<bool> dedupe_mask(const std::vector<std::u32string>& texts,
                              const std::vector<std::size_t>& order_rank,
                              double threshold, int threads = 1);

// WithinOutlet compares only articles of the same outlet; WithinCluster treats
// the whole corpus as one group.
Corpus dedupe(const Corpus& corpus, double threshold = 0.1,
              DedupeScope scope = DedupeScope::WithinOutlet, int threads = 1);

// ---------------------------------------------------------------------------
// Politics classifier

struct ClassifierOptions {
  int min_df = 5;
  double max_df_fraction = 0.7;
  int iterations = 300;
  double learning_rate = 2.0;
  double l2 = 1e-4;
};

struct PoliticsClassifier {
  std::vector<std::string> terms;  // feature index -> n-gram
  std::unordered_map<std::string, int> vocabulary;
  Eigen::VectorXd idf;
  Eigen::VectorXd weights;
  double bias = 0.0;

  // L2-normalized unigram+bigram TF-IDF features.
  Eigen::SparseVector<double> features(const std::vector<std::string>& tokens) const;
  double probability(const Article& article) const;
  bool is_politics(const Article& article) const {
    return probability(article) >= 0.5;
  }
};

// Unigrams followed by space-joined bigrams.
std::vector<std::string> unigrams_and_bigrams(const std::vector<std::string>& tokens);

// Mean logistic loss plus (l2/2)|w|^2 over the rows of X; writes gradients.
double logistic_objective(const Eigen::SparseMatrix<double, Eigen::RowMajor>& X,
                          const Eigen::VectorXd& labels, const Eigen::VectorXd& w,
                          double b, double l2, Eigen::VectorXd* grad_w,
                          double* grad_b);

using LabeledArticle = std::pair<const Article*, bool>;

// Throws DataError unless both labels are present and there are >= 2 examples.
PoliticsClassifier train_politics_classifier(
    const std::vector<LabeledArticle>& labeled,
    const ClassifierOptions& options = {});

// One self-training round: labels unlabeled pages whose politics probability
// is >= p_pos (politics) or <= 1 - p_neg (non-politics) and retrains.
PoliticsClassifier self_train_politics_classifier(
    const std::vector<LabeledArticle>& labeled,
    const std::vector<const Article*>& unlabeled, double p_pos, double p_neg,
    const ClassifierOptions& options = {});

Corpus filter_non_politics(const Corpus& corpus, const PoliticsClassifier& model);

std::string classifier_to_json(const PoliticsClassifier& model);
PoliticsClassifier classifier_from_json(std::string_view text);

// ---------------------------------------------------------------------------
// Media leak removal

struct OutletLeakPatterns {
  std::vector<std::string> self_mention_phrases;  // lowercase
  std::vector<std::string> frequent_sentences;    // normalized
};

using LeakPatternTable = std::map<std::string, OutletLeakPatterns>;

// Lowercase, whitespace collapsed, trimmed.
std::string normalize_sentence(std::string_view sentence);

// Case-insensitive replacement of each phrase with "[MASK]".
std::string mask_phrases(std::string_view text,
                         const std::vector<std::string>& phrases);

// Fills frequent_sentences with sentences seen more than `min_count` times per
// outlet, after self-mention masking.
void mine_frequent_sentences(const Corpus& corpus, LeakPatternTable& table,
                             std::size_t min_count = 100);

// Reads "outlet<TAB>phrase" lines.
LeakPatternTable load_self_mentions(const std::filesystem::path& path);

struct LeakStripResult {
  Corpus corpus;
  std::vector<std::string> dropped_ids;  // reduced to zero paragraphs
};

LeakStripResult strip_media_leaks(const Corpus& corpus,
                                  const LeakPatternTable& table);

// ---------------------------------------------------------------------------

// Downsamples every ideology to the smallest ideology count, uniformly without
// replacement. Survivors keep corpus order.
Corpus balance_by_ideology(const Corpus& corpus, std::uint64_t seed);

}  // namespace polpre
