#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "polpre/annotate.hpp"
#include "polpre/corpus.hpp"
#include "polpre/masking.hpp"
#include "polpre/model.hpp"

namespace polpre {

struct ProbeOptions {
  double train_fraction = 0.8;
  int iterations = 3000;
  double learning_rate = 1.0;
  double l2 = 1e-4;
};

struct ProbeResult {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::map<Ideology, double> per_class_f1;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

// Softmax regression on standardized features over a seeded split of the
// sorted ids; reports held-out accuracy and F1.
ProbeResult linear_probe(const std::map<std::string, Eigen::VectorXd>& embeddings,
                         const std::map<std::string, Ideology>& labels, std::uint64_t seed,
                         const ProbeOptions& options = {});

// Mean softmax cross-entropy plus (l2/2)|W|^2 for row-feature matrix X and
// integer class labels; fills gradients when given. W is features x classes.
double softmax_objective(const Eigen::MatrixXd& X, const std::vector<int>& labels,
                         const Eigen::MatrixXd& W, const Eigen::RowVectorXd& b, double l2,
                         Eigen::MatrixXd* grad_w, Eigen::RowVectorXd* grad_b);

// Mean pseudo-perplexity of the articles in each ideology bucket.
std::map<Ideology, double> ppl_by_ideology(const EncoderModel<double>& model,
                                           const MlmHead<double>& head, const Vocabulary& vocab,
                                           const Corpus& corpus, std::size_t n_positions,
                                           std::uint64_t seed);

struct PromptTemplate {
  std::string pattern;  // "{target}" once; "{p}" at most once
  std::string verbalizer_negative = "negative";
  std::string verbalizer_positive = "positive";
};

PromptTemplate default_prompt_template();
// The eleven stance prompts with their verbalizers.
std::vector<PromptTemplate> stance_prompt_templates();

// A pattern without "{p}" is rendered after "p [SEP] ". Throws DataError on an
// empty target or a malformed pattern.
std::string render_prompt(std::string_view p, std::string_view target,
                          const PromptTemplate& tmpl = default_prompt_template());

struct MaskReport {
  std::size_t sequences = 0;
  std::size_t tokens = 0;
  std::size_t masked = 0;
  std::size_t entity_tokens = 0;
  std::size_t entity_masked = 0;
  std::size_t sentiment_tokens = 0;
  std::size_t sentiment_masked = 0;
  std::size_t plain_tokens = 0;
  std::size_t plain_masked = 0;
  std::size_t mask_actions = 0;
  std::size_t random_actions = 0;
  std::size_t keep_actions = 0;

  double rate() const { return tokens ? double(masked) / tokens : 0.0; }
  double entity_rate() const { return entity_tokens ? double(entity_masked) / entity_tokens : 0.0; }
  double plain_rate() const { return plain_tokens ? double(plain_masked) / plain_tokens : 0.0; }
  double mask_share() const { return masked ? double(mask_actions) / masked : 0.0; }
  double random_share() const { return masked ? double(random_actions) / masked : 0.0; }
  double keep_share() const { return masked ? double(keep_actions) / masked : 0.0; }

  std::string to_json() const;
  std::string to_table() const;
};

// Entity tokens are those covered by spans of at most `max_span` tokens;
// sentiment tokens outside entities are counted separately; the rest are
// plain.
MaskReport mask_report(const std::vector<MaskedSequence>& seqs, const AnnotationSet& annotations,
                       std::size_t max_span = kMaxEntityTokens);

}  // namespace polpre
