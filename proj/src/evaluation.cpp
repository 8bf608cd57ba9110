#include "polpre/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"
#include "polpre/random.hpp"

namespace polpre {

double softmax_objective(const Eigen::MatrixXd& X, const std::vector<int>& labels,
                         const Eigen::MatrixXd& W, const Eigen::RowVectorXd& b, double l2,
                         Eigen::MatrixXd* grad_w, Eigen::RowVectorXd* grad_b) {
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd logits = (X * W).rowwise() + b;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double top = logits.row(i).maxCoeff();
    const double log_z = top + std::log((logits.row(i).array() - top).exp().sum());
    loss += log_z - logits(i, labels[static_cast<std::size_t>(i)]);
    logits.row(i) = (logits.row(i).array() - log_z).exp();
    logits(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad_w) *grad_w = X.transpose() * logits * inv_n + l2 * W;
  if (grad_b) *grad_b = logits.colwise().sum() * inv_n;
  return loss * inv_n + 0.5 * l2 * W.squaredNorm();
}

ProbeResult linear_probe(const std::map<std::string, Eigen::VectorXd>& embeddings,
                         const std::map<std::string, Ideology>& labels, std::uint64_t seed,
                         const ProbeOptions& options) {
  std::vector<std::string> ids;
  std::set<Ideology> classes;
  for (const auto& [id, label] : labels) {
    if (embeddings.count(id)) {
      ids.push_back(id);
      classes.insert(label);
    }
  }
  if (ids.size() < 10) throw DataError("linear probe needs at least 10 labeled embeddings");
  if (classes.size() < 2) throw DataError("linear probe needs at least 2 classes");
  const std::vector<Ideology> class_list(classes.begin(), classes.end());
  auto class_index = [&](Ideology c) {
    return static_cast<int>(std::find(class_list.begin(), class_list.end(), c) - class_list.begin());
  };

  Rng rng(seed);
  rng.shuffle(ids);
  auto n_train = static_cast<std::size_t>(std::llround(options.train_fraction * ids.size()));
  n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);
  const auto dim = embeddings.at(ids.front()).size();

  auto design = [&](std::size_t begin, std::size_t end, std::vector<int>& y) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(end - begin), dim);
    for (std::size_t i = begin; i < end; ++i) {
      X.row(static_cast<Eigen::Index>(i - begin)) = embeddings.at(ids[i]).transpose();
      y.push_back(class_index(labels.at(ids[i])));
    }
    return X;
  };
  std::vector<int> y_train, y_test;
  Eigen::MatrixXd X_train = design(0, n_train, y_train);
  Eigen::MatrixXd X_test = design(n_train, ids.size(), y_test);

  const Eigen::RowVectorXd mean = X_train.colwise().mean();
  Eigen::RowVectorXd scale =
      ((X_train.rowwise() - mean).array().square().colwise().mean()).sqrt().matrix();
  for (Eigen::Index k = 0; k < scale.size(); ++k) {
    if (!(scale[k] > 1e-12)) scale[k] = 1.0;
  }
  X_train = ((X_train.rowwise() - mean).array().rowwise() / scale.array()).matrix();
  X_test = ((X_test.rowwise() - mean).array().rowwise() / scale.array()).matrix();

  const auto k = static_cast<Eigen::Index>(class_list.size());
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(dim, k);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(k);
  Eigen::MatrixXd gw;
  Eigen::RowVectorXd gb;
  for (int it = 0; it < options.iterations; ++it) {
    softmax_objective(X_train, y_train, W, b, options.l2, &gw, &gb);
    W -= options.learning_rate * gw;
    b -= options.learning_rate * gb;
  }

  const Eigen::MatrixXd scores = (X_test * W).rowwise() + b;
  std::vector<std::size_t> tp(class_list.size()), fp(class_list.size()), fn(class_list.size());
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index pred;
    scores.row(i).maxCoeff(&pred);
    const int truth = y_test[static_cast<std::size_t>(i)];
    if (pred == truth) {
      ++correct;
      ++tp[static_cast<std::size_t>(truth)];
    } else {
      ++fp[static_cast<std::size_t>(pred)];
      ++fn[static_cast<std::size_t>(truth)];
    }
  }
  ProbeResult r;
  r.n_train = n_train;
  r.n_test = ids.size() - n_train;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n_test);
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < class_list.size(); ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    const double f1 = denom > 0 ? 2.0 * tp[c] / denom : 0.0;
    r.per_class_f1[class_list[c]] = f1;
    f1_sum += f1;
  }
  r.macro_f1 = f1_sum / static_cast<double>(class_list.size());
  return r;
}

std::map<Ideology, double> ppl_by_ideology(const EncoderModel<double>& model,
                                           const MlmHead<double>& head, const Vocabulary& vocab,
                                           const Corpus& corpus, std::size_t n_positions,
                                           std::uint64_t seed) {
  std::map<Ideology, std::pair<double, std::size_t>> acc;
  for (const auto& a : corpus) {
    if (a.tokens.empty()) continue;
    const auto ids = vocab.encode(a.tokens);
    const double ppl = pseudo_perplexity(model, head, ids, n_positions, derive_seed(seed, a.id));
    auto& [sum, count] = acc[a.ideology];
    sum += ppl;
    ++count;
  }
  std::map<Ideology, double> out;
  for (const auto& [ideology, sc] : acc) out[ideology] = sc.first / static_cast<double>(sc.second);
  return out;
}

PromptTemplate default_prompt_template() {
  return {"{p} [SEP] The stance towards {target} is [MASK] .", "negative", "positive"};
}

std::vector<PromptTemplate> stance_prompt_templates() {
  return {
      {"{p} [SEP] The stance towards {target} is [MASK] .", "negative", "positive"},
      {"{p} [SEP] It reveals a [MASK] stance on {target} .", "negative", "positive"},
      {"{p} [SEP] The speaker holds a [MASK] attitude towards {target} .", "negative", "positive"},
      {"{p} [SEP] What is the stance on {target} ? [MASK] .", "Negative", "Positive"},
      {"{p} [SEP] The previous passage [MASK] {target} .", "opposes", "favors"},
      {"{p} [SEP] The stance on {target} is [MASK] .", "negative", "positive"},
      {"{p} [SEP] The stance towards {target} : [MASK] .", "negative", "positive"},
      {"{p} [SEP] The author [MASK] {target} .", "opposes", "favors"},
      {"{p} [SEP] [MASK] {target}", "oppose", "favor"},
      {"{p} [SEP] [MASK]. {target}", "No", "Yes"},
      {"{p} [SEP] [MASK] {target}", "No", "Yes"},
  };
}

std::string render_prompt(std::string_view p, std::string_view target,
                          const PromptTemplate& tmpl) {
  if (target.empty()) throw DataError("missing target");
  auto count = [&](std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = tmpl.pattern.find(needle); pos != std::string::npos;
         pos = tmpl.pattern.find(needle, pos + needle.size())) {
      ++n;
    }
    return n;
  };
  const std::size_t n_target = count("{target}");
  const std::size_t n_p = count("{p}");
  if (n_target != 1 || n_p > 1) {
    throw DataError("prompt pattern needs {target} exactly once and {p} at most once: " +
                    tmpl.pattern);
  }
  const std::string pattern = n_p ? tmpl.pattern : "{p} [SEP] " + tmpl.pattern;
  // Substitute left to right so placeholder text inside p or target is inert.
  std::string out;
  std::size_t pos = 0;
  while (pos < pattern.size()) {
    if (pattern.compare(pos, 3, "{p}") == 0) {
      out += p;
      pos += 3;
    } else if (pattern.compare(pos, 8, "{target}") == 0) {
      out += target;
      pos += 8;
    } else {
      out += pattern[pos++];
    }
  }
  return out;
}

MaskReport mask_report(const std::vector<MaskedSequence>& seqs, const AnnotationSet& annotations,
                       std::size_t max_span) {
  if (seqs.empty()) throw DataError("mask report needs at least one sequence");
  MaskReport r;
  for (const auto& s : seqs) {
    const std::size_t n = s.input_ids.size();
    const auto& ann = annotations.for_article(s.id);
    std::vector<char> kind(n, 0);  // 0 plain, 1 entity, 2 sentiment
    for (const auto& span : ann.entities) {
      if (span.length() > max_span || span.end > n) continue;
      for (std::size_t i = span.start; i < span.end; ++i) kind[i] = 1;
    }
    for (std::size_t pos : ann.sentiment_positions) {
      if (pos < n && kind[pos] == 0) kind[pos] = 2;
    }
    std::vector<char> masked(n, 0);
    for (const auto& m : s.masked) {
      masked[m.position] = 1;
      switch (m.action) {
        case MaskAction::Mask: ++r.mask_actions; break;
        case MaskAction::Random: ++r.random_actions; break;
        case MaskAction::Keep: ++r.keep_actions; break;
      }
    }
    ++r.sequences;
    for (std::size_t i = 0; i < n; ++i) {
      ++r.tokens;
      r.masked += masked[i];
      switch (kind[i]) {
        case 1: ++r.entity_tokens; r.entity_masked += masked[i]; break;
        case 2: ++r.sentiment_tokens; r.sentiment_masked += masked[i]; break;
        default: ++r.plain_tokens; r.plain_masked += masked[i]; break;
      }
    }
  }
  return r;
}

std::string MaskReport::to_json() const {
  nlohmann::ordered_json j;
  j["sequences"] = sequences;
  j["tokens"] = tokens;
  j["masked"] = masked;
  j["rate"] = rate();
  j["entity_tokens"] = entity_tokens;
  j["entity_masked"] = entity_masked;
  j["entity_rate"] = entity_rate();
  j["sentiment_tokens"] = sentiment_tokens;
  j["sentiment_masked"] = sentiment_masked;
  j["plain_tokens"] = plain_tokens;
  j["plain_masked"] = plain_masked;
  j["plain_rate"] = plain_rate();
  j["actions"] = {{"MASK", mask_actions}, {"RANDOM", random_actions}, {"KEEP", keep_actions}};
  return j.dump();
}

std::string MaskReport::to_table() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "sequences        " << sequences << '\n'
     << "tokens           " << tokens << '\n'
     << "masked rate      " << rate() << "  (" << masked << ")\n"
     << "entity rate      " << entity_rate() << "  (" << entity_masked << "/" << entity_tokens << ")\n"
     << "plain rate       " << plain_rate() << "  (" << plain_masked << "/" << plain_tokens << ")\n"
     << "MASK/RANDOM/KEEP " << mask_share() << " / " << random_share() << " / " << keep_share()
     << '\n';
  return os.str();
}

}  // namespace polpre
