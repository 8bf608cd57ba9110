#include "polpre/masking.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "json.hpp"
#include "polpre/random.hpp"

namespace polpre {

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> r = {"[MASK]", "[UNK]", "[PAD]"};
  return r;
}

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(reserved_tokens()) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kReserved ||
      !std::equal(reserved_tokens().begin(), reserved_tokens().end(), tokens_.begin())) {
    throw DataError("vocabulary must start with [MASK], [UNK], [PAD]");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

int Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::string Vocabulary::digest() const {
  std::string joined;
  for (const auto& t : tokens_) {
    joined += t;
    joined += '\n';
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(joined)));
  return buf;
}

Vocabulary build_vocab(const Corpus& corpus, int min_count) {
  std::map<std::string, long> counts;
  for (const auto& a : corpus) {
    for (const auto& t : a.tokens) ++counts[t];
  }
  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [t, c] : counts) {
    if (c >= min_count && std::find(reserved_tokens().begin(), reserved_tokens().end(), t) ==
                              reserved_tokens().end()) {
      kept.emplace_back(t, c);
    }
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& x, const auto& y) { return x.second > y.second; });
  std::vector<std::string> tokens = reserved_tokens();
  for (auto& [t, _] : kept) tokens.push_back(std::move(t));
  return Vocabulary(std::move(tokens));
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& t : vocab.tokens()) out << t << '\n';
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return Vocabulary(std::move(tokens));
}

void MaskConfig::validate() const {
  if (!(upsample_prob >= 0.0 && upsample_prob <= 1.0)) {
    throw DataError("upsample probability must lie in [0, 1]");
  }
  if (!(total_rate > 0.0 && total_rate < 1.0)) throw DataError("mask rate must lie in (0, 1)");
  // Zero components are allowed so a single action can be forced.
  if (!(ratio_mask >= 0 && ratio_random >= 0 && ratio_keep >= 0) ||
      !(ratio_mask + ratio_random + ratio_keep > 0)) {
    throw DataError("replacement ratio components must be non-negative with a positive sum");
  }
  if (max_len == 0) throw DataError("max_len must be positive");
}

std::string_view to_string(MaskAction action) {
  switch (action) {
    case MaskAction::Mask: return "MASK";
    case MaskAction::Random: return "RANDOM";
    case MaskAction::Keep: return "KEEP";
  }
  return "?";
}

MaskAction parse_mask_action(std::string_view text) {
  if (text == "MASK") return MaskAction::Mask;
  if (text == "RANDOM") return MaskAction::Random;
  if (text == "KEEP") return MaskAction::Keep;
  throw DataError("unknown mask action '" + std::string(text) + "'");
}

std::size_t mask_budget(std::size_t length, double rate) {
  const auto b = static_cast<std::size_t>(std::llround(rate * static_cast<double>(length)));
  return std::min(length, std::max<std::size_t>(1, b));
}

MaskedSequence sample_mask(const Article& article, const ArticleAnnotations& annotations,
                           const Vocabulary& vocab, const MaskConfig& config) {
  config.validate();
  if (article.tokens.empty()) throw DataError("cannot mask empty article " + article.id);
  const std::size_t length = std::min(article.tokens.size(), config.max_len);
  std::vector<std::string> kept(article.tokens.begin(),
                                article.tokens.begin() + static_cast<std::ptrdiff_t>(length));
  MaskedSequence seq;
  seq.id = article.id;
  seq.input_ids = vocab.encode(kept);
  const std::vector<int> original = seq.input_ids;

  Rng rng(derive_seed(config.seed, article.id));
  const std::size_t budget = mask_budget(length, config.total_rate);

  // Upsampling units: eligible entity spans, then sentiment tokens outside them.
  std::vector<std::pair<std::size_t, std::size_t>> units;
  std::vector<char> in_entity(length, 0);
  for (const auto& span : annotations.entities) {
    if (span.length() > config.max_span || span.end > length) continue;
    for (std::size_t i = span.start; i < span.end; ++i) in_entity[i] = 1;
    if (rng.bernoulli(config.upsample_prob)) units.emplace_back(span.start, span.end);
  }
  for (std::size_t pos : annotations.sentiment_positions) {
    if (pos >= length || in_entity[pos]) continue;
    if (rng.bernoulli(config.upsample_prob)) units.emplace_back(pos, pos + 1);
  }

  std::size_t selected = 0;
  for (const auto& [b, e] : units) selected += e - b;
  if (selected > budget) {
    rng.shuffle(units);
    std::vector<std::pair<std::size_t, std::size_t>> fitting;
    selected = 0;
    for (const auto& u : units) {
      if (selected + (u.second - u.first) <= budget) {
        fitting.push_back(u);
        selected += u.second - u.first;
      }
    }
    units = std::move(fitting);
  }

  std::vector<char> chosen(length, 0);
  for (const auto& [b, e] : units) {
    for (std::size_t i = b; i < e; ++i) chosen[i] = 1;
  }
  std::vector<std::size_t> free_positions;
  for (std::size_t i = 0; i < length; ++i) {
    if (!chosen[i]) free_positions.push_back(i);
  }
  for (std::size_t k : rng.sample_without_replacement(free_positions.size(), budget - selected)) {
    chosen[free_positions[k]] = 1;
  }

  const double total = config.ratio_mask + config.ratio_random + config.ratio_keep;
  const int random_span = vocab.size() - Vocabulary::kReserved;
  for (std::size_t i = 0; i < length; ++i) {
    if (!chosen[i]) continue;
    const double u = rng.uniform01() * total;
    MaskAction action = u < config.ratio_mask                         ? MaskAction::Mask
                        : u < config.ratio_mask + config.ratio_random ? MaskAction::Random
                                                                      : MaskAction::Keep;
    if (action == MaskAction::Random && random_span <= 0) action = MaskAction::Mask;
    switch (action) {
      case MaskAction::Mask:
        seq.input_ids[i] = Vocabulary::kMask;
        break;
      case MaskAction::Random:
        seq.input_ids[i] = Vocabulary::kReserved +
                           static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(random_span)));
        break;
      case MaskAction::Keep:
        break;
    }
    seq.masked.push_back({i, original[i], action});
  }
  return seq;
}

std::string masked_to_json(const MaskedSequence& seq) {
  nlohmann::ordered_json j;
  j["id"] = seq.id;
  j["input_ids"] = seq.input_ids;
  nlohmann::ordered_json targets = nlohmann::ordered_json::object();
  auto actions = nlohmann::ordered_json::array();
  for (const auto& m : seq.masked) {
    targets[std::to_string(m.position)] = m.target;
    actions.push_back(std::string(to_string(m.action)));
  }
  j["targets"] = std::move(targets);
  j["actions"] = std::move(actions);
  return j.dump();
}

MaskedSequence masked_from_json(std::string_view line) {
  try {
    const auto j = nlohmann::ordered_json::parse(line.begin(), line.end());
    MaskedSequence seq;
    seq.id = j.at("id").get<std::string>();
    seq.input_ids = j.at("input_ids").get<std::vector<int>>();
    const auto& targets = j.at("targets");
    const auto& actions = j.at("actions");
    if (targets.size() != actions.size()) throw DataError("targets and actions differ in length");
    std::size_t k = 0;
    for (auto it = targets.begin(); it != targets.end(); ++it, ++k) {
      MaskedPosition m;
      m.position = std::stoul(it.key());
      m.target = it.value().get<int>();
      m.action = parse_mask_action(actions[k].get<std::string>());
      if (m.position >= seq.input_ids.size()) throw DataError("target position out of range");
      seq.masked.push_back(m);
    }
    std::sort(seq.masked.begin(), seq.masked.end(),
              [](const auto& a, const auto& b) { return a.position < b.position; });
    return seq;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed masked sequence: ") + e.what());
  } catch (const std::logic_error& e) {
    throw DataError(std::string("malformed masked sequence: ") + e.what());
  }
}

void save_masked(const std::vector<MaskedSequence>& seqs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : seqs) out << masked_to_json(s) << '\n';
}

std::vector<MaskedSequence> load_masked(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<MaskedSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(masked_from_json(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace polpre
