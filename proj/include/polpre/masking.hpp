#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "polpre/annotate.hpp"
#include "polpre/corpus.hpp"

namespace polpre {

class Vocabulary {
 public:
  static constexpr int kMask = 0;
  static constexpr int kUnk = 1;
  static constexpr int kPad = 2;
  static constexpr int kReserved = 3;

  Vocabulary();  // reserved tokens only
  explicit Vocabulary(std::vector<std::string> tokens);  // must start with the reserved tokens

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<int> encode(const std::vector<std::string>& tokens) const;

  // Hex FNV-1a digest of the newline-joined token list.
  std::string digest() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Tokens with count >= min_count, ordered by (count desc, token asc), after the
// reserved "[MASK]", "[UNK]", "[PAD]".
Vocabulary build_vocab(const Corpus& corpus, int min_count);

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocab(const std::filesystem::path& path);

struct MaskConfig {
  double upsample_prob = 0.30;
  double total_rate = 0.15;
  double ratio_mask = 8.0;
  double ratio_random = 1.0;
  double ratio_keep = 1.0;
  std::size_t max_len = 512;
  std::size_t max_span = 5;
  std::uint64_t seed = 0;

  void validate() const;  // throws DataError
};

enum class MaskAction { Mask, Random, Keep };

std::string_view to_string(MaskAction action);
MaskAction parse_mask_action(std::string_view text);

struct MaskedPosition {
  std::size_t position = 0;
  int target = 0;  // original token id
  MaskAction action = MaskAction::Mask;

  friend bool operator==(const MaskedPosition&, const MaskedPosition&) = default;
};

struct MaskedSequence {
  std::string id;
  std::vector<int> input_ids;           // after replacement, truncated
  std::vector<MaskedPosition> masked;   // sorted by position

  friend bool operator==(const MaskedSequence&, const MaskedSequence&) = default;
};

// Budget of masked positions for a sequence of `length` tokens:
// round(rate * length), at least 1.
std::size_t mask_budget(std::size_t length, double rate);

// Entity spans (up to max_span tokens) and sentiment tokens are each picked
// with probability upsample_prob; whole spans are dropped at random until the
// picks fit the budget, and uniform positions fill the rest. Each masked
// position becomes [MASK], a random non-reserved token, or stays, in the
// configured ratio. The random stream is seeded from (config.seed, article id).
MaskedSequence sample_mask(const Article& article, const ArticleAnnotations& annotations,
                           const Vocabulary& vocab, const MaskConfig& config);

std::string masked_to_json(const MaskedSequence& seq);
MaskedSequence masked_from_json(std::string_view line);
void save_masked(const std::vector<MaskedSequence>& seqs, const std::filesystem::path& path);
std::vector<MaskedSequence> load_masked(const std::filesystem::path& path);

}  // namespace polpre
