#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace polpre {

// Malformed or inconsistent input data. The CLI maps it to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Ideology { Left, Center, Right };

inline constexpr Ideology kAllIdeologies[] = {Ideology::Left, Ideology::Center,
                                             Ideology::Right};

std::string_view to_string(Ideology ideology);  // "L" / "C" / "R"
Ideology parse_ideology(std::string_view text);  // throws DataError

using Date = std::chrono::year_month_day;

std::string format_date(Date date);       // YYYY-MM-DD
Date parse_date(std::string_view text);   // throws DataError
int day_number(Date date);                // days since 1970-01-01

struct TokenizerConfig {
  bool lowercase = true;
  bool strip_punctuation = true;
  // Tokens in this set are dropped. Empty by default: callers opt in.
  std::unordered_set<std::string> stopwords;
};

// Whitespace tokenizer. Splits on ASCII and Unicode space characters, then
// optionally lowercases (ASCII) and strips leading/trailing punctuation.
// Bracketed special tokens such as "[MASK]" pass through untouched.
std::vector<std::string> tokenize(std::string_view text,
                                  const TokenizerConfig& config);

// The configuration used to derive Article::tokens.
const TokenizerConfig& corpus_tokenizer();
// Same splitting and stripping as corpus_tokenizer() but case preserved, so
// token indices line up one-to-one with Article::tokens.
const TokenizerConfig& cased_tokenizer();

// Splits on '.', '!' or '?' followed by whitespace. The terminator stays
// with its sentence; empty pieces are dropped.
std::vector<std::string> split_sentences(std::string_view text);

// A small English function-word list shared by entity-word extraction and
// the heuristic tagger.
const std::unordered_set<std::string>& english_stopwords();

struct Article {
  std::string id;
  std::string outlet;
  Ideology ideology = Ideology::Center;
  Date published{};
  std::string url;
  std::string title;
  std::vector<std::string> paragraphs;
  std::vector<std::string> tokens;  // derived; never serialized

  // Title followed by the paragraphs, newline separated.
  std::string full_text() const;
  // Recomputes `tokens` from title and paragraphs.
  void retokenize();

  friend bool operator==(const Article&, const Article&) = default;
};

// Token range [begin, end) of one sentence within Article::tokens. The title
// is segment 0; the sentences of every paragraph follow in order.
struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;
};

std::vector<Segment> sentence_segments(const Article& article);

class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Article> articles);  // throws on duplicate id

  void add(Article article);  // throws DataError on duplicate id

  std::size_t size() const { return articles_.size(); }
  bool empty() const { return articles_.empty(); }
  std::span<const Article> articles() const { return articles_; }
  const Article& operator[](std::size_t i) const { return articles_[i]; }
  auto begin() const { return articles_.begin(); }
  auto end() const { return articles_.end(); }

  bool contains(std::string_view id) const;
  std::optional<std::size_t> index_of(std::string_view id) const;
  const Article& at(std::string_view id) const;  // throws DataError

  friend bool operator==(const Corpus& a, const Corpus& b) {
    return a.articles_ == b.articles_;
  }

 private:
  std::vector<Article> articles_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::string article_to_json(const Article& article);
Article article_from_json(std::string_view line);  // throws DataError

// JSONL persistence. Loading is all-or-nothing; errors carry the line number.
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

// Reads a text file of one entry per line, skipping blanks and '#' comments.
std::vector<std::string> read_list_file(const std::filesystem::path& path);

}  // namespace polpre
