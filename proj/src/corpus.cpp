#include "polpre/corpus.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace polpre {

namespace {

using ordered_json = nlohmann::ordered_json;

// Decodes one UTF-8 code point starting at `pos`; returns its byte length.
// Invalid sequences decode as a single byte.
std::size_t decode_at(std::string_view s, std::size_t pos, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  std::size_t len = 1;
  if (b0 < 0x80) {
    cp = b0;
    return 1;
  }
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    cp = b0;
    return 1;
  }
  if (pos + len > s.size()) {
    cp = b0;
    return 1;
  }
  for (std::size_t i = 1; i < len; ++i) {
    const auto b = static_cast<unsigned char>(s[pos + i]);
    if ((b & 0xC0) != 0x80) {
      cp = b0;
      return 1;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  return len;
}

// Byte length of the code point that ends at `end`.
std::size_t last_cp_length(std::string_view s, std::size_t end) {
  std::size_t start = end - 1;
  while (start > 0 && end - start < 4 &&
         (static_cast<unsigned char>(s[start]) & 0xC0) == 0x80) {
    --start;
  }
  char32_t cp;
  const std::size_t len = decode_at(s, start, cp);
  return start + len == end ? len : 1;
}

bool is_space(char32_t cp) {
  switch (cp) {
    case U' ': case U'\t': case U'\n': case U'\r': case U'\f': case U'\v':
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

bool is_punct(char32_t cp) {
  if (cp < 0x80) return std::ispunct(static_cast<int>(cp)) != 0;
  return (cp >= 0x2010 && cp <= 0x2027) || (cp >= 0x2030 && cp <= 0x205E) ||
         cp == 0xA1 || cp == 0xAB || cp == 0xBB || cp == 0xBF ||
         cp == 0x3001 || cp == 0x3002;
}

bool is_special_token(std::string_view tok) {
  if (tok.size() < 3 || tok.front() != '[' || tok.back() != ']') return false;
  for (std::size_t i = 1; i + 1 < tok.size(); ++i) {
    if (tok[i] < 'A' || tok[i] > 'Z') return false;
  }
  return true;
}

std::string_view strip_punct(std::string_view tok) {
  while (!tok.empty()) {
    char32_t cp;
    const std::size_t len = decode_at(tok, 0, cp);
    if (!is_punct(cp)) break;
    tok.remove_prefix(len);
  }
  while (!tok.empty()) {
    const std::size_t len = last_cp_length(tok, tok.size());
    char32_t cp;
    decode_at(tok, tok.size() - len, cp);
    if (!is_punct(cp)) break;
    tok.remove_suffix(len);
  }
  return tok;
}

ordered_json parse_line(std::string_view line) {
  return ordered_json::parse(line.begin(), line.end());
}

}  // namespace

std::string_view to_string(Ideology ideology) {
  switch (ideology) {
    case Ideology::Left: return "L";
    case Ideology::Center: return "C";
    case Ideology::Right: return "R";
  }
  return "?";
}

Ideology parse_ideology(std::string_view text) {
  if (text == "L") return Ideology::Left;
  if (text == "C") return Ideology::Center;
  if (text == "R") return Ideology::Right;
  throw DataError("invalid ideology '" + std::string(text) + "'");
}

std::string format_date(Date date) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u",
                static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()),
                static_cast<unsigned>(date.day()));
  return buf;
}

Date parse_date(std::string_view text) {
  auto digits = [&](std::size_t from, std::size_t n) {
    int v = 0;
    for (std::size_t i = from; i < from + n; ++i) {
      if (text[i] < '0' || text[i] > '9') return -1;
      v = v * 10 + (text[i] - '0');
    }
    return v;
  };
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    throw DataError("invalid date '" + std::string(text) + "'");
  }
  const int y = digits(0, 4), m = digits(5, 2), d = digits(8, 2);
  const Date date{std::chrono::year{y}, std::chrono::month(m),
                  std::chrono::day(d)};
  if (y < 0 || m < 0 || d < 0 || !date.ok()) {
    throw DataError("invalid date '" + std::string(text) + "'");
  }
  return date;
}

int day_number(Date date) {
  return std::chrono::sys_days{date}.time_since_epoch().count();
}

std::vector<std::string> tokenize(std::string_view text,
                                  const TokenizerConfig& config) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  std::size_t start = std::string_view::npos;
  auto flush = [&](std::size_t end) {
    if (start == std::string_view::npos) return;
    std::string_view raw = text.substr(start, end - start);
    start = std::string_view::npos;
    if (is_special_token(raw)) {
      out.emplace_back(raw);
      return;
    }
    if (config.strip_punctuation) raw = strip_punct(raw);
    if (raw.empty()) return;
    std::string tok(raw);
    if (config.lowercase) {
      for (char& c : tok) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      }
    }
    if (!config.stopwords.empty() && config.stopwords.count(tok)) return;
    out.push_back(std::move(tok));
  };
  while (pos < text.size()) {
    char32_t cp;
    const std::size_t len = decode_at(text, pos, cp);
    if (is_space(cp)) {
      flush(pos);
    } else if (start == std::string_view::npos) {
      start = pos;
    }
    pos += len;
  }
  flush(text.size());
  return out;
}

const TokenizerConfig& corpus_tokenizer() {
  static const TokenizerConfig config{};
  return config;
}

const TokenizerConfig& cased_tokenizer() {
  static const TokenizerConfig config{false, true, {}};
  return config;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t begin = 0;
  auto emit = [&](std::size_t end) {
    std::string_view piece = text.substr(begin, end - begin);
    while (!piece.empty() && std::isspace(static_cast<unsigned char>(piece.front()))) piece.remove_prefix(1);
    while (!piece.empty() && std::isspace(static_cast<unsigned char>(piece.back()))) piece.remove_suffix(1);
    if (!piece.empty()) out.emplace_back(piece);
  };
  for (std::size_t i = 0; i + 1 < text.size(); ++i) {
    const char c = text[i];
    if ((c == '.' || c == '!' || c == '?') &&
        std::isspace(static_cast<unsigned char>(text[i + 1]))) {
      emit(i + 1);
      begin = i + 1;
    }
  }
  emit(text.size());
  return out;
}

const std::unordered_set<std::string>& english_stopwords() {
  static const std::unordered_set<std::string> words = {
      "a", "an", "the", "and", "or", "but", "if", "of", "in", "on", "at",
      "to", "for", "from", "by", "with", "as", "is", "are", "was", "were",
      "be", "been", "it", "its", "this", "that", "these", "those", "he",
      "she", "they", "we", "i", "you", "his", "her", "their", "our", "my",
      "not", "no", "so", "than", "then", "there", "here", "when", "while",
      "after", "before", "about", "into", "over", "under", "up", "down",
      "out", "has", "have", "had", "do", "does", "did", "will", "would",
      "can", "could", "should", "may", "might", "also", "just", "more",
      "most", "some", "such", "what", "which", "who", "whom", "how", "why",
      "all", "any", "each", "both", "mr", "mrs", "ms", "said", "says"};
  return words;
}

std::string Article::full_text() const {
  std::string text = title;
  for (const auto& p : paragraphs) {
    text += '\n';
    text += p;
  }
  return text;
}

void Article::retokenize() { tokens = tokenize(full_text(), corpus_tokenizer()); }

std::vector<Segment> sentence_segments(const Article& article) {
  std::vector<Segment> segments;
  std::size_t pos = 0;
  auto push = [&](std::string_view text) {
    const std::size_t n = tokenize(text, corpus_tokenizer()).size();
    segments.push_back({pos, pos + n});
    pos += n;
  };
  push(article.title);
  for (const auto& p : article.paragraphs) {
    for (const auto& s : split_sentences(p)) push(s);
  }
  return segments;
}

Corpus::Corpus(std::vector<Article> articles) {
  articles_.reserve(articles.size());
  for (auto& a : articles) add(std::move(a));
}

void Corpus::add(Article article) {
  if (index_.count(article.id)) {
    throw DataError("duplicate id " + article.id);
  }
  index_.emplace(article.id, articles_.size());
  articles_.push_back(std::move(article));
}

bool Corpus::contains(std::string_view id) const {
  return index_.count(std::string(id)) > 0;
}

std::optional<std::size_t> Corpus::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const Article& Corpus::at(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) throw DataError("unknown article id " + std::string(id));
  return articles_[it->second];
}

std::string article_to_json(const Article& article) {
  ordered_json j;
  j["id"] = article.id;
  j["outlet"] = article.outlet;
  j["ideology"] = std::string(to_string(article.ideology));
  j["published"] = format_date(article.published);
  j["url"] = article.url;
  j["title"] = article.title;
  j["paragraphs"] = article.paragraphs;
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

Article article_from_json(std::string_view line) {
  ordered_json j;
  try {
    j = parse_line(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("expected a JSON object");
  try {
    Article a;
    a.id = j.at("id").get<std::string>();
    a.outlet = j.at("outlet").get<std::string>();
    a.ideology = parse_ideology(j.at("ideology").get<std::string>());
    a.published = parse_date(j.at("published").get<std::string>());
    a.url = j.value("url", std::string());
    a.title = j.at("title").get<std::string>();
    a.paragraphs = j.at("paragraphs").get<std::vector<std::string>>();
    if (a.id.empty()) throw DataError("empty id");
    a.retokenize();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("schema error: ") + e.what());
  }
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Article a;
    try {
      a = article_from_json(line);
    } catch (const DataError& e) {
      throw DataError(path.string() + " line " + std::to_string(line_no) +
                      ": " + e.what());
    }
    if (corpus.contains(a.id)) {
      throw DataError("duplicate id " + a.id + " at line " +
                      std::to_string(line_no));
    }
    corpus.add(std::move(a));
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write corpus " + path.string());
  for (const auto& a : corpus) out << article_to_json(a) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<std::string> read_list_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t");
    out.push_back(line.substr(first, last - first + 1));
  }
  return out;
}

}  // namespace polpre
