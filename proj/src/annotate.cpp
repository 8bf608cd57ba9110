#include "polpre/annotate.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

namespace polpre {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

bool is_capitalized(const std::string& tok) {
  if (tok.empty() || tok.front() < 'A' || tok.front() > 'Z') return false;
  return tok.front() != '[';
}

std::string join(const std::vector<std::string>& tokens, std::size_t begin,
                 std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

bool blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

}  // namespace

std::string_view to_string(EntityType type) {
  switch (type) {
    case EntityType::Person: return "PERSON";
    case EntityType::Norp: return "NORP";
    case EntityType::Org: return "ORG";
    case EntityType::Gpe: return "GPE";
    case EntityType::Event: return "EVENT";
  }
  return "?";
}

EntityType parse_entity_type(std::string_view text) {
  if (text == "PERSON") return EntityType::Person;
  if (text == "NORP") return EntityType::Norp;
  if (text == "ORG") return EntityType::Org;
  if (text == "GPE") return EntityType::Gpe;
  if (text == "EVENT") return EntityType::Event;
  throw DataError("unknown entity type '" + std::string(text) + "'");
}

SentimentLexicon load_lexicon(const std::filesystem::path& path) {
  SentimentLexicon lex;
  lex.source_tag = path.filename().string();
  for (const auto& w : read_list_file(path)) lex.entries.insert(lower(w));
  return lex;
}

Gazetteer load_gazetteer(const std::filesystem::path& path) {
  Gazetteer g;
  for (const auto& line : read_list_file(path)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(path.string() + ": expected 'TYPE<TAB>surface', got '" + line + "'");
    }
    const auto words = tokenize(line.substr(tab + 1), corpus_tokenizer());
    if (words.empty()) continue;
    g[join(words, 0, words.size())] = parse_entity_type(line.substr(0, tab));
  }
  return g;
}

const ArticleAnnotations& AnnotationSet::for_article(std::string_view id) const {
  static const ArticleAnnotations empty;
  const auto it = by_article_.find(std::string(id));
  return it == by_article_.end() ? empty : it->second;
}

std::size_t AnnotationSet::entity_count() const {
  std::size_t n = 0;
  for (const auto& [_, a] : by_article_) n += a.entities.size();
  return n;
}

std::vector<EntitySpan> resolve_overlaps(std::vector<EntitySpan> spans) {
  std::stable_sort(spans.begin(), spans.end(), [](const EntitySpan& a, const EntitySpan& b) {
    if (a.length() != b.length()) return a.length() > b.length();
    return a.start < b.start;
  });
  std::vector<EntitySpan> kept;
  for (auto& s : spans) {
    const bool clash = std::any_of(kept.begin(), kept.end(), [&](const EntitySpan& k) {
      return s.start < k.end && k.start < s.end;
    });
    if (!clash) kept.push_back(std::move(s));
  }
  std::sort(kept.begin(), kept.end(),
            [](const EntitySpan& a, const EntitySpan& b) { return a.start < b.start; });
  return kept;
}

AnnotationSet ingest_annotation_lines(const std::vector<std::string>& lines,
                                      const Corpus& corpus, IngestStats* stats) {
  IngestStats local;
  std::map<std::string, std::vector<EntitySpan>> pending;
  std::size_t line_no = 0;
  for (const auto& line : lines) {
    ++line_no;
    if (blank(line)) continue;
    ++local.lines;
    EntitySpan span;
    try {
      const auto j = nlohmann::json::parse(line);
      span.article_id = j.at("article_id").get<std::string>();
      const auto start = j.at("start").get<long long>();
      const auto end = j.at("end").get<long long>();
      span.etype = parse_entity_type(j.at("etype").get<std::string>());
      span.surface = j.value("surface", std::string());
      const auto idx = corpus.index_of(span.article_id);
      if (!idx) {
        throw DataError("unknown article id " + span.article_id);
      }
      const auto n = static_cast<long long>(corpus[*idx].tokens.size());
      if (start < 0 || start >= end || end > n) {
        throw DataError("span out of bounds: " + line + " (article has " +
                        std::to_string(n) + " tokens)");
      }
      span.start = static_cast<std::size_t>(start);
      span.end = static_cast<std::size_t>(end);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("annotation line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("annotation line " + std::to_string(line_no) + ": " + e.what());
    }
    if (span.length() > kMaxEntityTokens) {
      ++local.too_long;
      continue;
    }
    pending[span.article_id].push_back(std::move(span));
  }
  AnnotationSet set;
  for (auto& [id, spans] : pending) {
    const std::size_t before = spans.size();
    auto resolved = resolve_overlaps(std::move(spans));
    local.overlapping += before - resolved.size();
    local.kept += resolved.size();
    set.mutable_for_article(id).entities = std::move(resolved);
  }
  if (stats) *stats = local;
  return set;
}

AnnotationSet ingest_annotations(const std::filesystem::path& path,
                                 const Corpus& corpus, IngestStats* stats) {
  return ingest_annotation_lines(read_lines(path), corpus, stats);
}

std::string entity_to_json(const EntitySpan& span) {
  nlohmann::ordered_json j;
  j["article_id"] = span.article_id;
  j["start"] = span.start;
  j["end"] = span.end;
  j["etype"] = std::string(to_string(span.etype));
  j["surface"] = span.surface;
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

std::vector<EntitySpan> heuristic_tag_entities(const Article& article,
                                               const Gazetteer& gazetteer) {
  const auto cased = tokenize(article.full_text(), cased_tokenizer());
  const auto segments = sentence_segments(article);
  const auto& lowered = article.tokens;
  const auto& stop = english_stopwords();
  std::vector<EntitySpan> spans;

  auto make = [&](std::size_t b, std::size_t e, EntityType t) {
    EntitySpan s;
    s.article_id = article.id;
    s.start = b;
    s.end = e;
    s.etype = t;
    s.surface = join(cased, b, e);
    return s;
  };

  std::size_t max_gazetteer_len = 0;
  for (const auto& [surface, _] : gazetteer) {
    max_gazetteer_len = std::max<std::size_t>(
        max_gazetteer_len, 1 + std::count(surface.begin(), surface.end(), ' '));
  }
  max_gazetteer_len = std::min(max_gazetteer_len, kMaxEntityTokens);

  for (const auto& seg : segments) {
    // Capitalized runs.
    std::size_t i = seg.begin;
    while (i < seg.end) {
      if (!is_capitalized(cased[i])) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < seg.end && is_capitalized(cased[j])) ++j;
      std::size_t b = i;
      if (b == seg.begin && stop.count(lowered[b])) ++b;
      const std::size_t len = j - b;
      if (len > 0 && len <= kMaxEntityTokens) {
        const auto g = gazetteer.find(join(lowered, b, j));
        const bool lone_initial = b == seg.begin && len == 1;
        if (g != gazetteer.end()) {
          spans.push_back(make(b, j, g->second));
        } else if (!lone_initial) {
          spans.push_back(make(b, j, EntityType::Person));
        }
      }
      i = j;
    }
    // Gazetteer hits, longest first.
    for (std::size_t k = seg.begin; k < seg.end && max_gazetteer_len > 0;) {
      std::size_t matched = 0;
      for (std::size_t len = std::min(max_gazetteer_len, seg.end - k); len > 0; --len) {
        const auto g = gazetteer.find(join(lowered, k, k + len));
        if (g != gazetteer.end()) {
          spans.push_back(make(k, k + len, g->second));
          matched = len;
          break;
        }
      }
      k += matched ? matched : 1;
    }
  }
  return resolve_overlaps(std::move(spans));
}

std::set<std::size_t> tag_sentiment(const Article& article,
                                    const SentimentLexicon& lexicon) {
  std::set<std::size_t> positions;
  if (lexicon.entries.empty()) return positions;
  for (std::size_t i = 0; i < article.tokens.size(); ++i) {
    if (lexicon.entries.count(lower(article.tokens[i]))) positions.insert(i);
  }
  return positions;
}

std::string sentiment_to_json(const std::string& article_id,
                              const std::set<std::size_t>& positions) {
  nlohmann::ordered_json j;
  j["article_id"] = article_id;
  j["positions"] = std::vector<std::size_t>(positions.begin(), positions.end());
  return j.dump();
}

void save_annotations(const AnnotationSet& set, const std::filesystem::path& entities_path,
                      const std::filesystem::path& sentiment_path) {
  std::ofstream ent(entities_path, std::ios::binary | std::ios::trunc);
  std::ofstream sen(sentiment_path, std::ios::binary | std::ios::trunc);
  if (!ent) throw DataError("cannot write " + entities_path.string());
  if (!sen) throw DataError("cannot write " + sentiment_path.string());
  for (const auto& [id, a] : set.all()) {
    for (const auto& s : a.entities) ent << entity_to_json(s) << '\n';
    if (!a.sentiment_positions.empty()) sen << sentiment_to_json(id, a.sentiment_positions) << '\n';
  }
}

AnnotationSet load_annotations(const std::filesystem::path& entities_path,
                               const std::filesystem::path& sentiment_path,
                               const Corpus& corpus) {
  AnnotationSet set = ingest_annotations(entities_path, corpus);
  if (sentiment_path.empty() || !std::filesystem::exists(sentiment_path)) return set;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(sentiment_path)) {
    ++line_no;
    if (blank(line)) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto id = j.at("article_id").get<std::string>();
      const auto idx = corpus.index_of(id);
      if (!idx) throw DataError("unknown article id " + id);
      auto& positions = set.mutable_for_article(id).sentiment_positions;
      for (auto p : j.at("positions").get<std::vector<std::size_t>>()) {
        if (p >= corpus[*idx].tokens.size()) throw DataError("sentiment position out of bounds");
        positions.insert(p);
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("sentiment line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("sentiment line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return set;
}

}  // namespace polpre
