#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "polpre/corpus.hpp"

namespace polpre {

enum class EntityType { Person, Norp, Org, Gpe, Event };

std::string_view to_string(EntityType type);
EntityType parse_entity_type(std::string_view text);  // throws DataError

inline constexpr std::size_t kMaxEntityTokens = 5;

struct EntitySpan {
  std::string article_id;
  std::size_t start = 0;  // token index, inclusive
  std::size_t end = 0;    // exclusive
  EntityType etype = EntityType::Person;
  std::string surface;

  std::size_t length() const { return end - start; }
  friend bool operator==(const EntitySpan&, const EntitySpan&) = default;
};

struct SentimentLexicon {
  std::unordered_set<std::string> entries;  // lowercase
  std::string source_tag;
};

SentimentLexicon load_lexicon(const std::filesystem::path& path);

// Lowercase multi-word surface form -> type. File lines: "TYPE<TAB>surface".
using Gazetteer = std::unordered_map<std::string, EntityType>;
Gazetteer load_gazetteer(const std::filesystem::path& path);

struct ArticleAnnotations {
  std::vector<EntitySpan> entities;  // sorted by start, non-overlapping
  std::set<std::size_t> sentiment_positions;
};

class AnnotationSet {
 public:
  // Empty when the article has no annotations.
  const ArticleAnnotations& for_article(std::string_view id) const;
  ArticleAnnotations& mutable_for_article(const std::string& id) { return by_article_[id]; }

  std::size_t entity_count() const;
  const std::map<std::string, ArticleAnnotations>& all() const { return by_article_; }

 private:
  std::map<std::string, ArticleAnnotations> by_article_;
};

// Keeps the longer span on overlap, then the earlier one. Result sorted by
// start.
std::vector<EntitySpan> resolve_overlaps(std::vector<EntitySpan> spans);

struct IngestStats {
  std::size_t lines = 0;
  std::size_t too_long = 0;     // spans over kMaxEntityTokens
  std::size_t overlapping = 0;  // dropped by overlap resolution
  std::size_t kept = 0;
};

// Sidecar JSONL: {"article_id","start","end","etype","surface"}. Unknown ids
// and out-of-range spans are errors; spans longer than five tokens are
// filtered.
AnnotationSet ingest_annotations(const std::filesystem::path& path,
                                 const Corpus& corpus, IngestStats* stats = nullptr);
AnnotationSet ingest_annotation_lines(const std::vector<std::string>& lines,
                                      const Corpus& corpus, IngestStats* stats = nullptr);

std::string entity_to_json(const EntitySpan& span);

// Capitalized-run tagger with gazetteer lookup. Runs longer than five tokens
// are discarded; a lone capitalized word opening a sentence is not an entity.
std::vector<EntitySpan> heuristic_tag_entities(const Article& article,
                                               const Gazetteer& gazetteer = {});

std::set<std::size_t> tag_sentiment(const Article& article,
                                    const SentimentLexicon& lexicon);

// Sentiment sidecar JSONL: {"article_id","positions":[...]}.
std::string sentiment_to_json(const std::string& article_id,
                              const std::set<std::size_t>& positions);

void save_annotations(const AnnotationSet& set, const std::filesystem::path& entities_path,
                      const std::filesystem::path& sentiment_path);
// Loads both sidecars; a missing sentiment path leaves positions empty.
AnnotationSet load_annotations(const std::filesystem::path& entities_path,
                               const std::filesystem::path& sentiment_path,
                               const Corpus& corpus);

}  // namespace polpre
