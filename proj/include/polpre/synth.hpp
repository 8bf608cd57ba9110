#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "polpre/alignment.hpp"
#include "polpre/annotate.hpp"
#include "polpre/corpus.hpp"

namespace polpre {

struct OutletSpec {
  std::string name;
  Ideology ideology = Ideology::Center;
};

struct SynthParams {
  std::size_t n_stories = 50;
  std::vector<OutletSpec> outlets = {{"leftdaily", Ideology::Left},
                                     {"centerwire", Ideology::Center},
                                     {"rightpost", Ideology::Right},
                                     {"leftweekly", Ideology::Left},
                                     {"rightherald", Ideology::Right}};
  std::size_t distractors = 0;        // single-article stories
  std::size_t general_vocab = 1500;   // shared filler words
  std::size_t story_words = 12;       // content words per story
  std::size_t entities_per_story = 3;
  std::size_t recurring_entities = 20;  // names reused across stories
  std::size_t marker_vocab = 160;       // per-side ideology marker words
  double marker_rate = 0.08;            // share of body tokens, L and R only
  double content_rate = 0.35;           // share of body tokens from the story
  double sentiment_rate = 0.03;
  std::size_t sentiment_vocab = 40;
  double noise = 0.0;  // chance a story slot draws from another story
  std::size_t paragraphs = 4;
  std::size_t sentences_per_paragraph = 3;
  std::size_t words_per_sentence = 12;
  std::size_t day_span = 365;
  std::size_t near_duplicates = 0;  // lightly edited later copies, same outlet
  std::size_t junk_pages = 0;       // non-article or non-US pages
  std::uint64_t seed = 0;
};

struct SynthResult {
  Corpus corpus;
  std::vector<GoldGroup> gold;
  AnnotationSet planted;                 // entity spans of every inserted name
  std::vector<std::string> sentiment_words;
  std::vector<std::pair<std::string, std::string>> near_duplicate_pairs;  // (original, copy)
};

SynthResult synthesize(const SynthParams& params);

}  // namespace polpre
