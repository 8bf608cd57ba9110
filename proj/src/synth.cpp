#include "polpre/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "polpre/cleaning.hpp"
#include "polpre/random.hpp"

namespace polpre {

namespace {

constexpr const char* kConsonants = "bdfgklmnprstvz";
constexpr const char* kVowels = "aeiou";

class WordFactory {
 public:
  explicit WordFactory(Rng& rng) : rng_(rng) {
    for (const auto& k : default_filter_patterns().us_text_keywords) banned_.push_back(k);
    for (const char* w : {"video", "gallery", "world", "asia", "politic", "sport"}) {
      banned_.emplace_back(w);
    }
  }

  // Fresh lowercase pseudo-word, unique across the factory.
  std::string fresh(std::size_t min_syllables = 2, std::size_t max_syllables = 4) {
    for (;;) {
      const std::size_t n =
          min_syllables + rng_.uniform_index(max_syllables - min_syllables + 1);
      std::string w;
      for (std::size_t i = 0; i < n; ++i) {
        w += kConsonants[rng_.uniform_index(14)];
        w += kVowels[rng_.uniform_index(5)];
      }
      if (english_stopwords().count(w)) continue;
      if (std::any_of(banned_.begin(), banned_.end(),
                      [&](const std::string& b) { return w.find(b) != std::string::npos; })) {
        continue;
      }
      if (used_.insert(w).second) return w;
    }
  }

  std::vector<std::string> fresh_list(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(fresh());
    return out;
  }

 private:
  Rng& rng_;
  std::set<std::string> used_;
  std::vector<std::string> banned_;
};

std::string capitalize(std::string w) {
  if (!w.empty() && w[0] >= 'a' && w[0] <= 'z') w[0] = static_cast<char>(w[0] - 'a' + 'A');
  return w;
}

struct EntityName {
  std::vector<std::string> words;  // capitalized
  EntityType type = EntityType::Person;
};

struct Story {
  std::vector<std::string> content;
  std::vector<std::size_t> entities;  // indices into the entity table
  int day = 0;
};

// One sentence under construction: cased words plus the entity occupying a
// word range, if any.
struct Sentence {
  std::vector<std::string> words;
  std::vector<char> fixed;  // entity words and the initial word are never overwritten
  struct Mention {
    std::size_t start;
    std::size_t entity;
  };
  std::vector<Mention> mentions;
};

}  // namespace

SynthResult synthesize(const SynthParams& params) {
  if (params.outlets.empty()) throw DataError("synth needs at least one outlet");
  if (params.words_per_sentence < 5) throw DataError("synth needs >= 5 words per sentence");
  Rng rng(params.seed);
  WordFactory words(rng);

  const auto general = words.fresh_list(params.general_vocab);
  const auto left_markers = words.fresh_list(params.marker_vocab);
  const auto right_markers = words.fresh_list(params.marker_vocab);
  const auto sentiment = words.fresh_list(params.sentiment_vocab);
  const auto sports = words.fresh_list(200);

  std::vector<EntityName> entity_table;
  auto new_entity = [&] {
    EntityName e;
    const std::size_t n = 1 + rng.uniform_index(2);
    for (std::size_t i = 0; i < n; ++i) e.words.push_back(capitalize(words.fresh(2, 3)));
    const EntityType types[] = {EntityType::Person, EntityType::Org, EntityType::Gpe,
                                EntityType::Norp, EntityType::Event};
    e.type = n == 2 ? EntityType::Person : types[rng.uniform_index(5)];
    entity_table.push_back(std::move(e));
    return entity_table.size() - 1;
  };
  std::vector<std::size_t> recurring;
  for (std::size_t i = 0; i < params.recurring_entities; ++i) recurring.push_back(new_entity());

  const std::size_t total_stories = params.n_stories + params.distractors;
  std::vector<Story> stories(total_stories);
  for (auto& s : stories) {
    s.content = words.fresh_list(params.story_words);
    for (std::size_t i = 0; i < params.entities_per_story; ++i) s.entities.push_back(new_entity());
    // Shared names are a confusion source like noise; a noiseless corpus has none.
    if (params.noise > 0.0 && !recurring.empty() && rng.bernoulli(0.5)) {
      s.entities.push_back(recurring[rng.uniform_index(recurring.size())]);
    }
    s.day = static_cast<int>(rng.uniform_index(std::max<std::size_t>(1, params.day_span)));
  }

  auto other_story = [&](std::size_t s) {
    if (total_stories < 2) return s;
    std::size_t o = rng.uniform_index(total_stories - 1);
    return o >= s ? o + 1 : o;
  };
  auto story_word = [&](std::size_t s) {
    const std::size_t src = rng.bernoulli(params.noise) ? other_story(s) : s;
    const auto& c = stories[src].content;
    return c[rng.uniform_index(c.size())];
  };
  auto story_entity = [&](std::size_t s) {
    const std::size_t src = rng.bernoulli(params.noise) ? other_story(s) : s;
    const auto& e = stories[src].entities;
    return e[rng.uniform_index(e.size())];
  };
  auto general_word = [&] { return general[rng.uniform_index(general.size())]; };

  const Date epoch{std::chrono::year{2020}, std::chrono::January, std::chrono::day{1}};
  SynthResult result;
  std::vector<Article> articles;
  std::vector<std::vector<EntitySpan>> spans;

  auto build_sentence = [&](std::size_t s, bool force_entity, Ideology ideology) {
    Sentence sent;
    const std::size_t n = params.words_per_sentence;
    sent.words.push_back(capitalize(general_word()));
    sent.fixed.push_back(1);
    for (std::size_t i = 1; i < n; ++i) {
      const double u = rng.uniform01();
      if (u < params.content_rate) {
        sent.words.push_back(story_word(s));
      } else if (u < params.content_rate + params.sentiment_rate) {
        sent.words.push_back(sentiment[rng.uniform_index(sentiment.size())]);
      } else {
        sent.words.push_back(general_word());
      }
      sent.fixed.push_back(0);
    }
    (void)ideology;
    if (force_entity || rng.bernoulli(0.6)) {
      const std::size_t e = story_entity(s);
      const std::size_t at = 2 + rng.uniform_index(n - 3);  // lowercase word on both sides
      const auto& ew = entity_table[e].words;
      sent.words.insert(sent.words.begin() + static_cast<std::ptrdiff_t>(at), ew.begin(), ew.end());
      sent.fixed.insert(sent.fixed.begin() + static_cast<std::ptrdiff_t>(at), ew.size(), 1);
      sent.mentions.push_back({at, e});
    }
    return sent;
  };

  auto make_article = [&](std::size_t s, const OutletSpec& outlet, std::string id, int day) {
    Article a;
    a.id = std::move(id);
    a.outlet = outlet.name;
    a.ideology = outlet.ideology;
    a.published = std::chrono::year_month_day{std::chrono::sys_days{epoch} + std::chrono::days{day}};
    a.url = "https://" + outlet.name + ".example/politics/" + a.id;

    // Title: capitalized filler, filler, main entity, story words.
    const std::size_t main_entity = story_entity(s);
    std::vector<std::string> title{capitalize(general_word()), general_word()};
    const std::size_t title_entity_at = title.size();
    for (const auto& w : entity_table[main_entity].words) title.push_back(w);
    title.push_back(story_word(s));
    title.push_back(story_word(s));

    std::vector<std::vector<Sentence>> paragraphs(params.paragraphs);
    for (std::size_t p = 0; p < params.paragraphs; ++p) {
      for (std::size_t k = 0; k < params.sentences_per_paragraph; ++k) {
        paragraphs[p].push_back(build_sentence(s, p == 0 && k == 0, outlet.ideology));
      }
    }

    // Ideology markers replace exactly round(rate * body) filler slots.
    if (outlet.ideology != Ideology::Center) {
      const auto& markers = outlet.ideology == Ideology::Left ? left_markers : right_markers;
      std::vector<std::pair<Sentence*, std::size_t>> free_slots;
      std::size_t body = 0;
      for (auto& para : paragraphs) {
        for (auto& sent : para) {
          body += sent.words.size();
          for (std::size_t i = 0; i < sent.words.size(); ++i) {
            if (!sent.fixed[i]) free_slots.emplace_back(&sent, i);
          }
        }
      }
      std::size_t k = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(params.marker_rate * static_cast<double>(body))));
      for (std::size_t pick : rng.sample_without_replacement(free_slots.size(), k)) {
        auto [sent, i] = free_slots[pick];
        sent->words[i] = markers[rng.uniform_index(markers.size())];
        sent->fixed[i] = 1;
      }
    }

    std::vector<EntitySpan> planted;
    auto plant = [&](std::size_t start, std::size_t entity) {
      EntitySpan span;
      span.article_id = a.id;
      span.start = start;
      span.end = start + entity_table[entity].words.size();
      span.etype = entity_table[entity].type;
      for (const auto& w : entity_table[entity].words) {
        if (!span.surface.empty()) span.surface += ' ';
        span.surface += w;
      }
      planted.push_back(std::move(span));
    };

    std::size_t pos = 0;
    for (std::size_t i = 0; i < title.size(); ++i) {
      if (!a.title.empty()) a.title += ' ';
      a.title += title[i];
    }
    plant(title_entity_at, main_entity);
    pos += title.size();
    for (const auto& para : paragraphs) {
      std::string text;
      for (const auto& sent : para) {
        for (const auto& m : sent.mentions) plant(pos + m.start, m.entity);
        for (std::size_t i = 0; i < sent.words.size(); ++i) {
          if (!text.empty()) text += ' ';
          text += sent.words[i];
        }
        text += '.';
        pos += sent.words.size();
      }
      a.paragraphs.push_back(std::move(text));
    }
    a.retokenize();
    articles.push_back(std::move(a));
    spans.push_back(std::move(planted));
  };

  std::size_t counter = 0;
  auto next_id = [&](const char* prefix) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%06zu", prefix, counter++);
    return std::string(buf);
  };

  for (std::size_t s = 0; s < params.n_stories; ++s) {
    GoldGroup group;
    group.story_id = "story" + std::to_string(s);
    for (const auto& outlet : params.outlets) {
      const int day = stories[s].day + static_cast<int>(rng.uniform_index(3)) - 1;
      const std::string id = next_id("a");
      make_article(s, outlet, id, day);
      group.article_ids.push_back(id);
    }
    result.gold.push_back(std::move(group));
  }
  for (std::size_t d = 0; d < params.distractors; ++d) {
    const std::size_t s = params.n_stories + d;
    const auto& outlet = params.outlets[rng.uniform_index(params.outlets.size())];
    make_article(s, outlet, next_id("d"), stories[s].day);
  }

  const std::size_t originals = articles.size();
  for (std::size_t k = 0; k < params.near_duplicates && originals > 0; ++k) {
    Article copy = articles[rng.uniform_index(originals)];
    const std::vector<EntitySpan> copy_spans = spans[static_cast<std::size_t>(
        std::find_if(articles.begin(), articles.end(),
                     [&](const Article& a) { return a.id == copy.id; }) - articles.begin())];
    const std::string original_id = copy.id;
    copy.id = original_id + "-dup" + std::to_string(k);
    // One filler word swapped in the last paragraph keeps the edit tiny.
    auto& last = copy.paragraphs.back();
    for (auto space = last.find(' ', last.size() / 2); space != std::string::npos;
         space = last.find(' ', space + 1)) {
      const auto next = last.find(' ', space + 1);
      if (next == std::string::npos) break;
      const std::string_view word(last.data() + space + 1, next - space - 1);
      if (std::all_of(word.begin(), word.end(), [](char c) { return c >= 'a' && c <= 'z'; })) {
        last.replace(space + 1, word.size(), general_word());
        break;
      }
    }
    copy.published = std::chrono::year_month_day{std::chrono::sys_days{copy.published} +
                                                 std::chrono::days{1 + static_cast<int>(rng.uniform_index(2))}};
    copy.retokenize();
    std::vector<EntitySpan> moved = copy_spans;
    for (auto& sp : moved) sp.article_id = copy.id;
    result.near_duplicate_pairs.emplace_back(original_id, copy.id);
    articles.push_back(std::move(copy));
    spans.push_back(std::move(moved));
  }

  for (std::size_t k = 0; k < params.junk_pages; ++k) {
    const auto& outlet = params.outlets[rng.uniform_index(params.outlets.size())];
    Article a;
    a.id = next_id("j");
    a.outlet = outlet.name;
    a.ideology = outlet.ideology;
    a.published = std::chrono::year_month_day{
        std::chrono::sys_days{epoch} +
        std::chrono::days{static_cast<int>(rng.uniform_index(std::max<std::size_t>(1, params.day_span)))}};
    const std::size_t kind = k % 3;
    const char* section = kind == 0 ? "video" : kind == 1 ? "world/asia" : "sports";
    a.url = "https://" + outlet.name + ".example/" + section + "/" + a.id;
    const auto& pool = kind == 2 ? sports : general;
    a.title = capitalize(pool[rng.uniform_index(pool.size())]) + " " +
              pool[rng.uniform_index(pool.size())];
    for (std::size_t p = 0; p < params.paragraphs; ++p) {
      std::string text;
      for (std::size_t w = 0; w < params.words_per_sentence * params.sentences_per_paragraph; ++w) {
        if (!text.empty()) text += ' ';
        text += pool[rng.uniform_index(pool.size())];
      }
      a.paragraphs.push_back(text + ".");
    }
    a.retokenize();
    articles.push_back(std::move(a));
    spans.emplace_back();
  }

  for (std::size_t i = 0; i < articles.size(); ++i) {
    if (!spans[i].empty()) {
      result.planted.mutable_for_article(articles[i].id).entities = resolve_overlaps(spans[i]);
    }
    result.corpus.add(std::move(articles[i]));
  }
  result.sentiment_words = sentiment;
  return result;
}

}  // namespace polpre
