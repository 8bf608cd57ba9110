#include "polpre/triplets.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"
#include "polpre/random.hpp"

namespace polpre {

std::string_view to_string(TripletKind kind) {
  return kind == TripletKind::Ideology ? "ideology" : "story";
}

TripletKind parse_triplet_kind(std::string_view text) {
  if (text == "ideology") return TripletKind::Ideology;
  if (text == "story") return TripletKind::Story;
  throw DataError("unknown triplet kind '" + std::string(text) + "'");
}

std::optional<Ideology> opposite(Ideology ideology) {
  switch (ideology) {
    case Ideology::Left: return Ideology::Right;
    case Ideology::Right: return Ideology::Left;
    case Ideology::Center: return std::nullopt;
  }
  return std::nullopt;
}

bool is_valid_ideology_triplet(const Triplet& t, const StoryCluster& cluster,
                               const Corpus& corpus) {
  if (t.kind != TripletKind::Ideology) return false;
  if (t.anchor == t.positive || t.anchor == t.negative || t.positive == t.negative) return false;
  auto in_cluster = [&](const std::string& id) {
    return std::find(cluster.member_ids.begin(), cluster.member_ids.end(), id) !=
           cluster.member_ids.end();
  };
  if (!in_cluster(t.anchor) || !in_cluster(t.positive) || !in_cluster(t.negative)) return false;
  const Ideology a = corpus.at(t.anchor).ideology;
  const auto opp = opposite(a);
  return opp && corpus.at(t.positive).ideology == a && corpus.at(t.negative).ideology == *opp;
}

std::vector<Triplet> build_ideology_triplets(const StoryCluster& cluster,
                                             const Corpus& corpus) {
  std::vector<Triplet> out;
  const auto& ids = cluster.member_ids;
  for (const auto& a : ids) {
    const Ideology ia = corpus.at(a).ideology;
    const auto opp = opposite(ia);
    if (!opp) continue;
    for (const auto& p : ids) {
      if (p == a || corpus.at(p).ideology != ia) continue;
      for (const auto& n : ids) {
        if (corpus.at(n).ideology == *opp) out.push_back({TripletKind::Ideology, a, p, n});
      }
    }
  }
  return out;
}

NegativePool build_negative_pool(const std::vector<StoryCluster>& clusters,
                                 const Corpus& corpus) {
  std::map<std::string, std::set<std::string>> sets;
  for (const auto& c : clusters) {
    for (const auto& id : c.member_ids) sets[corpus.at(id).outlet].insert(id);
  }
  NegativePool pool;
  for (auto& [outlet, ids] : sets) pool[outlet].assign(ids.begin(), ids.end());
  return pool;
}

std::vector<Triplet> build_story_triplets(const StoryCluster& cluster,
                                          const Corpus& corpus, const NegativePool& pool,
                                          std::uint64_t seed, std::size_t negatives_per_pair,
                                          StoryTripletStats* stats) {
  std::set<std::pair<std::string, std::string>> pairs;
  std::vector<std::pair<std::string, std::string>> ordered;
  for (const auto& t : build_ideology_triplets(cluster, corpus)) {
    if (pairs.emplace(t.anchor, t.positive).second) ordered.emplace_back(t.anchor, t.positive);
  }
  const std::set<std::string> members(cluster.member_ids.begin(), cluster.member_ids.end());
  std::vector<Triplet> out;
  for (const auto& [a, p] : ordered) {
    const auto it = pool.find(corpus.at(a).outlet);
    std::vector<std::string> eligible;
    if (it != pool.end()) {
      for (const auto& id : it->second) {
        if (!members.count(id)) eligible.push_back(id);
      }
    }
    if (eligible.empty()) {
      if (stats) ++stats->skipped_pairs;
      continue;
    }
    Rng rng(derive_seed(derive_seed(seed, a), p));
    for (std::size_t k : rng.sample_without_replacement(eligible.size(), negatives_per_pair)) {
      out.push_back({TripletKind::Story, a, p, eligible[k]});
    }
  }
  return out;
}

std::vector<Triplet> build_triplets(const std::vector<StoryCluster>& clusters,
                                    const Corpus& corpus, const TripletOptions& options,
                                    StoryTripletStats* stats) {
  const NegativePool pool = options.story ? build_negative_pool(clusters, corpus) : NegativePool{};
  std::vector<Triplet> out;
  for (const auto& c : clusters) {
    const std::uint64_t cluster_seed = derive_seed(options.seed, c.anchor_id);
    if (options.ideology) {
      auto ideo = build_ideology_triplets(c, corpus);
      if (options.max_per_cluster && ideo.size() > options.max_per_cluster) {
        Rng rng(derive_seed(cluster_seed, "cap"));
        auto picks = rng.sample_without_replacement(ideo.size(), options.max_per_cluster);
        std::sort(picks.begin(), picks.end());
        std::vector<Triplet> kept;
        for (std::size_t k : picks) kept.push_back(ideo[k]);
        ideo = std::move(kept);
      }
      out.insert(out.end(), ideo.begin(), ideo.end());
    }
    if (options.story) {
      auto story = build_story_triplets(c, corpus, pool, cluster_seed,
                                        options.negatives_per_pair, stats);
      if (options.max_per_cluster && story.size() > options.max_per_cluster) {
        Rng rng(derive_seed(cluster_seed, "cap-story"));
        auto picks = rng.sample_without_replacement(story.size(), options.max_per_cluster);
        std::sort(picks.begin(), picks.end());
        std::vector<Triplet> kept;
        for (std::size_t k : picks) kept.push_back(story[k]);
        story = std::move(kept);
      }
      out.insert(out.end(), story.begin(), story.end());
    }
  }
  return out;
}

std::vector<std::vector<Triplet>> batch_triplets(const std::vector<Triplet>& triplets,
                                                 std::size_t batch_size, std::uint64_t seed,
                                                 std::optional<TripletKind> kind) {
  if (batch_size == 0) throw DataError("batch_size must be >= 1");
  std::vector<Triplet> shuffled = triplets;
  Rng rng(seed);
  rng.shuffle(shuffled);
  std::vector<std::vector<Triplet>> batches;
  for (std::size_t begin = 0; begin < shuffled.size(); begin += batch_size) {
    const std::size_t end = std::min(shuffled.size(), begin + batch_size);
    std::vector<Triplet> batch;
    for (std::size_t i = begin; i < end; ++i) {
      if (!kind || shuffled[i].kind == *kind) batch.push_back(shuffled[i]);
    }
    if (!batch.empty()) batches.push_back(std::move(batch));
  }
  return batches;
}

std::string triplet_to_json(const Triplet& t) {
  nlohmann::ordered_json j;
  j["kind"] = std::string(to_string(t.kind));
  j["anchor"] = t.anchor;
  j["positive"] = t.positive;
  j["negative"] = t.negative;
  return j.dump();
}

Triplet triplet_from_json(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line.begin(), line.end());
    return {parse_triplet_kind(j.at("kind").get<std::string>()), j.at("anchor").get<std::string>(),
            j.at("positive").get<std::string>(), j.at("negative").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed triplet: ") + e.what());
  }
}

void save_triplets(const std::vector<Triplet>& triplets, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& t : triplets) out << triplet_to_json(t) << '\n';
}

std::vector<Triplet> load_triplets(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Triplet> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(triplet_from_json(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace polpre
