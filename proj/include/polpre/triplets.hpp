#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "polpre/alignment.hpp"
#include "polpre/corpus.hpp"

namespace polpre {

enum class TripletKind { Ideology, Story };

std::string_view to_string(TripletKind kind);  // "ideology" / "story"
TripletKind parse_triplet_kind(std::string_view text);

struct Triplet {
  TripletKind kind = TripletKind::Ideology;
  std::string anchor;
  std::string positive;
  std::string negative;

  friend bool operator==(const Triplet&, const Triplet&) = default;
  friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

std::optional<Ideology> opposite(Ideology ideology);  // nullopt for Center

// Type invariant of an ideology triplet relative to `cluster`.
bool is_valid_ideology_triplet(const Triplet& t, const StoryCluster& cluster,
                               const Corpus& corpus);

// Anchors and positives share Left or Right ideology; negatives hold the
// opposite one. Center members never take part.
std::vector<Triplet> build_ideology_triplets(const StoryCluster& cluster,
                                             const Corpus& corpus);

// outlet -> article ids eligible as story negatives, sorted.
using NegativePool = std::map<std::string, std::vector<std::string>>;

// Every article that appears in some cluster, grouped by outlet.
NegativePool build_negative_pool(const std::vector<StoryCluster>& clusters,
                                 const Corpus& corpus);

struct StoryTripletStats {
  std::size_t skipped_pairs = 0;  // anchor outlet had no eligible negative
};

// Reuses the ideology (anchor, positive) pairs and draws `negatives_per_pair`
// negatives from the anchor's outlet outside the cluster.
std::vector<Triplet> build_story_triplets(const StoryCluster& cluster,
                                          const Corpus& corpus,
                                          const NegativePool& pool, std::uint64_t seed,
                                          std::size_t negatives_per_pair = 1,
                                          StoryTripletStats* stats = nullptr);

struct TripletOptions {
  bool ideology = true;
  bool story = true;
  std::size_t negatives_per_pair = 1;
  std::size_t max_per_cluster = 0;  // 0 = unlimited
  std::uint64_t seed = 0;
};

std::vector<Triplet> build_triplets(const std::vector<StoryCluster>& clusters,
                                    const Corpus& corpus, const TripletOptions& options,
                                    StoryTripletStats* stats = nullptr);

// Shuffles under `seed` and groups into batches of `batch_size`. With a kind
// filter, only triplets of that kind stay in each batch and batches left
// empty are skipped.
std::vector<std::vector<Triplet>> batch_triplets(const std::vector<Triplet>& triplets,
                                                 std::size_t batch_size, std::uint64_t seed,
                                                 std::optional<TripletKind> kind = std::nullopt);

std::string triplet_to_json(const Triplet& t);
Triplet triplet_from_json(std::string_view line);
void save_triplets(const std::vector<Triplet>& triplets, const std::filesystem::path& path);
std::vector<Triplet> load_triplets(const std::filesystem::path& path);

}  // namespace polpre
