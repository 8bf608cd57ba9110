#include "polpre/pipeline.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "polpre/alignment.hpp"
#include "polpre/annotate.hpp"
#include "polpre/cleaning.hpp"
#include "polpre/corpus.hpp"
#include "polpre/evaluation.hpp"
#include "polpre/masking.hpp"
#include "polpre/model.hpp"
#include "polpre/random.hpp"
#include "polpre/synth.hpp"
#include "polpre/triplets.hpp"

namespace polpre {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

fs::path manifest_path(const fs::path& output) {
  return fs::path(output.string() + ".manifest.json");
}

namespace {

// Provenance record for one stage. Names are file names only so manifests
// compare equal across working directories; thread counts and timings are
// kept out so they compare equal across machines too.
class Manifest {
 public:
  Manifest(std::string stage, ordered_json config)
      : stage_(std::move(stage)), config_(std::move(config)),
        started_(std::chrono::steady_clock::now()) {}

  void input(const fs::path& path) { inputs_.push_back(path); }
  void output(const fs::path& path) { outputs_.push_back(path); }

  void write(const fs::path& primary) const {
    ordered_json j;
    j["stage"] = stage_;
    j["config"] = config_;
    auto ins = ordered_json::array();
    for (const auto& p : inputs_) {
      ordered_json e;
      e["name"] = p.filename().string();
      e["sha256"] = sha256_file(p);
      const auto upstream = manifest_path(p);
      if (fs::exists(upstream)) e["manifest_sha256"] = sha256_file(upstream);
      ins.push_back(std::move(e));
    }
    auto outs = ordered_json::array();
    for (const auto& p : outputs_) {
      ordered_json e;
      e["name"] = p.filename().string();
      e["sha256"] = sha256_file(p);
      outs.push_back(std::move(e));
    }
    j["inputs"] = std::move(ins);
    j["outputs"] = std::move(outs);
    write_text(manifest_path(primary), j.dump(2) + "\n");

    ordered_json t;
    t["stage"] = stage_;
    t["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    write_text(fs::path(primary.string() + ".timings.json"), t.dump() + "\n");
  }

  static void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
  }

 private:
  std::string stage_;
  ordered_json config_;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
  std::chrono::steady_clock::time_point started_;
};

void require_file(const fs::path& path) {
  if (path.empty() || !fs::exists(path)) throw DataError("missing input file: " + path.string());
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

AnnotationSet load_stage_annotations(const fs::path& entities, const fs::path& sentiment,
                                     const Corpus& corpus) {
  if (entities.empty()) {
    AnnotationSet empty;
    return empty;
  }
  require_file(entities);
  if (!sentiment.empty()) require_file(sentiment);
  return load_annotations(entities, sentiment, corpus);
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

// --------------------------------------------------------------------------

struct SynthOptions {
  fs::path out_dir = "synth";
  std::size_t stories = 60;
  std::size_t outlets_per_side = 2;
  std::size_t distractors = 60;
  double noise = 0.1;
  std::size_t duplicates = 10;
  std::size_t junk = 30;
  double marker_rate = 0.08;
  std::size_t marker_vocab = 160;
  std::size_t general_vocab = 1500;
  double boilerplate_rate = 0.3;
  std::uint64_t seed = 0;
};

int run_synth(const SynthOptions& o, std::ostream& out) {
  SynthParams p;
  p.n_stories = o.stories;
  p.outlets.clear();
  for (std::size_t k = 0; k < o.outlets_per_side; ++k) {
    p.outlets.push_back({"left" + std::to_string(k), Ideology::Left});
    p.outlets.push_back({"center" + std::to_string(k), Ideology::Center});
    p.outlets.push_back({"right" + std::to_string(k), Ideology::Right});
  }
  p.distractors = o.distractors;
  p.noise = o.noise;
  p.near_duplicates = o.duplicates;
  p.junk_pages = o.junk;
  p.marker_rate = o.marker_rate;
  p.marker_vocab = o.marker_vocab;
  p.general_vocab = o.general_vocab;
  p.seed = derive_seed(o.seed, "synth");
  SynthResult r = synthesize(p);

  // Outlet boilerplate closing paragraphs exercise leak removal.
  Rng rng(derive_seed(o.seed, "synth-boilerplate"));
  Corpus corpus;
  for (const auto& a : r.corpus) {
    Article copy = a;
    if (rng.bernoulli(o.boilerplate_rate)) {
      copy.paragraphs.push_back("Follow " + a.outlet + " for more political coverage.");
      copy.retokenize();
    }
    corpus.add(std::move(copy));
  }

  fs::create_directories(o.out_dir / "patterns");
  const auto corpus_path = o.out_dir / "corpus.jsonl";
  save_corpus(corpus, corpus_path);
  std::vector<std::string> gold_lines, entity_lines;
  for (const auto& g : r.gold) gold_lines.push_back(gold_group_to_json(g));
  for (const auto& [_, ann] : r.planted.all()) {
    for (const auto& s : ann.entities) entity_lines.push_back(entity_to_json(s));
  }
  write_lines(o.out_dir / "gold.jsonl", gold_lines);
  write_lines(o.out_dir / "entities.jsonl", entity_lines);
  write_lines(o.out_dir / "lexicon.txt", r.sentiment_words);

  std::map<std::string, EntityType> gazetteer;
  for (const auto& [_, ann] : r.planted.all()) {
    for (const auto& s : ann.entities) gazetteer.emplace(s.surface, s.etype);
  }
  std::vector<std::string> gaz_lines;
  for (const auto& [surface, type] : gazetteer) {
    gaz_lines.push_back(std::string(to_string(type)) + "\t" + surface);
  }
  write_lines(o.out_dir / "gazetteer.txt", gaz_lines);

  const auto patterns = default_filter_patterns();
  write_lines(o.out_dir / "patterns" / "url.txt", patterns.url_patterns);
  write_lines(o.out_dir / "patterns" / "title.txt", patterns.title_patterns);
  write_lines(o.out_dir / "patterns" / "nonus_url.txt", patterns.nonus_url_keywords);
  write_lines(o.out_dir / "patterns" / "us_text.txt", patterns.us_text_keywords);
  std::vector<std::string> mentions;
  for (const auto& outlet : p.outlets) mentions.push_back(outlet.name + "\t" + outlet.name);
  write_lines(o.out_dir / "self_mentions.tsv", mentions);

  ordered_json config;
  config["stories"] = o.stories;
  config["outlets_per_side"] = o.outlets_per_side;
  config["distractors"] = o.distractors;
  config["noise"] = o.noise;
  config["duplicates"] = o.duplicates;
  config["junk"] = o.junk;
  config["marker_rate"] = o.marker_rate;
  config["marker_vocab"] = o.marker_vocab;
  config["general_vocab"] = o.general_vocab;
  config["boilerplate_rate"] = o.boilerplate_rate;
  config["seed"] = o.seed;
  Manifest m("synth", config);
  for (const char* name : {"corpus.jsonl", "gold.jsonl", "entities.jsonl", "lexicon.txt",
                           "gazetteer.txt", "self_mentions.tsv"}) {
    m.output(o.out_dir / name);
  }
  m.write(corpus_path);
  out << "synth: " << corpus.size() << " articles, " << r.gold.size() << " gold stories -> "
      << o.out_dir.string() << '\n';
  return kExitOk;
}

// --------------------------------------------------------------------------

struct CleanOptions {
  fs::path input;
  fs::path output;
  fs::path patterns_dir;
  double dedupe_threshold = 0.1;
  fs::path politics_model;
  bool train_politics = false;
  std::vector<double> self_train;
  fs::path self_mentions;
  std::size_t leak_min_count = 100;
  bool balance = false;
  std::uint64_t seed = 0;
};

const std::vector<std::string>& politics_url_keywords() {
  static const std::vector<std::string> k = {"/politics/", "/political/", "/policy/",
                                             "/election/", "/elections/", "/allpolitics/"};
  return k;
}

const std::vector<std::string>& nonpolitics_url_keywords() {
  static const std::vector<std::string> k = {
      "/travel/", "/sports/", "/life/", "/movie/", "/entertainment/", "/science/", "/music/",
      "/plated/", "/leisure/", "/showbiz/", "/lifestyle/", "/fashion/", "/art/", "/sport/"};
  return k;
}

int run_clean(const CleanOptions& o, int threads, std::ostream& out) {
  require_file(o.input);
  Corpus corpus = load_corpus(o.input);
  const std::size_t initial = corpus.size();
  ordered_json config;
  config["dedupe_threshold"] = o.dedupe_threshold;
  config["balance"] = o.balance;
  config["seed"] = o.seed;
  config["leak_min_count"] = o.leak_min_count;
  config["train_politics"] = o.train_politics;
  config["self_train"] = o.self_train;
  Manifest m("clean", config);
  m.input(o.input);

  FilterPatternSet patterns = default_filter_patterns();
  if (!o.patterns_dir.empty()) {
    if (!fs::is_directory(o.patterns_dir)) {
      throw DataError("missing patterns directory: " + o.patterns_dir.string());
    }
    patterns = load_filter_patterns(o.patterns_dir);
  }
  corpus = filter_non_articles(corpus, patterns);
  const std::size_t after_articles = corpus.size();
  corpus = dedupe(corpus, o.dedupe_threshold, DedupeScope::WithinOutlet, threads);
  const std::size_t after_dedupe = corpus.size();

  if (o.train_politics) {
    if (o.politics_model.empty()) throw DataError("--train-politics needs --politics-model FILE");
    std::vector<LabeledArticle> labeled;
    std::vector<const Article*> unlabeled;
    for (const auto& a : corpus) {
      std::string url = a.url;
      for (char& c : url) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      auto hit = [&](const std::vector<std::string>& keys) {
        return std::any_of(keys.begin(), keys.end(),
                           [&](const std::string& k) { return url.find(k) != std::string::npos; });
      };
      if (hit(politics_url_keywords())) {
        labeled.emplace_back(&a, true);
      } else if (hit(nonpolitics_url_keywords())) {
        labeled.emplace_back(&a, false);
      } else {
        unlabeled.push_back(&a);
      }
    }
    ClassifierOptions copts;
    const PoliticsClassifier model =
        o.self_train.size() == 2
            ? self_train_politics_classifier(labeled, unlabeled, o.self_train[0], o.self_train[1], copts)
            : train_politics_classifier(labeled, copts);
    ensure_parent(o.politics_model);
    Manifest::write_text(o.politics_model, classifier_to_json(model) + "\n");
    m.output(o.politics_model);
    corpus = filter_non_politics(corpus, model);
  } else if (!o.politics_model.empty()) {
    require_file(o.politics_model);
    std::ifstream in(o.politics_model);
    std::ostringstream buf;
    buf << in.rdbuf();
    corpus = filter_non_politics(corpus, classifier_from_json(buf.str()));
    m.input(o.politics_model);
  }
  const std::size_t after_politics = corpus.size();
  corpus = filter_non_us(corpus, patterns);
  const std::size_t after_us = corpus.size();

  LeakPatternTable leaks;
  if (!o.self_mentions.empty()) {
    require_file(o.self_mentions);
    leaks = load_self_mentions(o.self_mentions);
    m.input(o.self_mentions);
  }
  mine_frequent_sentences(corpus, leaks, o.leak_min_count);
  auto stripped = strip_media_leaks(corpus, leaks);
  corpus = std::move(stripped.corpus);
  if (o.balance) corpus = balance_by_ideology(corpus, derive_seed(o.seed, "clean-balance"));

  ensure_parent(o.output);
  save_corpus(corpus, o.output);
  m.output(o.output);
  m.write(o.output);
  out << "clean: " << initial << " -> " << after_articles << " (non-article) -> " << after_dedupe
      << " (dedupe) -> " << after_politics << " (politics) -> " << after_us << " (non-US) -> "
      << corpus.size() << " (leaks" << (o.balance ? ", balance" : "") << ")\n";
  return kExitOk;
}

// --------------------------------------------------------------------------

struct AnnotateOptions {
  fs::path corpus;
  fs::path sidecar;
  bool heuristic = false;
  fs::path gazetteer;
  fs::path lexicon;
  fs::path out_entities;
  fs::path out_sentiment;
};

int run_annotate(const AnnotateOptions& o, int threads, std::ostream& out) {
  require_file(o.corpus);
  if (o.sidecar.empty() == !o.heuristic) {
    throw CLI::ValidationError("annotate needs exactly one of --sidecar or --heuristic");
  }
  const Corpus corpus = load_corpus(o.corpus);
  ordered_json config;
  config["mode"] = o.heuristic ? "heuristic" : "sidecar";
  Manifest m("annotate", config);
  m.input(o.corpus);

  AnnotationSet set;
  if (!o.sidecar.empty()) {
    require_file(o.sidecar);
    IngestStats stats;
    set = ingest_annotations(o.sidecar, corpus, &stats);
    m.input(o.sidecar);
    out << "annotate: " << stats.kept << " spans kept (" << stats.too_long << " too long, "
        << stats.overlapping << " overlapping)\n";
  } else {
    Gazetteer gazetteer;
    if (!o.gazetteer.empty()) {
      require_file(o.gazetteer);
      gazetteer = load_gazetteer(o.gazetteer);
      m.input(o.gazetteer);
    }
    std::vector<std::vector<EntitySpan>> tagged(corpus.size());
    std::vector<std::thread> pool;
    const std::size_t workers = std::max(1, threads);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < corpus.size(); i += workers) {
          tagged[i] = heuristic_tag_entities(corpus[i], gazetteer);
        }
      });
    }
    for (auto& t : pool) t.join();
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (!tagged[i].empty()) set.mutable_for_article(corpus[i].id).entities = std::move(tagged[i]);
    }
    out << "annotate: " << set.entity_count() << " heuristic spans\n";
  }
  if (!o.lexicon.empty()) {
    require_file(o.lexicon);
    const auto lexicon = load_lexicon(o.lexicon);
    m.input(o.lexicon);
    for (const auto& a : corpus) {
      auto positions = tag_sentiment(a, lexicon);
      if (!positions.empty()) set.mutable_for_article(a.id).sentiment_positions = std::move(positions);
    }
  }
  ensure_parent(o.out_entities);
  ensure_parent(o.out_sentiment);
  save_annotations(set, o.out_entities, o.out_sentiment);
  m.output(o.out_entities);
  m.output(o.out_sentiment);
  m.write(o.out_entities);
  return kExitOk;
}

// --------------------------------------------------------------------------

struct AlignOptions {
  fs::path corpus;
  fs::path entities;
  fs::path sentiment;
  fs::path output;
  fs::path gold;
  bool grid = false;
  AlignConfig config;
};

ordered_json align_config_json(const AlignConfig& c) {
  ordered_json j;
  j["alpha"] = c.alpha;
  j["theta"] = c.theta;
  j["window_days"] = c.window_days;
  j["sim_scope_sentences"] = c.sim_scope_sentences;
  j["entity_constraint_sentences"] = c.entity_constraint_sentences;
  j["dedupe_threshold"] = c.dedupe_threshold;
  return j;
}

int run_align(const AlignOptions& o, int threads, std::ostream& out) {
  require_file(o.corpus);
  o.config.validate();
  const Corpus corpus = load_corpus(o.corpus);
  const AnnotationSet ann = load_stage_annotations(o.entities, o.sentiment, corpus);
  Manifest m("align", align_config_json(o.config));
  m.input(o.corpus);
  if (!o.entities.empty()) m.input(o.entities);
  const auto clusters = align(corpus, ann, o.config, threads);
  ensure_parent(o.output);
  save_clusters(clusters, o.output);
  m.output(o.output);
  m.write(o.output);
  std::size_t members = 0;
  for (const auto& c : clusters) members += c.member_ids.size();
  out << "align: " << clusters.size() << " clusters, mean size "
      << (clusters.empty() ? 0.0 : double(members) / clusters.size()) << '\n';
  return kExitOk;
}

int run_eval_mrr(const AlignOptions& o, int threads, std::ostream& out) {
  require_file(o.corpus);
  require_file(o.gold);
  o.config.validate();
  const Corpus corpus = load_corpus(o.corpus);
  const AnnotationSet ann = load_stage_annotations(o.entities, o.sentiment, corpus);
  const auto gold = load_gold_groups(o.gold);
  for (const auto& g : gold) {
    for (const auto& id : g.article_ids) {
      if (!corpus.contains(id)) throw DataError("gold group " + g.story_id + " references missing id " + id);
    }
  }
  const TfIdfIndex index(corpus, ann, o.config, threads);
  ordered_json report;
  report["config"] = align_config_json(o.config);
  const auto base = evaluate_mrr(gold, index, o.config);
  report["mrr"] = base.mrr;
  report["anchors"] = base.anchors;
  out << "MRR " << base.mrr << " over " << base.anchors << " anchors\n";
  if (o.grid) {
    auto rows = ordered_json::array();
    out << "alpha  theta  mrr\n";
    for (int ai = 0; ai <= 10; ++ai) {
      for (double theta : {0.1, 0.15, 0.2, 0.23, 0.25, 0.3, 0.35, 0.4, 0.5}) {
        AlignConfig c = o.config;
        c.alpha = ai / 10.0;
        c.theta = theta;
        const double mrr = evaluate_mrr(gold, index, c).mrr;
        rows.push_back({{"alpha", c.alpha}, {"theta", theta}, {"mrr", mrr}});
        out << std::fixed << std::setprecision(2) << c.alpha << "   " << theta << "   "
            << std::setprecision(4) << mrr << '\n';
      }
    }
    out.unsetf(std::ios::fixed);
    report["grid"] = std::move(rows);
  }
  if (!o.output.empty()) {
    Manifest m("eval-mrr", align_config_json(o.config));
    m.input(o.corpus);
    m.input(o.gold);
    if (!o.entities.empty()) m.input(o.entities);
    ensure_parent(o.output);
    Manifest::write_text(o.output, report.dump(2) + "\n");
    m.output(o.output);
    m.write(o.output);
  }
  return kExitOk;
}

// --------------------------------------------------------------------------

struct TripletCliOptions {
  fs::path corpus;
  fs::path clusters;
  fs::path output;
  std::string kind = "both";
  std::size_t neg_k = 1;
  std::size_t max_per_cluster = 0;
  std::uint64_t seed = 0;
};

int run_triplets(const TripletCliOptions& o, std::ostream& out) {
  require_file(o.corpus);
  require_file(o.clusters);
  const Corpus corpus = load_corpus(o.corpus);
  const auto clusters = load_clusters(o.clusters);
  TripletOptions opts;
  opts.ideology = o.kind == "both" || o.kind == "ideology";
  opts.story = o.kind == "both" || o.kind == "story";
  opts.negatives_per_pair = o.neg_k;
  opts.max_per_cluster = o.max_per_cluster;
  opts.seed = derive_seed(o.seed, "triplets");
  StoryTripletStats stats;
  const auto triplets = build_triplets(clusters, corpus, opts, &stats);
  ordered_json config;
  config["kind"] = o.kind;
  config["neg_k"] = o.neg_k;
  config["max_per_cluster"] = o.max_per_cluster;
  config["seed"] = o.seed;
  Manifest m("triplets", config);
  m.input(o.corpus);
  m.input(o.clusters);
  ensure_parent(o.output);
  save_triplets(triplets, o.output);
  m.output(o.output);
  m.write(o.output);
  std::size_t ideo = 0;
  for (const auto& t : triplets) ideo += t.kind == TripletKind::Ideology;
  out << "triplets: " << ideo << " ideology, " << triplets.size() - ideo << " story ("
      << stats.skipped_pairs << " pairs without a story negative)\n";
  return kExitOk;
}

// --------------------------------------------------------------------------

struct MaskCliOptions {
  fs::path corpus;
  fs::path entities;
  fs::path sentiment;
  fs::path output;
  fs::path vocab_out;
  int min_count = 2;
  MaskConfig config;
};

ordered_json mask_config_json(const MaskConfig& c) {
  ordered_json j;
  j["upsample_prob"] = c.upsample_prob;
  j["total_rate"] = c.total_rate;
  j["ratio"] = {c.ratio_mask, c.ratio_random, c.ratio_keep};
  j["max_len"] = c.max_len;
  j["max_span"] = c.max_span;
  j["seed"] = c.seed;
  return j;
}

std::vector<MaskedSequence> mask_corpus(const Corpus& corpus, const AnnotationSet& ann,
                                        const Vocabulary& vocab, const MaskConfig& config,
                                        int threads) {
  std::vector<MaskedSequence> seqs(corpus.size());
  const std::size_t workers = std::max(1, threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < corpus.size(); i += workers) {
        seqs[i] = sample_mask(corpus[i], ann.for_article(corpus[i].id), vocab, config);
      }
    });
  }
  for (auto& t : pool) t.join();
  return seqs;
}

int run_mask(MaskCliOptions o, int threads, std::ostream& out) {
  require_file(o.corpus);
  const Corpus corpus = load_corpus(o.corpus);
  const AnnotationSet ann = load_stage_annotations(o.entities, o.sentiment, corpus);
  const std::uint64_t user_seed = o.config.seed;
  o.config.seed = derive_seed(user_seed, "mask");
  o.config.validate();
  const Vocabulary vocab = build_vocab(corpus, o.min_count);
  const auto seqs = mask_corpus(corpus, ann, vocab, o.config, threads);
  ordered_json config = mask_config_json(o.config);
  config["seed"] = user_seed;
  config["min_count"] = o.min_count;
  Manifest m("mask", config);
  m.input(o.corpus);
  if (!o.entities.empty()) m.input(o.entities);
  if (!o.sentiment.empty() && fs::exists(o.sentiment)) m.input(o.sentiment);
  ensure_parent(o.output);
  ensure_parent(o.vocab_out);
  save_masked(seqs, o.output);
  save_vocab(vocab, o.vocab_out);
  m.output(o.output);
  m.output(o.vocab_out);
  m.write(o.output);
  out << "mask: " << seqs.size() << " sequences, vocabulary " << vocab.size() << '\n';
  out << mask_report(seqs, ann, o.config.max_span).to_table();
  return kExitOk;
}

// --------------------------------------------------------------------------

struct TrainCliOptions {
  fs::path corpus;
  fs::path triplets;
  fs::path masked;
  fs::path vocab;
  fs::path entities;
  fs::path sentiment;
  fs::path output;
  fs::path trace;
  int dim = 32;
  TrainConfig train;
  LossConfig loss;
  std::size_t max_len = 512;
};

std::vector<int> encode_doc(const Vocabulary& vocab, const Article& a, std::size_t max_len) {
  std::vector<std::string> toks(a.tokens.begin(),
                                a.tokens.begin() + static_cast<std::ptrdiff_t>(std::min(max_len, a.tokens.size())));
  return vocab.encode(toks);
}

int run_train(TrainCliOptions o, std::ostream& out) {
  for (const auto& p : {o.corpus, o.triplets, o.masked, o.vocab}) require_file(p);
  const Corpus corpus = load_corpus(o.corpus);
  const auto triplets = load_triplets(o.triplets);
  const auto masked = load_masked(o.masked);
  const Vocabulary vocab = load_vocab(o.vocab);
  o.loss.validate();
  if (o.dim <= 0) throw DataError("--dim must be positive");

  TrainData data;
  std::unordered_map<std::string, std::vector<int>> encoded;
  auto doc = [&](const std::string& id) -> const std::vector<int>& {
    auto it = encoded.find(id);
    if (it == encoded.end()) it = encoded.emplace(id, encode_doc(vocab, corpus.at(id), o.max_len)).first;
    return it->second;
  };
  for (const auto& t : triplets) {
    data.triplets.push_back({t.kind, doc(t.anchor), doc(t.positive), doc(t.negative)});
  }
  data.masked = masked;
  for (const auto& s : data.masked) {
    for (int id : s.input_ids) {
      if (id < 0 || id >= vocab.size()) throw DataError("masked sequence " + s.id + " has ids outside the vocabulary");
    }
  }
  AnnotationSet ann;
  const std::uint64_t user_seed = o.train.seed;
  if (!o.entities.empty()) {
    ann = load_stage_annotations(o.entities, o.sentiment, corpus);
    data.remask = [&](int epoch) {
      MaskConfig mc;
      mc.max_len = o.max_len;
      mc.seed = derive_seed(user_seed, "remask-" + std::to_string(epoch));
      std::vector<MaskedSequence> seqs;
      for (const auto& s : masked) seqs.push_back(sample_mask(corpus.at(s.id), ann.for_article(s.id), vocab, mc));
      return seqs;
    };
  }

  Rng rng(derive_seed(user_seed, "train-init"));
  auto model = EncoderModel<double>::initialized(vocab.size(), o.dim, rng);
  auto head = MlmHead<double>::initialized(vocab.size(), o.dim, rng);
  TrainConfig tc = o.train;
  tc.seed = derive_seed(user_seed, "train");
  const auto result = train(model, head, data, o.loss, tc);

  ordered_json config;
  config["dim"] = o.dim;
  config["steps"] = o.train.steps;
  config["triplet_batch_size"] = o.train.triplet_batch_size;
  config["mlm_batch_size"] = o.train.mlm_batch_size;
  config["learning_rate"] = o.train.learning_rate;
  config["projection_learning_rate"] = o.train.projection_learning_rate;
  config["beta"] = o.loss.beta;
  config["gamma"] = o.loss.gamma;
  config["delta_ideo"] = o.loss.delta_ideo;
  config["delta_story"] = o.loss.delta_story;
  config["seed"] = user_seed;
  config["remask"] = !o.entities.empty();
  Manifest m("train", config);
  for (const auto& p : {o.corpus, o.triplets, o.masked, o.vocab}) m.input(p);
  if (!o.entities.empty()) m.input(o.entities);
  ensure_parent(o.output);
  save_checkpoint({model, head, vocab.digest()}, o.output);
  m.output(o.output);
  if (!o.trace.empty()) {
    ensure_parent(o.trace);
    save_trace(result.trace, o.trace);
    m.output(o.trace);
  }
  m.write(o.output);
  out << "train: " << result.trace.size() << " steps";
  if (!result.epoch_losses.empty()) {
    out << ", epoch losses " << result.epoch_losses.front() << " -> " << result.epoch_losses.back();
  }
  out << '\n';
  return kExitOk;
}

// --------------------------------------------------------------------------

struct EvalOptions {
  fs::path corpus;
  fs::path model;
  fs::path vocab;
  fs::path masked;
  fs::path entities;
  fs::path sentiment;
  fs::path output;
  bool include_center = false;
  std::size_t positions = 200;
  std::size_t max_len = 512;
  std::string text;
  std::string target;
  int template_index = 0;
  std::uint64_t seed = 0;
};

Checkpoint load_matching_checkpoint(const EvalOptions& o, const Vocabulary& vocab) {
  require_file(o.model);
  Checkpoint ckpt = load_checkpoint(o.model);
  if (ckpt.vocab_digest != vocab.digest() || ckpt.model.vocab_size() != vocab.size()) {
    throw DataError("checkpoint " + o.model.string() + " was trained with a different vocabulary");
  }
  return ckpt;
}

void finish_eval(const EvalOptions& o, const std::string& what, const ordered_json& report,
                 const std::vector<fs::path>& inputs, std::ostream& out) {
  out << report.dump(2) << '\n';
  if (o.output.empty()) return;
  ordered_json config;
  config["report"] = what;
  config["seed"] = o.seed;
  config["positions"] = o.positions;
  config["include_center"] = o.include_center;
  Manifest m("eval-" + what, config);
  for (const auto& p : inputs) m.input(p);
  ensure_parent(o.output);
  Manifest::write_text(o.output, report.dump(2) + "\n");
  m.output(o.output);
  m.write(o.output);
}

int run_eval_probe(const EvalOptions& o, std::ostream& out) {
  require_file(o.corpus);
  require_file(o.vocab);
  const Corpus corpus = load_corpus(o.corpus);
  const Vocabulary vocab = load_vocab(o.vocab);
  const Checkpoint ckpt = load_matching_checkpoint(o, vocab);
  std::map<std::string, Eigen::VectorXd> embeddings;
  std::map<std::string, Ideology> labels;
  for (const auto& a : corpus) {
    if (a.tokens.empty() || (a.ideology == Ideology::Center && !o.include_center)) continue;
    embeddings[a.id] = doc_embed(ckpt.model, encode_doc(vocab, a, o.max_len));
    labels[a.id] = a.ideology;
  }
  const auto r = linear_probe(embeddings, labels, derive_seed(o.seed, "probe"));
  ordered_json report;
  report["note"] = "linear probe on synthetic data; a desk-scale stand-in for fine-tuning benchmarks";
  report["accuracy"] = r.accuracy;
  report["macro_f1"] = r.macro_f1;
  ordered_json f1;
  for (const auto& [c, v] : r.per_class_f1) f1[std::string(to_string(c))] = v;
  report["per_class_f1"] = f1;
  report["n_train"] = r.n_train;
  report["n_test"] = r.n_test;
  finish_eval(o, "probe", report, {o.corpus, o.model, o.vocab}, out);
  return kExitOk;
}

int run_eval_ppl(const EvalOptions& o, std::ostream& out) {
  require_file(o.corpus);
  require_file(o.vocab);
  const Corpus corpus = load_corpus(o.corpus);
  const Vocabulary vocab = load_vocab(o.vocab);
  const Checkpoint ckpt = load_matching_checkpoint(o, vocab);
  const auto ppl = ppl_by_ideology(ckpt.model, ckpt.head, vocab, corpus, o.positions,
                                   derive_seed(o.seed, "ppl"));
  ordered_json report;
  for (const auto& [c, v] : ppl) report[std::string(to_string(c))] = v;
  finish_eval(o, "ppl", report, {o.corpus, o.model, o.vocab}, out);
  return kExitOk;
}

int run_eval_mask_report(const EvalOptions& o, std::ostream& out) {
  require_file(o.masked);
  require_file(o.corpus);
  const Corpus corpus = load_corpus(o.corpus);
  const AnnotationSet ann = load_stage_annotations(o.entities, o.sentiment, corpus);
  const auto seqs = load_masked(o.masked);
  const auto r = mask_report(seqs, ann);
  out << r.to_table();
  finish_eval(o, "mask-report", ordered_json::parse(r.to_json()), {o.masked, o.corpus}, out);
  return kExitOk;
}

int run_eval_prompt(const EvalOptions& o, std::ostream& out) {
  const auto templates = stance_prompt_templates();
  if (o.template_index < 0 || o.template_index >= static_cast<int>(templates.size())) {
    throw CLI::ValidationError("--template must lie in [0, " + std::to_string(templates.size() - 1) + "]");
  }
  out << render_prompt(o.text, o.target, templates[static_cast<std::size_t>(o.template_index)]) << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"polpre: news corpus engineering and contrastive pretraining toolkit", "polpre"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML-style configuration file with [stage] sections");
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads for parallel stages")->check(CLI::Range(1, 256));

  SynthOptions synth_o;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with gold stories");
  synth->add_option("--out", synth_o.out_dir, "Output directory")->capture_default_str();
  synth->add_option("--stories", synth_o.stories)->capture_default_str();
  synth->add_option("--outlets-per-side", synth_o.outlets_per_side)->capture_default_str();
  synth->add_option("--distractors", synth_o.distractors)->capture_default_str();
  synth->add_option("--noise", synth_o.noise)->capture_default_str();
  synth->add_option("--duplicates", synth_o.duplicates)->capture_default_str();
  synth->add_option("--junk", synth_o.junk)->capture_default_str();
  synth->add_option("--marker-rate", synth_o.marker_rate)->capture_default_str();
  synth->add_option("--marker-vocab", synth_o.marker_vocab)->capture_default_str();
  synth->add_option("--general-vocab", synth_o.general_vocab)->capture_default_str();
  synth->add_option("--boilerplate-rate", synth_o.boilerplate_rate)->capture_default_str();
  synth->add_option("--seed", synth_o.seed)->capture_default_str();

  CleanOptions clean_o;
  auto* clean = app.add_subcommand("clean", "Filter, deduplicate, strip leaks and balance a corpus");
  clean->add_option("--in", clean_o.input, "Input corpus JSONL")->required();
  clean->add_option("--out", clean_o.output, "Output corpus JSONL")->required();
  clean->add_option("--patterns", clean_o.patterns_dir, "Pattern directory");
  clean->add_option("--dedupe-threshold", clean_o.dedupe_threshold)->capture_default_str();
  clean->add_option("--politics-model", clean_o.politics_model, "Politics classifier JSON");
  clean->add_flag("--train-politics", clean_o.train_politics,
                  "Train the classifier from URL keywords and write it to --politics-model");
  clean->add_option("--self-train", clean_o.self_train, "p_pos p_neg")->expected(2);
  clean->add_option("--self-mentions", clean_o.self_mentions, "outlet<TAB>phrase file");
  clean->add_option("--leak-min-count", clean_o.leak_min_count)->capture_default_str();
  clean->add_flag("--balance", clean_o.balance, "Downsample ideologies to equal counts");
  clean->add_option("--seed", clean_o.seed)->capture_default_str();

  AnnotateOptions ann_o;
  auto* annotate = app.add_subcommand("annotate", "Produce entity and sentiment annotations");
  annotate->add_option("--corpus", ann_o.corpus)->required();
  annotate->add_option("--sidecar", ann_o.sidecar, "Entity sidecar JSONL");
  annotate->add_flag("--heuristic", ann_o.heuristic, "Use the built-in capitalized-run tagger");
  annotate->add_option("--gazetteer", ann_o.gazetteer);
  annotate->add_option("--lexicon", ann_o.lexicon, "Sentiment lexicon, one word per line");
  annotate->add_option("--out-entities", ann_o.out_entities)->required();
  annotate->add_option("--out-sentiment", ann_o.out_sentiment)->required();

  AlignOptions align_o;
  auto add_align_flags = [](CLI::App* sub, AlignOptions& o) {
    sub->add_option("--corpus", o.corpus)->required();
    sub->add_option("--entities", o.entities);
    sub->add_option("--sentiment", o.sentiment);
    sub->add_option("--alpha", o.config.alpha)->capture_default_str();
    sub->add_option("--theta", o.config.theta)->capture_default_str();
    sub->add_option("--window", o.config.window_days)->capture_default_str();
  };
  auto* align_cmd = app.add_subcommand("align", "Align same-story articles across outlets");
  add_align_flags(align_cmd, align_o);
  align_cmd->add_option("--out", align_o.output)->required();

  AlignOptions mrr_o;
  auto* mrr = app.add_subcommand("eval-mrr", "Mean reciprocal rank of alignment on gold stories");
  add_align_flags(mrr, mrr_o);
  mrr->add_option("--gold", mrr_o.gold)->required();
  mrr->add_option("--out", mrr_o.output, "Report JSON");
  mrr->add_flag("--grid", mrr_o.grid, "Sweep alpha and theta");

  TripletCliOptions trip_o;
  auto* trip = app.add_subcommand("triplets", "Build ideology and story triplets");
  trip->add_option("--corpus", trip_o.corpus)->required();
  trip->add_option("--clusters", trip_o.clusters)->required();
  trip->add_option("--out", trip_o.output)->required();
  trip->add_option("--kind", trip_o.kind)->check(CLI::IsMember({"both", "ideology", "story"}))->capture_default_str();
  trip->add_option("--neg-k", trip_o.neg_k)->capture_default_str();
  trip->add_option("--max-per-cluster", trip_o.max_per_cluster, "0 = unlimited")->capture_default_str();
  trip->add_option("--seed", trip_o.seed)->capture_default_str();

  MaskCliOptions mask_o;
  auto* mask = app.add_subcommand("mask", "Sample entity/sentiment-upsampled masks");
  mask->add_option("--corpus", mask_o.corpus)->required();
  mask->add_option("--entities", mask_o.entities);
  mask->add_option("--sentiment", mask_o.sentiment);
  mask->add_option("--out", mask_o.output)->required();
  mask->add_option("--vocab-out", mask_o.vocab_out)->required();
  mask->add_option("--min-count", mask_o.min_count)->capture_default_str();
  mask->add_option("--rate", mask_o.config.total_rate)->capture_default_str();
  mask->add_option("--upsample", mask_o.config.upsample_prob)->capture_default_str();
  mask->add_option("--max-len", mask_o.config.max_len)->capture_default_str();
  mask->add_option("--seed", mask_o.config.seed)->capture_default_str();

  TrainCliOptions train_o;
  auto* train_cmd = app.add_subcommand("train", "Train the encoder with alternating objectives");
  train_cmd->add_option("--corpus", train_o.corpus)->required();
  train_cmd->add_option("--triplets", train_o.triplets)->required();
  train_cmd->add_option("--masked", train_o.masked)->required();
  train_cmd->add_option("--vocab", train_o.vocab)->required();
  train_cmd->add_option("--entities", train_o.entities, "Enables per-epoch remasking");
  train_cmd->add_option("--sentiment", train_o.sentiment);
  train_cmd->add_option("--out", train_o.output)->required();
  train_cmd->add_option("--trace", train_o.trace, "Loss trace CSV");
  train_cmd->add_option("--dim", train_o.dim)->capture_default_str();
  train_cmd->add_option("--steps", train_o.train.steps)->capture_default_str();
  train_cmd->add_option("--batch", train_o.train.triplet_batch_size)->capture_default_str();
  train_cmd->add_option("--mlm-batch", train_o.train.mlm_batch_size)->capture_default_str();
  train_cmd->add_option("--lr", train_o.train.learning_rate)->capture_default_str();
  train_cmd->add_option("--projection-lr", train_o.train.projection_learning_rate)->capture_default_str();
  train_cmd->add_option("--beta", train_o.loss.beta)->capture_default_str();
  train_cmd->add_option("--gamma", train_o.loss.gamma)->capture_default_str();
  train_cmd->add_option("--delta-ideo", train_o.loss.delta_ideo)->capture_default_str();
  train_cmd->add_option("--delta-story", train_o.loss.delta_story)->capture_default_str();
  train_cmd->add_option("--seed", train_o.train.seed)->capture_default_str();

  EvalOptions eval_o;
  auto* eval = app.add_subcommand("eval", "Evaluation reports");
  eval->require_subcommand(1);
  auto add_model_flags = [&](CLI::App* sub) {
    sub->add_option("--corpus", eval_o.corpus)->required();
    sub->add_option("--model", eval_o.model)->required();
    sub->add_option("--vocab", eval_o.vocab)->required();
    sub->add_option("--out", eval_o.output, "Report JSON");
    sub->add_option("--seed", eval_o.seed)->capture_default_str();
  };
  auto* probe = eval->add_subcommand("probe", "Linear ideology probe on document embeddings");
  add_model_flags(probe);
  probe->add_flag("--include-center", eval_o.include_center);
  auto* ppl = eval->add_subcommand("ppl", "Pseudo-perplexity by ideology");
  add_model_flags(ppl);
  ppl->add_option("--positions", eval_o.positions)->capture_default_str();
  auto* mreport = eval->add_subcommand("mask-report", "Masking statistics");
  mreport->add_option("--masked", eval_o.masked)->required();
  mreport->add_option("--corpus", eval_o.corpus)->required();
  mreport->add_option("--entities", eval_o.entities);
  mreport->add_option("--sentiment", eval_o.sentiment);
  mreport->add_option("--out", eval_o.output);
  auto* prompt = eval->add_subcommand("prompt", "Render a stance prompt");
  prompt->add_option("--text", eval_o.text)->required();
  prompt->add_option("--target", eval_o.target)->required();
  prompt->add_option("--template", eval_o.template_index, "Template index 0-10")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*synth) return run_synth(synth_o, out);
    if (*clean) return run_clean(clean_o, threads, out);
    if (*annotate) return run_annotate(ann_o, threads, out);
    if (*align_cmd) return run_align(align_o, threads, out);
    if (*mrr) return run_eval_mrr(mrr_o, threads, out);
    if (*trip) return run_triplets(trip_o, out);
    if (*mask) return run_mask(mask_o, threads, out);
    if (*train_cmd) return run_train(train_o, out);
    if (*probe) return run_eval_probe(eval_o, out);
    if (*ppl) return run_eval_ppl(eval_o, out);
    if (*mreport) return run_eval_mask_report(eval_o, out);
    if (*prompt) return run_eval_prompt(eval_o, out);
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace polpre
