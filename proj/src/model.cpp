#include "polpre/model.hpp"

#include <fstream>
#include <numeric>

#include "json.hpp"

namespace polpre {

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < n; b += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
  }
  return batches;
}

template <typename M>
nlohmann::json matrix_json(const M& m) {
  // Row-major flattening.
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  }
  return flat;
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  const auto flat = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) {
    throw DataError("checkpoint matrix has the wrong number of entries");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  }
  return m;
}

}  // namespace

void LossConfig::validate() const {
  if (delta_ideo < 0 || delta_story < 0) throw DataError("margins must be non-negative");
  if (beta < 0 || gamma < 0 || beta + gamma > 1.0) {
    throw DataError("loss weights need beta, gamma >= 0 and beta + gamma <= 1");
  }
}

double pseudo_perplexity(const EncoderModel<double>& model, const MlmHead<double>& head,
                         std::span<const int> ids, std::size_t n_positions,
                         std::uint64_t seed) {
  if (ids.empty()) throw DataError("pseudo-perplexity needs at least one token");
  Rng rng(seed);
  const auto positions = rng.sample_without_replacement(ids.size(), n_positions);
  const std::size_t n = ids.size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(model.dim());
  for (int id : ids) sum += model.embeddings.row(id).transpose();
  const double inv_ctx = n > 1 ? 1.0 / static_cast<double>(n - 1) : 0.0;
  double total = 0.0;
  for (std::size_t pos : positions) {
    // The masked position is excluded from its own context, so the [MASK]
    // substitution does not enter the computation.
    const Eigen::VectorXd ctx = (sum - model.embeddings.row(ids[pos]).transpose()) * inv_ctx;
    const Eigen::VectorXd h = model.projection * ctx + model.bias;
    const Eigen::VectorXd logits = head.output.transpose() * h + head.output_bias;
    const double top = logits.maxCoeff();
    const double log_z = top + std::log((logits.array() - top).exp().sum());
    total += logits[ids[pos]] - log_z;
  }
  return std::exp(-total / static_cast<double>(positions.size()));
}

TrainResult train(EncoderModel<double>& model, MlmHead<double>& head, const TrainData& data,
                  const LossConfig& loss_config, const TrainConfig& config) {
  loss_config.validate();
  if (data.triplets.empty()) throw DataError("training needs at least one triplet");
  if (data.masked.empty()) throw DataError("training needs at least one masked sequence");
  if (config.triplet_batch_size == 0 || config.mlm_batch_size == 0) {
    throw DataError("batch sizes must be >= 1");
  }
  const double beta = loss_config.beta;
  const double gamma = loss_config.gamma;
  const double mlm_weight = 1.0 - beta - gamma;
  const double lr = config.learning_rate;
  const double lr_proj = config.projection_learning_rate;

  TrainResult result;
  int triplet_epoch = 0, mlm_epoch = 0;
  auto triplet_plan = epoch_batches(data.triplets.size(), config.triplet_batch_size,
                                    derive_seed(config.seed, "triplet-epoch-0"));
  std::size_t triplet_cursor = 0;
  std::vector<MaskedSequence> masked = data.masked;
  auto mlm_plan = epoch_batches(masked.size(), config.mlm_batch_size,
                                derive_seed(config.seed, "mlm-epoch-0"));
  std::size_t mlm_cursor = 0;

  double epoch_ideo = 0, epoch_story = 0, epoch_mlm = 0;
  std::size_t epoch_triplet_steps = 0, epoch_mlm_steps = 0;

  for (int step = 1; step <= config.steps; ++step) {
    TraceEntry entry;
    entry.step = step;
    if (step % 2 == 1) {
      entry.kind = "triplet";
      std::vector<EncodedTriplet> batch;
      for (std::size_t k : triplet_plan[triplet_cursor]) batch.push_back(data.triplets[k]);
      auto g_ideo = EncoderGradient<double>::zeros_like(model);
      auto g_story = EncoderGradient<double>::zeros_like(model);
      entry.ideo = triplet_batch_loss<double>(model, batch, TripletKind::Ideology,
                                              loss_config.delta_ideo, 1.0, &g_ideo)
                       .value_or(0.0);
      entry.story = triplet_batch_loss<double>(model, batch, TripletKind::Story,
                                               loss_config.delta_story, 1.0, &g_story)
                        .value_or(0.0);
      entry.loss = beta * entry.ideo + gamma * entry.story;
      if (!std::isfinite(entry.loss)) {
        throw DataError("training diverged at step " + std::to_string(step));
      }
      model.embeddings -= lr * (beta * g_ideo.embeddings + gamma * g_story.embeddings);
      model.projection -= lr_proj * (beta * g_ideo.projection + gamma * g_story.projection);
      model.bias -= lr * (beta * g_ideo.bias + gamma * g_story.bias);
      epoch_ideo += entry.ideo;
      epoch_story += entry.story;
      ++epoch_triplet_steps;
      if (++triplet_cursor == triplet_plan.size()) {
        const double mean_mlm = epoch_mlm_steps ? epoch_mlm / epoch_mlm_steps : 0.0;
        result.epoch_losses.push_back(
            combined_loss(epoch_ideo / epoch_triplet_steps, epoch_story / epoch_triplet_steps,
                          mean_mlm, loss_config));
        epoch_ideo = epoch_story = epoch_mlm = 0;
        epoch_triplet_steps = epoch_mlm_steps = 0;
        ++triplet_epoch;
        triplet_plan = epoch_batches(
            data.triplets.size(), config.triplet_batch_size,
            derive_seed(config.seed, "triplet-epoch-" + std::to_string(triplet_epoch)));
        triplet_cursor = 0;
      }
    } else {
      entry.kind = "mlm";
      std::vector<MaskedSequence> batch;
      for (std::size_t k : mlm_plan[mlm_cursor]) batch.push_back(masked[k]);
      auto grad = EncoderGradient<double>::zeros_like(model);
      auto head_grad = HeadGradient<double>::zeros_like(head);
      entry.mlm = mlm_loss<double>(model, head, batch, 1.0, &grad, &head_grad);
      entry.loss = mlm_weight * entry.mlm;
      if (!std::isfinite(entry.loss)) {
        throw DataError("training diverged at step " + std::to_string(step));
      }
      model.embeddings -= lr * mlm_weight * grad.embeddings;
      model.projection -= lr_proj * mlm_weight * grad.projection;
      model.bias -= lr * mlm_weight * grad.bias;
      head.output -= lr * mlm_weight * head_grad.output;
      head.output_bias -= lr * mlm_weight * head_grad.output_bias;
      epoch_mlm += entry.mlm;
      ++epoch_mlm_steps;
      if (++mlm_cursor == mlm_plan.size()) {
        ++mlm_epoch;
        if (data.remask) masked = data.remask(mlm_epoch);
        mlm_plan = epoch_batches(masked.size(), config.mlm_batch_size,
                                 derive_seed(config.seed, "mlm-epoch-" + std::to_string(mlm_epoch)));
        mlm_cursor = 0;
      }
    }
    result.trace.push_back(std::move(entry));
  }
  return result;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["format"] = "polpre-encoder";
  j["version"] = 1;
  j["dim"] = ckpt.model.dim();
  j["vocab_size"] = ckpt.model.vocab_size();
  j["vocab_hash"] = ckpt.vocab_digest;
  j["embeddings"] = matrix_json(ckpt.model.embeddings);
  j["projection"] = matrix_json(ckpt.model.projection);
  j["bias"] = matrix_json(ckpt.model.bias);
  j["head_output"] = matrix_json(ckpt.head.output);
  j["head_bias"] = matrix_json(ckpt.head.output_bias);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format") != "polpre-encoder" || j.at("version") != 1) {
      throw DataError("unsupported checkpoint format");
    }
    const Eigen::Index dim = j.at("dim").get<int>();
    const Eigen::Index vocab = j.at("vocab_size").get<int>();
    Checkpoint c;
    c.vocab_digest = j.at("vocab_hash").get<std::string>();
    c.model.embeddings = matrix_from(j.at("embeddings"), vocab, dim);
    c.model.projection = matrix_from(j.at("projection"), dim, dim);
    c.model.bias = matrix_from(j.at("bias"), dim, 1);
    c.head.output = matrix_from(j.at("head_output"), dim, vocab);
    c.head.output_bias = matrix_from(j.at("head_bias"), vocab, 1);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint: " + e.what());
  }
}

void save_trace(const std::vector<TraceEntry>& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "step,kind,loss\n";
  out.precision(17);
  for (const auto& e : trace) out << e.step << ',' << e.kind << ',' << e.loss << '\n';
}

}  // namespace polpre
