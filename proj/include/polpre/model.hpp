#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polpre/corpus.hpp"
#include "polpre/masking.hpp"
#include "polpre/random.hpp"
#include "polpre/triplets.hpp"

namespace polpre {

// Mean-pooled token embeddings followed by one affine map:
//   embed(doc) = projection * mean_t(embeddings.row(t)) + bias
template <typename Scalar>
struct EncoderModel {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix embeddings;  // vocab x dim
  Matrix projection;  // dim x dim
  Vector bias;        // dim

  static EncoderModel zeros(int vocab, int dim) {
    return {Matrix::Zero(vocab, dim), Matrix::Zero(dim, dim), Vector::Zero(dim)};
  }

  // Gaussian embeddings, identity projection, zero bias.
  static EncoderModel initialized(int vocab, int dim, Rng& rng, Scalar scale = Scalar(0.1)) {
    EncoderModel m = zeros(vocab, dim);
    for (Eigen::Index i = 0; i < m.embeddings.size(); ++i) {
      m.embeddings.data()[i] = scale * static_cast<Scalar>(rng.normal());
    }
    m.projection.setIdentity();
    return m;
  }

  int dim() const { return static_cast<int>(bias.size()); }
  int vocab_size() const { return static_cast<int>(embeddings.rows()); }
  bool all_finite() const {
    return embeddings.allFinite() && projection.allFinite() && bias.allFinite();
  }
};

// Predicts a masked token from the encoder applied to the sequence's other
// tokens: logits = output^T * embed(context) + output_bias.
template <typename Scalar>
struct MlmHead {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix output;       // dim x vocab
  Vector output_bias;  // vocab

  static MlmHead zeros(int vocab, int dim) {
    return {Matrix::Zero(dim, vocab), Vector::Zero(vocab)};
  }
  static MlmHead initialized(int vocab, int dim, Rng& rng, Scalar scale = Scalar(0.01)) {
    MlmHead h = zeros(vocab, dim);
    for (Eigen::Index i = 0; i < h.output.size(); ++i) {
      h.output.data()[i] = scale * static_cast<Scalar>(rng.normal());
    }
    return h;
  }
  bool all_finite() const { return output.allFinite() && output_bias.allFinite(); }
};

template <typename Scalar>
struct EncoderGradient {
  typename EncoderModel<Scalar>::Matrix embeddings;
  typename EncoderModel<Scalar>::Matrix projection;
  typename EncoderModel<Scalar>::Vector bias;

  static EncoderGradient zeros_like(const EncoderModel<Scalar>& m) {
    return {EncoderModel<Scalar>::Matrix::Zero(m.embeddings.rows(), m.embeddings.cols()),
            EncoderModel<Scalar>::Matrix::Zero(m.projection.rows(), m.projection.cols()),
            EncoderModel<Scalar>::Vector::Zero(m.bias.size())};
  }
};

template <typename Scalar>
struct HeadGradient {
  typename MlmHead<Scalar>::Matrix output;
  typename MlmHead<Scalar>::Vector output_bias;

  static HeadGradient zeros_like(const MlmHead<Scalar>& h) {
    return {MlmHead<Scalar>::Matrix::Zero(h.output.rows(), h.output.cols()),
            MlmHead<Scalar>::Vector::Zero(h.output_bias.size())};
  }
};

struct LossConfig {
  double delta_ideo = 0.5;
  double delta_story = 1.0;
  double beta = 0.25;
  double gamma = 0.25;

  void validate() const;  // throws DataError
};

// Documents as token-id lists.
struct EncodedTriplet {
  TripletKind kind = TripletKind::Ideology;
  std::vector<int> anchor;
  std::vector<int> positive;
  std::vector<int> negative;
};

template <typename Scalar>
typename EncoderModel<Scalar>::Vector mean_embedding(const EncoderModel<Scalar>& model,
                                                     std::span<const int> ids) {
  typename EncoderModel<Scalar>::Vector sum =
      EncoderModel<Scalar>::Vector::Zero(model.dim());
  for (int id : ids) sum += model.embeddings.row(id).transpose();
  if (!ids.empty()) sum /= static_cast<Scalar>(ids.size());
  return sum;
}

// Throws DataError for an empty document.
template <typename Scalar>
typename EncoderModel<Scalar>::Vector doc_embed(const EncoderModel<Scalar>& model,
                                                std::span<const int> ids) {
  if (ids.empty()) throw DataError("cannot embed an empty document");
  return model.projection * mean_embedding(model, ids) + model.bias;
}

// [ |a - p| - |a - n| + margin ]_+
template <typename Derived>
typename Derived::Scalar triplet_loss(const Eigen::MatrixBase<Derived>& a,
                                      const Eigen::MatrixBase<Derived>& p,
                                      const Eigen::MatrixBase<Derived>& n,
                                      typename Derived::Scalar margin) {
  using Scalar = typename Derived::Scalar;
  const Scalar v = (a - p).norm() - (a - n).norm() + margin;
  return v > Scalar(0) ? v : Scalar(0);
}

template <typename Scalar>
void backprop_document(const EncoderModel<Scalar>& model, std::span<const int> ids,
                       const typename EncoderModel<Scalar>::Vector& mean,
                       const typename EncoderModel<Scalar>::Vector& upstream,
                       EncoderGradient<Scalar>& grad) {
  grad.projection.noalias() += upstream * mean.transpose();
  grad.bias += upstream;
  const typename EncoderModel<Scalar>::Vector d_mean =
      model.projection.transpose() * upstream / static_cast<Scalar>(ids.size());
  for (int id : ids) grad.embeddings.row(id) += d_mean.transpose();
}

// Sum of hinge terms over the triplets of `kind` in `batch`, each weighted by
// `weight`; gradients accumulate into `grad` when given. Returns nullopt when
// the batch holds no triplet of that kind. Subgradient 0 at the hinge kink and
// at zero distance.
template <typename Scalar>
std::optional<Scalar> triplet_batch_loss(const EncoderModel<Scalar>& model,
                                         std::span<const EncodedTriplet> batch,
                                         TripletKind kind, Scalar margin, Scalar weight,
                                         EncoderGradient<Scalar>* grad) {
  using Vector = typename EncoderModel<Scalar>::Vector;
  bool any = false;
  Scalar total(0);
  for (const auto& t : batch) {
    if (t.kind != kind) continue;
    any = true;
    const Vector ma = mean_embedding(model, t.anchor);
    const Vector mp = mean_embedding(model, t.positive);
    const Vector mn = mean_embedding(model, t.negative);
    const Vector ea = model.projection * ma + model.bias;
    const Vector ep = model.projection * mp + model.bias;
    const Vector en = model.projection * mn + model.bias;
    const Vector u = ea - ep;
    const Vector v = ea - en;
    const Scalar du = u.norm();
    const Scalar dv = v.norm();
    const Scalar hinge = du - dv + margin;
    if (!(hinge > Scalar(0))) continue;
    total += weight * hinge;
    if (!grad) continue;
    const Vector gu = du > Scalar(0) ? Vector(u / du) : Vector::Zero(u.size());
    const Vector gv = dv > Scalar(0) ? Vector(v / dv) : Vector::Zero(v.size());
    backprop_document<Scalar>(model, t.anchor, ma, weight * (gu - gv), *grad);
    backprop_document<Scalar>(model, t.positive, mp, -weight * gu, *grad);
    backprop_document<Scalar>(model, t.negative, mn, weight * gv, *grad);
  }
  if (!any) return std::nullopt;
  return total;
}

// Mean cross-entropy over every masked position in `batch`, times `weight`.
// The context of a masked position is the mean embedding of the sequence's
// other positions (zero for a one-token sequence). All positions of the batch
// are evaluated as one column block.
template <typename Scalar>
Scalar mlm_loss(const EncoderModel<Scalar>& model, const MlmHead<Scalar>& head,
                std::span<const MaskedSequence> batch, Scalar weight,
                EncoderGradient<Scalar>* grad, HeadGradient<Scalar>* head_grad) {
  using Matrix = typename EncoderModel<Scalar>::Matrix;
  using Vector = typename EncoderModel<Scalar>::Vector;
  std::size_t count = 0;
  for (const auto& s : batch) count += s.masked.size();
  if (count == 0) throw DataError("MLM batch has no masked positions");
  const Scalar inv_count = Scalar(1) / static_cast<Scalar>(count);
  const auto cols = static_cast<Eigen::Index>(count);

  Matrix context(model.dim(), cols);
  std::vector<int> own(count), target(count);
  std::vector<Scalar> inv_ctx(batch.size());
  Eigen::Index col = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    const std::size_t n = s.input_ids.size();
    Vector sum = Vector::Zero(model.dim());
    for (int id : s.input_ids) sum += model.embeddings.row(id).transpose();
    inv_ctx[b] = n > 1 ? Scalar(1) / static_cast<Scalar>(n - 1) : Scalar(0);
    for (const auto& m : s.masked) {
      own[col] = s.input_ids[m.position];
      target[col] = m.target;
      context.col(col) = (sum - model.embeddings.row(own[col]).transpose()) * inv_ctx[b];
      ++col;
    }
  }
  const Matrix hidden = (model.projection * context).colwise() + model.bias;
  Matrix logits = (head.output.transpose() * hidden).colwise() + head.output_bias;

  Scalar total(0);
  for (Eigen::Index j = 0; j < cols; ++j) {
    const Scalar top = logits.col(j).maxCoeff();
    const Scalar log_z = top + std::log((logits.col(j).array() - top).exp().sum());
    total += weight * inv_count * (log_z - logits(target[j], j));
    // Reuse the logits storage for d loss / d logits.
    logits.col(j) = (logits.col(j).array() - log_z).exp().matrix();
    logits(target[j], j) -= Scalar(1);
  }
  if (!grad && !head_grad) return total;
  logits *= weight * inv_count;
  if (head_grad) {
    head_grad->output.noalias() += hidden * logits.transpose();
    head_grad->output_bias += logits.rowwise().sum();
  }
  if (grad) {
    const Matrix d_hidden = head.output * logits;
    grad->projection.noalias() += d_hidden * context.transpose();
    grad->bias += d_hidden.rowwise().sum();
    const Matrix d_sum = model.projection.transpose() * d_hidden;
    col = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& s = batch[b];
      const auto m = static_cast<Eigen::Index>(s.masked.size());
      if (m == 0) continue;
      // ctx_j = (sum - e_own_j) / (n - 1); sum covers every input position.
      const Vector spread = d_sum.middleCols(col, m).rowwise().sum() * inv_ctx[b];
      for (Eigen::Index j = col; j < col + m; ++j) {
        grad->embeddings.row(own[j]) -= d_sum.col(j).transpose() * inv_ctx[b];
      }
      if (inv_ctx[b] != Scalar(0)) {
        for (int id : s.input_ids) grad->embeddings.row(id) += spread.transpose();
      }
      col += m;
    }
  }
  return total;
}

inline double combined_loss(double l_ideo, double l_story, double l_mlm, const LossConfig& c) {
  return c.beta * l_ideo + c.gamma * l_story + (1.0 - c.beta - c.gamma) * l_mlm;
}

// β·L_ideo + γ·L_story + (1 − β − γ)·L_mlm over one triplet batch and one
// MLM batch; a triplet kind absent from the batch contributes 0.
template <typename Scalar>
Scalar combined_objective(const EncoderModel<Scalar>& model, const MlmHead<Scalar>& head,
                          std::span<const EncodedTriplet> triplets,
                          std::span<const MaskedSequence> masked, const LossConfig& c,
                          EncoderGradient<Scalar>* grad, HeadGradient<Scalar>* head_grad) {
  const Scalar ideo = triplet_batch_loss<Scalar>(model, triplets, TripletKind::Ideology,
                                                 Scalar(c.delta_ideo), Scalar(c.beta), grad)
                          .value_or(Scalar(0));
  const Scalar story = triplet_batch_loss<Scalar>(model, triplets, TripletKind::Story,
                                                  Scalar(c.delta_story), Scalar(c.gamma), grad)
                           .value_or(Scalar(0));
  const Scalar mlm = mlm_loss<Scalar>(model, head, masked, Scalar(1.0 - c.beta - c.gamma),
                                      grad, head_grad);
  return ideo + story + mlm;
}

// Log-probability of the original token at `position` when only that position
// is masked.
template <typename Scalar>
Scalar masked_log_prob(const EncoderModel<Scalar>& model, const MlmHead<Scalar>& head,
                       std::span<const int> ids, std::size_t position) {
  MaskedSequence s;
  s.input_ids.assign(ids.begin(), ids.end());
  s.input_ids[position] = Vocabulary::kMask;
  s.masked.push_back({position, ids[position], MaskAction::Mask});
  return -mlm_loss<Scalar>(model, head, std::span<const MaskedSequence>(&s, 1), Scalar(1),
                           nullptr, nullptr);
}

// exp(-mean log p) over min(n_positions, L) positions drawn without
// replacement.
double pseudo_perplexity(const EncoderModel<double>& model, const MlmHead<double>& head,
                         std::span<const int> ids, std::size_t n_positions,
                         std::uint64_t seed);

struct TrainConfig {
  int steps = 500;
  std::size_t triplet_batch_size = 128;
  std::size_t mlm_batch_size = 8;
  double learning_rate = 5.0;
  // Rate for the shared projection. 0 keeps it at its initial value: a
  // trained projection folds story and ideology offsets into one low-rank
  // subspace and the ideology axis stops being global.
  double projection_learning_rate = 0.0;
  std::uint64_t seed = 0;
};

struct TraceEntry {
  int step = 0;           // 1-based
  std::string kind;       // "triplet" or "mlm"
  double loss = 0.0;      // weighted batch loss applied at this step
  double ideo = 0.0;      // unweighted components (0 where not evaluated)
  double story = 0.0;
  double mlm = 0.0;
};

struct TrainData {
  std::vector<EncodedTriplet> triplets;
  std::vector<MaskedSequence> masked;
  // Optional per-epoch remasking; epoch 0 uses `masked`.
  std::function<std::vector<MaskedSequence>(int epoch)> remask;
};

struct TrainResult {
  std::vector<TraceEntry> trace;
  // β·mean ideo + γ·mean story + (1 − β − γ)·mean mlm over each complete
  // pass through the triplet batches.
  std::vector<double> epoch_losses;
};

// Odd steps update on a triplet batch, even steps on an MLM batch, with plain
// gradient descent. Throws DataError naming the step on a non-finite loss.
TrainResult train(EncoderModel<double>& model, MlmHead<double>& head, const TrainData& data,
                  const LossConfig& loss_config, const TrainConfig& config);

struct Checkpoint {
  EncoderModel<double> model;
  MlmHead<double> head;
  std::string vocab_digest;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_trace(const std::vector<TraceEntry>& trace, const std::filesystem::path& path);

}  // namespace polpre
