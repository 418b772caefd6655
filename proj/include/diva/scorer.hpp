#pragma once

// Discriminative scoring head f(x, y, t) trained with the margin ranking
// loss max(0, m - (f(x, y+, t+) - f(x, y-, t-))).
//
// The head sits on a featurizer: hashed unigram+bigram counts by default, or
// a remote embedding endpoint. Parameters live in one flat vector:
//   linear: [w (d), b]
//   mlp1:   [W1 (h x d, row-major), b1 (h), w2 (h), b2]

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "diva/agent.hpp"
#include "diva/compressor.hpp"
#include "diva/error.hpp"
#include "diva/http.hpp"
#include "diva/text.hpp"

namespace diva::scorer {

// ---------------------------------------------------------------------------
// Features

/// Conceptually dense; stored as sorted (index, value) pairs because hashed
/// text features are overwhelmingly zero.
struct FeatureVector {
  std::size_t dim = 0;
  std::vector<std::uint32_t> indices;
  std::vector<double> values;
  double norm = 0.0;

  static FeatureVector from_dense(const std::vector<double>& dense) {
    FeatureVector v;
    v.dim = dense.size();
    for (std::size_t i = 0; i < dense.size(); ++i) {
      if (dense[i] != 0.0) {
        v.indices.push_back(static_cast<std::uint32_t>(i));
        v.values.push_back(dense[i]);
      }
    }
    v.norm = std::sqrt(std::inner_product(v.values.begin(), v.values.end(), v.values.begin(), 0.0));
    return v;
  }

  std::vector<double> dense() const {
    std::vector<double> out(dim, 0.0);
    for (std::size_t k = 0; k < indices.size(); ++k) out[indices[k]] = values[k];
    return out;
  }

  double at(std::size_t i) const {
    auto it = std::lower_bound(indices.begin(), indices.end(), static_cast<std::uint32_t>(i));
    return it != indices.end() && *it == i ? values[it - indices.begin()] : 0.0;
  }

  std::size_t nonzeros() const { return indices.size(); }

  bool operator==(const FeatureVector&) const = default;
};

inline double dot(const FeatureVector& a, const FeatureVector& b) {
  double s = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.indices.size() && j < b.indices.size()) {
    if (a.indices[i] < b.indices[j]) {
      ++i;
    } else if (a.indices[i] > b.indices[j]) {
      ++j;
    } else {
      s += a.values[i++] * b.values[j++];
    }
  }
  return s;
}

enum class FeaturizerKind { hashed_text, remote_embedding };

inline constexpr std::size_t kHashedDim = std::size_t{1} << 14;

class Featurizer {
 public:
  virtual ~Featurizer() = default;
  virtual FeatureVector extract(std::string_view text) = 0;
  virtual FeaturizerKind kind() const = 0;
  virtual std::size_t dim() const = 0;
  virtual bool normalized() const = 0;
};

/// Lowercased unigram and bigram counts hashed (FNV-1a) into `dim` buckets.
class HashedFeaturizer final : public Featurizer {
 public:
  explicit HashedFeaturizer(std::size_t dim = kHashedDim, bool normalize = true)
      : dim_(dim), normalize_(normalize) {
    if (dim_ == 0) throw std::invalid_argument("featurizer dimension must be > 0");
  }

  FeatureVector extract(std::string_view input) override {
    if (text::trim(input).empty()) throw std::invalid_argument("extract_features: empty text");
    auto tokens = text::word_tokens(input);
    std::map<std::uint32_t, double> counts;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      counts[bucket("u\x1f" + tokens[i])] += 1.0;
      if (i + 1 < tokens.size()) counts[bucket("b\x1f" + tokens[i] + "\x1f" + tokens[i + 1])] += 1.0;
    }
    FeatureVector v;
    v.dim = dim_;
    double sq = 0.0;
    for (const auto& [idx, c] : counts) {
      v.indices.push_back(idx);
      v.values.push_back(c);
      sq += c * c;
    }
    v.norm = std::sqrt(sq);
    if (normalize_ && v.norm > 0.0) {
      for (auto& x : v.values) x /= v.norm;
      v.norm = 1.0;
    }
    return v;
  }

  std::uint32_t bucket(std::string_view key) const {
    return static_cast<std::uint32_t>(text::fnv1a64(key) % dim_);
  }

  FeaturizerKind kind() const override { return FeaturizerKind::hashed_text; }
  std::size_t dim() const override { return dim_; }
  bool normalized() const override { return normalize_; }

 private:
  std::size_t dim_;
  bool normalize_;
};

/// POST {"model", "input"} → {"data":[{"embedding":[...]}]}; cached by
/// content hash. The dimension is whatever the provider returns first.
class RemoteEmbeddingFeaturizer final : public Featurizer {
 public:
  RemoteEmbeddingFeaturizer(std::shared_ptr<http::Transport> transport, std::string endpoint,
                            std::string model, bool normalize = true)
      : transport_(std::move(transport)), endpoint_(std::move(endpoint)),
        model_(std::move(model)), normalize_(normalize) {}

  FeatureVector extract(std::string_view input) override {
    if (text::trim(input).empty()) throw std::invalid_argument("extract_features: empty text");
    auto key = text::sha256_hex(input);
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    http::Request req;
    req.url = endpoint_;
    req.body = nlohmann::json{{"model", model_}, {"input", std::string(input)}}.dump();
    req.headers.emplace_back("Content-Type", "application/json");
    http::Response res;
    try {
      res = transport_->post(req);
    } catch (const http::TransportFailure& e) {
      throw EmbeddingProviderError(e.what(), endpoint_);
    }
    if (res.status != 200)
      throw EmbeddingProviderError("HTTP " + std::to_string(res.status), endpoint_);
    std::vector<double> emb;
    try {
      emb = nlohmann::json::parse(res.body).at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw EmbeddingProviderError(std::string("malformed embedding response: ") + e.what(),
                                   endpoint_);
    }
    std::lock_guard lock(mu_);
    if (dim_ == 0) dim_ = emb.size();
    if (emb.size() != dim_)
      throw EmbeddingProviderError("embedding dimension changed from " + std::to_string(dim_) +
                                       " to " + std::to_string(emb.size()),
                                   endpoint_);
    for (double x : emb)
      if (!std::isfinite(x)) throw EmbeddingProviderError("non-finite embedding value", endpoint_);
    auto v = FeatureVector::from_dense(emb);
    if (normalize_ && v.norm > 0.0) {
      for (auto& x : v.values) x /= v.norm;
      v.norm = 1.0;
    }
    cache_.emplace(key, v);
    return v;
  }

  FeaturizerKind kind() const override { return FeaturizerKind::remote_embedding; }
  std::size_t dim() const override {
    std::lock_guard lock(mu_);
    return dim_;
  }
  bool normalized() const override { return normalize_; }

 private:
  std::shared_ptr<http::Transport> transport_;
  std::string endpoint_;
  std::string model_;
  bool normalize_;
  mutable std::mutex mu_;
  std::size_t dim_ = 0;
  std::unordered_map<std::string, FeatureVector> cache_;
};

inline FeatureVector extract_features(std::string_view text, Featurizer& fz) {
  return fz.extract(text);
}

// ---------------------------------------------------------------------------
// Head

enum class Architecture { linear, mlp1 };

struct ScorerHead {
  Architecture architecture = Architecture::linear;
  std::size_t dim = 0;
  std::size_t hidden = 0;  // mlp1 only
  std::uint64_t seed = 0;
  std::vector<double> params;

  static std::size_t param_count(Architecture a, std::size_t d, std::size_t h) {
    return a == Architecture::linear ? d + 1 : h * d + 2 * h + 1;
  }

  /// Zeros for linear; uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer for mlp1.
  static ScorerHead init(Architecture a, std::size_t d, std::size_t h, std::uint64_t seed) {
    if (d == 0) throw std::invalid_argument("head dimension must be > 0");
    if (a == Architecture::mlp1 && h == 0) throw std::invalid_argument("mlp1 needs hidden > 0");
    ScorerHead head{a, d, a == Architecture::mlp1 ? h : 0, seed,
                    std::vector<double>(param_count(a, d, h), 0.0)};
    if (a == Architecture::mlp1) {
      std::mt19937_64 rng(seed);
      auto uniform = [&](double bound) {
        double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        return (2.0 * u - 1.0) * bound;
      };
      const double b1 = 1.0 / std::sqrt(static_cast<double>(d));
      const double b2 = 1.0 / std::sqrt(static_cast<double>(h));
      for (std::size_t i = 0; i < h * d + h; ++i) head.params[i] = uniform(b1);
      for (std::size_t i = h * d + h; i < head.params.size(); ++i) head.params[i] = uniform(b2);
    }
    return head;
  }

  bool consistent() const {
    return params.size() == param_count(architecture, dim, hidden) &&
           (architecture == Architecture::linear || hidden > 0);
  }

  bool operator==(const ScorerHead&) const = default;
};

namespace detail {

inline void check_dims(const ScorerHead& head, const FeatureVector& v) {
  if (v.dim != head.dim)
    throw DimensionMismatch("features have dimension " + std::to_string(v.dim) +
                            ", head expects " + std::to_string(head.dim));
}

inline double row_dot(const double* row, const FeatureVector& v) {
  double s = 0.0;
  for (std::size_t k = 0; k < v.indices.size(); ++k) s += row[v.indices[k]] * v.values[k];
  return s;
}

/// Forward pass; fills tanh activations for mlp1 when `act` is given.
inline double forward(const ScorerHead& head, const FeatureVector& v, std::vector<double>* act) {
  const auto& p = head.params;
  const std::size_t d = head.dim;
  if (head.architecture == Architecture::linear) return row_dot(p.data(), v) + p[d];
  const std::size_t h = head.hidden;
  const double* b1 = p.data() + h * d;
  const double* w2 = b1 + h;
  double out = w2[h];  // b2
  if (act) act->assign(h, 0.0);
  for (std::size_t j = 0; j < h; ++j) {
    double a = std::tanh(row_dot(p.data() + j * d, v) + b1[j]);
    if (act) (*act)[j] = a;
    out += w2[j] * a;
  }
  return out;
}

/// grad += scale * df/dtheta at v.
inline void accumulate_score_gradient(const ScorerHead& head, const FeatureVector& v, double scale,
                                      std::vector<double>& grad) {
  const std::size_t d = head.dim;
  if (head.architecture == Architecture::linear) {
    for (std::size_t k = 0; k < v.indices.size(); ++k) grad[v.indices[k]] += scale * v.values[k];
    grad[d] += scale;
    return;
  }
  const std::size_t h = head.hidden;
  std::vector<double> act;
  forward(head, v, &act);
  const double* w2 = head.params.data() + h * d + h;
  for (std::size_t j = 0; j < h; ++j) {
    double delta = scale * w2[j] * (1.0 - act[j] * act[j]);
    double* row = grad.data() + j * d;
    for (std::size_t k = 0; k < v.indices.size(); ++k) row[v.indices[k]] += delta * v.values[k];
    grad[h * d + j] += delta;
    grad[h * d + h + j] += scale * act[j];
  }
  grad[h * d + 2 * h] += scale;
}

}  // namespace detail

inline double predict_score(const ScorerHead& head, const FeatureVector& features) {
  detail::check_dims(head, features);
  return detail::forward(head, features, nullptr);
}

inline double margin_ranking_loss(double f_plus, double f_minus, double m) {
  return std::max(0.0, m - (f_plus - f_minus));
}

/// Gradient of the hinge w.r.t. the flat parameter vector. Zero when the
/// slack m - (f+ - f-) is <= 0 (the kink takes the inactive branch).
inline std::vector<double> loss_gradient(const ScorerHead& head, const FeatureVector& v_plus,
                                         const FeatureVector& v_minus, double m) {
  detail::check_dims(head, v_plus);
  detail::check_dims(head, v_minus);
  std::vector<double> grad(head.params.size(), 0.0);
  double slack = m - (detail::forward(head, v_plus, nullptr) - detail::forward(head, v_minus, nullptr));
  if (slack > 0.0) {
    detail::accumulate_score_gradient(head, v_minus, 1.0, grad);
    detail::accumulate_score_gradient(head, v_plus, -1.0, grad);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Training

enum class Schedule { constant, cosine_decay };
enum class Optimizer { sgd, adam_w };

struct TrainConfig {
  double margin = 0.1;
  double learning_rate = 2e-4;
  Schedule schedule = Schedule::cosine_decay;
  int epochs = 3;
  int batch_size = 16;  // <= 0 means full batch
  std::uint64_t seed = 42;
  Optimizer optimizer = Optimizer::adam_w;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Architecture architecture = Architecture::linear;
  std::size_t hidden = 16;
  int max_length = compress::kDefaultMaxLength;

  std::optional<std::string> validate() const {
    if (!(margin > 0)) return "margin must be > 0";
    if (!(learning_rate > 0)) return "learning_rate must be > 0";
    if (epochs < 1) return "epochs must be >= 1";
    if (architecture == Architecture::mlp1 && hidden == 0) return "hidden must be > 0";
    if (max_length < 1) return "max_length must be >= 1";
    return std::nullopt;
  }
};

struct Side {
  agent::AnswerCandidate answer;
  compress::CompressedTrajectory trajectory;
};

struct PreferencePair {
  agent::Question question;
  Side chosen;
  Side rejected;
};

struct FeaturePair {
  FeatureVector plus;
  FeatureVector minus;
};

inline FeatureVector featurize_side(const agent::Question& q, const Side& s, Featurizer& fz,
                                    int max_length) {
  return fz.extract(compress::render_scorer_input(q, s.answer, s.trajectory, max_length));
}

struct TrainResult {
  ScorerHead head;
  std::vector<double> epoch_losses;  // mean hinge over the epoch's batches, per pair
};

inline double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t total) {
  if (cfg.schedule == Schedule::constant || total == 0) return cfg.learning_rate;
  const double pi = std::acos(-1.0);
  return cfg.learning_rate * 0.5 *
         (1.0 + std::cos(pi * static_cast<double>(step) / static_cast<double>(total)));
}

/// Trains on precomputed feature pairs. Deterministic in cfg.seed: a fixed
/// Fisher-Yates shuffle per epoch and a fixed initialization.
inline TrainResult train_on_features(const std::vector<FeaturePair>& data, std::size_t dim,
                                     const TrainConfig& cfg,
                                     std::optional<ScorerHead> initial = std::nullopt,
                                     const std::function<void(int, double)>& on_epoch = {}) {
  if (auto err = cfg.validate()) throw std::invalid_argument(*err);
  if (data.empty()) throw EmptyDataset("no preference pairs to train on");
  ScorerHead head = initial ? *initial : ScorerHead::init(cfg.architecture, dim, cfg.hidden, cfg.seed);
  if (!head.consistent() || head.dim != dim)
    throw DimensionMismatch("initial head does not match feature dimension");

  const std::size_t n = data.size();
  const std::size_t batch = cfg.batch_size <= 0 ? n : std::min<std::size_t>(cfg.batch_size, n);
  const std::size_t batches_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = batches_per_epoch * static_cast<std::size_t>(cfg.epochs);
  const std::size_t P = head.params.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<double> grad(P), m1, m2;
  if (cfg.optimizer == Optimizer::adam_w) {
    m1.assign(P, 0.0);
    m2.assign(P, 0.0);
  }

  TrainResult result;
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      std::fill(grad.begin(), grad.end(), 0.0);
      const std::size_t lo = b * batch, hi = std::min(n, lo + batch);
      double batch_loss = 0.0;
      for (std::size_t k = lo; k < hi; ++k) {
        const auto& pair = data[order[k]];
        double fp = detail::forward(head, pair.plus, nullptr);
        double fm = detail::forward(head, pair.minus, nullptr);
        double loss = margin_ranking_loss(fp, fm, cfg.margin);
        batch_loss += loss;
        if (cfg.margin - (fp - fm) > 0.0) {
          detail::accumulate_score_gradient(head, pair.minus, 1.0, grad);
          detail::accumulate_score_gradient(head, pair.plus, -1.0, grad);
        }
      }
      const double count = static_cast<double>(hi - lo);
      if (!std::isfinite(batch_loss))
        throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(b),
                            std::to_string(epoch) + ":" + std::to_string(b));
      epoch_loss += batch_loss;
      const double lr = learning_rate_at(cfg, step, total_steps);
      ++step;
      if (cfg.optimizer == Optimizer::sgd) {
        for (std::size_t i = 0; i < P; ++i) {
          double g = grad[i] / count;
          head.params[i] -= lr * (g + cfg.weight_decay * head.params[i]);
        }
      } else {
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < P; ++i) {
          double g = grad[i] / count;
          m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g;
          m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g * g;
          double update = (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg.adam_eps);
          head.params[i] -= lr * (update + cfg.weight_decay * head.params[i]);
        }
      }
      for (double x : head.params) {
        if (!std::isfinite(x))
          throw NonFiniteLoss("parameters diverged at epoch " + std::to_string(epoch) +
                                  ", batch " + std::to_string(b),
                              std::to_string(epoch) + ":" + std::to_string(b));
      }
    }
    epoch_loss /= static_cast<double>(n);
    result.epoch_losses.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  result.head = std::move(head);
  return result;
}

inline TrainResult train_scorer(const std::vector<PreferencePair>& pairs, Featurizer& fz,
                                const TrainConfig& cfg,
                                std::optional<ScorerHead> initial = std::nullopt,
                                const std::function<void(int, double)>& on_epoch = {}) {
  if (pairs.empty()) throw EmptyDataset("no preference pairs to train on");
  std::vector<FeaturePair> data;
  data.reserve(pairs.size());
  for (const auto& p : pairs) {
    data.push_back({featurize_side(p.question, p.chosen, fz, cfg.max_length),
                    featurize_side(p.question, p.rejected, fz, cfg.max_length)});
  }
  return train_on_features(data, fz.dim(), cfg, std::move(initial), on_epoch);
}

// ---------------------------------------------------------------------------
// Scoring interface and ranking

struct ScorerInput {
  std::string question;
  std::string answer;
  std::vector<std::string> facts;
  std::string reasoning;
};

inline ScorerInput make_scorer_input(const agent::Question& q, const agent::AnswerCandidate& a,
                                     const compress::CompressedTrajectory& ct) {
  return {q.text, a.text, ct.useful_facts, ct.reasoning};
}

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual double score(const ScorerInput& in) = 0;
  std::size_t calls() const { return calls_.load(); }

 protected:
  std::atomic<std::size_t> calls_{0};
};

/// Featurizer + head, the in-process scorer.
class LocalHeadScorer final : public Scorer {
 public:
  LocalHeadScorer(ScorerHead head, std::shared_ptr<Featurizer> fz,
                  int max_length = compress::kDefaultMaxLength)
      : head_(std::move(head)), fz_(std::move(fz)), max_length_(max_length) {}

  double score(const ScorerInput& in) override {
    ++calls_;
    auto text = compress::render_scorer_input(in.question, in.answer, in.facts, in.reasoning,
                                              max_length_);
    return predict_score(head_, fz_->extract(text));
  }

  const ScorerHead& head() const { return head_; }

 private:
  ScorerHead head_;
  std::shared_ptr<Featurizer> fz_;
  int max_length_;
};

/// Client for the shared scoring protocol:
/// POST {question, answer, facts, reasoning} -> {score}.
class RemoteScorer final : public Scorer {
 public:
  RemoteScorer(std::shared_ptr<http::Transport> transport, std::string url,
               std::chrono::milliseconds timeout = std::chrono::milliseconds(60000))
      : transport_(std::move(transport)), url_(std::move(url)), timeout_(timeout) {}

  double score(const ScorerInput& in) override {
    ++calls_;
    http::Request req;
    req.url = url_;
    req.timeout = timeout_;
    req.headers.emplace_back("Content-Type", "application/json");
    req.body = nlohmann::json{{"question", in.question},
                              {"answer", in.answer},
                              {"facts", in.facts},
                              {"reasoning", in.reasoning}}
                   .dump();
    http::Response res;
    try {
      res = transport_->post(req);
    } catch (const http::TransportFailure& e) {
      throw TransportError(std::string("scorer unreachable: ") + e.what(), url_);
    }
    if (res.status != 200)
      throw BackendError("scorer returned HTTP " + std::to_string(res.status), res.body);
    try {
      auto j = nlohmann::json::parse(res.body);
      double s = j.at("score").get<double>();
      if (!std::isfinite(s)) throw ProtocolError("scorer returned a non-finite score", res.body);
      return s;
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError(std::string("malformed scorer response: ") + e.what(), res.body);
    }
  }

 private:
  std::shared_ptr<http::Transport> transport_;
  std::string url_;
  std::chrono::milliseconds timeout_;
};

struct RankedAnswer {
  std::string answer_id;
  double score = 0.0;
  int rank = 0;  // 1-based position after tie-breaking
  bool tie = false;

  bool operator==(const RankedAnswer&) const = default;
};

/// Descending by score; equal scores ordered by ascending id and flagged.
inline std::vector<RankedAnswer> rank_scored(std::vector<std::pair<std::string, double>> scored) {
  std::vector<RankedAnswer> out;
  out.reserve(scored.size());
  for (auto& [id, s] : scored) out.push_back({std::move(id), s, 0, false});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return text::id_less(a.answer_id, b.answer_id);
  });
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].rank = static_cast<int>(i) + 1;
    if ((i > 0 && out[i - 1].score == out[i].score) ||
        (i + 1 < out.size() && out[i + 1].score == out[i].score))
      out[i].tie = true;
  }
  return out;
}

inline std::vector<RankedAnswer> rank_answers(
    Scorer& scorer, const agent::Question& question,
    const std::vector<std::pair<agent::AnswerCandidate, compress::CompressedTrajectory>>& cands) {
  if (cands.empty()) throw std::invalid_argument("rank_answers: no candidates");
  std::vector<std::pair<std::string, double>> scored;
  for (const auto& [a, ct] : cands) scored.emplace_back(a.id, scorer.score(make_scorer_input(question, a, ct)));
  return rank_scored(std::move(scored));
}

// ---------------------------------------------------------------------------
// Checkpoint: "DIVAHEAD", u32 version, u8 arch, u8 featurizer kind,
// u8 normalized, u8 reserved, u64 dim, u64 hidden, u64 seed, u32 max_length,
// u64 n_params, n_params little-endian IEEE doubles.

struct Checkpoint {
  ScorerHead head;
  FeaturizerKind featurizer = FeaturizerKind::hashed_text;
  bool normalized = true;
  int max_length = compress::kDefaultMaxLength;

  bool operator==(const Checkpoint&) const = default;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  U u;
  std::memcpy(&u, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("truncated head checkpoint");
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    u |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  T value;
  std::memcpy(&value, &u, sizeof(T));
  return value;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out = "DIVAHEAD";
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint8_t>(out, c.head.architecture == Architecture::linear ? 0 : 1);
  detail::put_le<std::uint8_t>(out, c.featurizer == FeaturizerKind::hashed_text ? 0 : 1);
  detail::put_le<std::uint8_t>(out, c.normalized ? 1 : 0);
  detail::put_le<std::uint8_t>(out, 0);
  detail::put_le<std::uint64_t>(out, c.head.dim);
  detail::put_le<std::uint64_t>(out, c.head.hidden);
  detail::put_le<std::uint64_t>(out, c.head.seed);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.max_length));
  detail::put_le<std::uint64_t>(out, c.head.params.size());
  for (double x : c.head.params) detail::put_le<double>(out, x);
  return out;
}

inline Checkpoint deserialize_checkpoint(std::string_view in) {
  if (in.substr(0, 8) != "DIVAHEAD") throw IoError("not a head checkpoint");
  std::size_t pos = 8;
  auto version = detail::get_le<std::uint32_t>(in, pos);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.head.architecture = detail::get_le<std::uint8_t>(in, pos) == 0 ? Architecture::linear
                                                                   : Architecture::mlp1;
  c.featurizer = detail::get_le<std::uint8_t>(in, pos) == 0 ? FeaturizerKind::hashed_text
                                                            : FeaturizerKind::remote_embedding;
  c.normalized = detail::get_le<std::uint8_t>(in, pos) != 0;
  detail::get_le<std::uint8_t>(in, pos);
  c.head.dim = detail::get_le<std::uint64_t>(in, pos);
  c.head.hidden = detail::get_le<std::uint64_t>(in, pos);
  c.head.seed = detail::get_le<std::uint64_t>(in, pos);
  c.max_length = static_cast<int>(detail::get_le<std::uint32_t>(in, pos));
  auto n = detail::get_le<std::uint64_t>(in, pos);
  if (n != ScorerHead::param_count(c.head.architecture, c.head.dim, c.head.hidden))
    throw IoError("checkpoint parameter count does not match its architecture");
  c.head.params.resize(n);
  for (auto& x : c.head.params) x = detail::get_le<double>(in, pos);
  if (pos != in.size()) throw IoError("trailing bytes in head checkpoint");
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  text::write_file(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(text::read_file(path));
}

}  // namespace diva::scorer
