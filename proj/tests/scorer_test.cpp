#include <gtest/gtest.h>

#include <cctype>
#include <cmath>

#include "support.hpp"

using namespace diva;
using namespace diva::scorer;
using testing_support::FakeTransport;
using testing_support::TempDir;

namespace {

std::uint64_t oracle_fnv(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::string> oracle_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : s + " ") {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  return out;
}

std::vector<double> oracle_features(const std::string& text, std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  auto t = oracle_tokens(text);
  for (std::size_t i = 0; i < t.size(); ++i) {
    v[oracle_fnv("u\x1f" + t[i]) % dim] += 1;
    if (i + 1 < t.size()) v[oracle_fnv("b\x1f" + t[i] + "\x1f" + t[i + 1]) % dim] += 1;
  }
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

FeatureVector random_sparse(std::mt19937_64& rng, std::size_t dim, int nnz) {
  std::vector<double> dense(dim, 0.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < nnz; ++k) dense[rng() % dim] = u(rng);
  return FeatureVector::from_dense(dense);
}

ScorerHead random_head(Architecture a, std::size_t d, std::size_t h, std::uint64_t seed) {
  auto head = ScorerHead::init(a, d, h, seed);
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& p : head.params) p = u(rng);
  return head;
}

}  // namespace

TEST(Featurizer, MatchesIndependentOracle) {
  HashedFeaturizer fz(64);
  for (std::string s : {"Question: Who? Answer: Rialto", "the the the bridge", "Ponte-Vecchio, Florence!"}) {
    auto got = fz.extract(s).dense();
    auto want = oracle_features(s, 64);
    for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(got[i], want[i], 1e-15) << s << " " << i;
  }
}

TEST(Featurizer, NormalizedAndDeterministic) {
  HashedFeaturizer fz;
  auto a = fz.extract("Rialto bridge Venice");
  EXPECT_EQ(a.dim, kHashedDim);
  double n = 0;
  for (double x : a.values) n += x * x;
  EXPECT_NEAR(n, 1.0, 1e-12);
  EXPECT_EQ(a, fz.extract("Rialto bridge Venice"));
  EXPECT_THROW(fz.extract("   "), std::invalid_argument);
}

TEST(Featurizer, SparseDotMatchesDense) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = random_sparse(rng, 40, 10), b = random_sparse(rng, 40, 10);
    auto da = a.dense(), db = b.dense();
    double want = 0;
    for (std::size_t i = 0; i < 40; ++i) want += da[i] * db[i];
    EXPECT_NEAR(dot(a, b), want, 1e-12);
  }
}

TEST(Head, LinearForwardIsDotPlusBias) {
  std::mt19937_64 rng(3);
  auto head = random_head(Architecture::linear, 30, 0, 11);
  auto v = random_sparse(rng, 30, 8);
  auto dv = v.dense();
  double want = head.params[30];
  for (std::size_t i = 0; i < 30; ++i) want += head.params[i] * dv[i];
  EXPECT_NEAR(predict_score(head, v), want, 1e-12);
}

TEST(Head, Mlp1ForwardMatchesDenseOracle) {
  std::mt19937_64 rng(4);
  const std::size_t d = 12, h = 5;
  auto head = random_head(Architecture::mlp1, d, h, 5);
  auto v = random_sparse(rng, d, 6);
  auto x = v.dense();
  const auto& p = head.params;
  double out = p[h * d + 2 * h];
  for (std::size_t j = 0; j < h; ++j) {
    double z = p[h * d + j];
    for (std::size_t i = 0; i < d; ++i) z += p[j * d + i] * x[i];
    out += p[h * d + h + j] * std::tanh(z);
  }
  EXPECT_NEAR(predict_score(head, v), out, 1e-12);
}

TEST(Head, InitBounds) {
  auto lin = ScorerHead::init(Architecture::linear, 10, 0, 1);
  for (double p : lin.params) EXPECT_EQ(p, 0.0);
  auto mlp = ScorerHead::init(Architecture::mlp1, 100, 4, 1);
  for (std::size_t i = 0; i < 404; ++i) EXPECT_LE(std::abs(mlp.params[i]), 0.1);
  for (std::size_t i = 404; i < mlp.params.size(); ++i) EXPECT_LE(std::abs(mlp.params[i]), 0.5);
  EXPECT_EQ(mlp, ScorerHead::init(Architecture::mlp1, 100, 4, 1));
  EXPECT_THROW(ScorerHead::init(Architecture::mlp1, 10, 0, 1), std::invalid_argument);
}

TEST(Head, DimensionMismatch) {
  auto head = ScorerHead::init(Architecture::linear, 10, 0, 1);
  EXPECT_THROW(predict_score(head, FeatureVector::from_dense(std::vector<double>(11, 1.0))), DimensionMismatch);
}

TEST(Hinge, Table) {
  struct Row {
    double fp, fm, m, want;
  } rows[] = {{1.0, 0.0, 0.1, 0.0}, {0.0, 0.0, 0.1, 0.1}, {0.0, 1.0, 0.1, 1.1},
              {0.05, 0.0, 0.1, 0.05}, {0.1, 0.0, 0.1, 0.0}, {-2.0, -2.5, 1.0, 0.5}};
  for (const auto& r : rows) EXPECT_NEAR(margin_ranking_loss(r.fp, r.fm, r.m), r.want, 1e-15);
}

TEST(Hinge, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (auto arch : {Architecture::linear, Architecture::mlp1}) {
    auto head = random_head(arch, 8, 3, 21);
    auto vp = random_sparse(rng, 8, 5), vm = random_sparse(rng, 8, 5);
    const double m = 5.0;  // keep the hinge active
    auto g = loss_gradient(head, vp, vm, m);
    for (std::size_t i = 0; i < head.params.size(); ++i) {
      auto hp = head, hm = head;
      const double eps = 1e-6;
      hp.params[i] += eps;
      hm.params[i] -= eps;
      double fd = (margin_ranking_loss(predict_score(hp, vp), predict_score(hp, vm), m) -
                   margin_ranking_loss(predict_score(hm, vp), predict_score(hm, vm), m)) /
                  (2 * eps);
      EXPECT_NEAR(g[i], fd, 1e-7) << "param " << i;
    }
  }
}

TEST(Hinge, InactiveBranchHasZeroGradient) {
  auto head = ScorerHead::init(Architecture::linear, 4, 0, 0);
  head.params = {1, 0, 0, 0, 0};
  auto vp = FeatureVector::from_dense({1, 0, 0, 0});
  auto vm = FeatureVector::from_dense({0, 1, 0, 0});
  for (double g : loss_gradient(head, vp, vm, 0.5)) EXPECT_EQ(g, 0.0);
  for (double g : loss_gradient(head, vp, vm, 1.0)) EXPECT_EQ(g, 0.0);  // exactly at the kink
}

TEST(Training, DeterministicAndLossDecreases) {
  std::mt19937_64 rng(1);
  std::vector<FeaturePair> data;
  for (int i = 0; i < 40; ++i) {
    std::vector<double> p(20, 0.0), n(20, 0.0);
    p[0] = 1.0;
    n[1] = 1.0;
    p[2 + rng() % 18] += 0.3;
    n[2 + rng() % 18] += 0.3;
    data.push_back({FeatureVector::from_dense(p), FeatureVector::from_dense(n)});
  }
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  auto a = train_on_features(data, 20, cfg);
  auto b = train_on_features(data, 20, cfg);
  EXPECT_EQ(a.head, b.head);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  EXPECT_LT(a.epoch_losses.back(), a.epoch_losses.front());
  cfg.seed = 43;
  cfg.architecture = Architecture::mlp1;
  cfg.hidden = 4;
  auto c = train_on_features(data, 20, cfg);
  EXPECT_NE(c.head.params, a.head.params);
}

TEST(Training, WarmStartAtZeroLossLeavesHeadUnchanged) {
  std::vector<FeaturePair> data{{FeatureVector::from_dense({1, 0}), FeatureVector::from_dense({0, 1})}};
  ScorerHead init{Architecture::linear, 2, 0, 0, {1.0, -1.0, 0.0}};
  TrainConfig cfg;
  cfg.epochs = 2;
  auto r = train_on_features(data, 2, cfg, init);
  EXPECT_EQ(r.head, init);
  EXPECT_EQ(r.epoch_losses, (std::vector<double>{0.0, 0.0}));
}

TEST(Training, ErrorsAndValidation) {
  TrainConfig cfg;
  EXPECT_THROW(train_on_features({}, 2, cfg), EmptyDataset);
  cfg.margin = 0;
  std::vector<FeaturePair> data{{FeatureVector::from_dense({1, 0}), FeatureVector::from_dense({0, 1})}};
  EXPECT_THROW(train_on_features(data, 2, cfg), std::invalid_argument);
  cfg = {};
  EXPECT_THROW(train_on_features(data, 3, cfg, ScorerHead::init(Architecture::linear, 2, 0, 0)), DimensionMismatch);
  cfg.learning_rate = 1e300;
  cfg.optimizer = Optimizer::sgd;
  data[0].plus = FeatureVector::from_dense({1e300, 0});
  EXPECT_THROW(train_on_features(data, 2, cfg), NonFiniteLoss);
}

TEST(Training, CosineSchedule) {
  TrainConfig cfg;
  cfg.learning_rate = 1.0;
  EXPECT_DOUBLE_EQ(learning_rate_at(cfg, 0, 10), 1.0);
  EXPECT_NEAR(learning_rate_at(cfg, 5, 10), 0.5, 1e-15);
  cfg.schedule = Schedule::constant;
  EXPECT_DOUBLE_EQ(learning_rate_at(cfg, 7, 10), 1.0);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  Checkpoint c{random_head(Architecture::mlp1, 6, 2, 3), FeaturizerKind::hashed_text, true, 512};
  auto bytes = serialize_checkpoint(c);
  EXPECT_EQ(bytes.substr(0, 8), "DIVAHEAD");
  EXPECT_EQ(deserialize_checkpoint(bytes), c);
  TempDir dir;
  save_checkpoint(dir.file("h.bin"), c);
  EXPECT_EQ(load_checkpoint(dir.file("h.bin")), c);
  EXPECT_THROW(deserialize_checkpoint("NOTAHEAD"), IoError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), IoError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), IoError);
  auto bad_version = bytes;
  bad_version[8] = 9;
  EXPECT_THROW(deserialize_checkpoint(bad_version), IoError);
}

TEST(Ranking, TiesOrderedByIdAndFlagged) {
  auto r = rank_scored({{"3", 0.5}, {"1", 0.9}, {"2", 0.5}, {"10", 0.1}});
  ASSERT_EQ(r.size(), 4u);
  EXPECT_EQ(r[0], (RankedAnswer{"1", 0.9, 1, false}));
  EXPECT_EQ(r[1], (RankedAnswer{"2", 0.5, 2, true}));
  EXPECT_EQ(r[2], (RankedAnswer{"3", 0.5, 3, true}));
  EXPECT_EQ(r[3], (RankedAnswer{"10", 0.1, 4, false}));
}

TEST(RemoteScorer, SpeaksProtocolAgainstStub) {
  std::atomic<int> hits{0};
  auto server = testing_support::scripted_scorer({{"Rialto", 0.8}}, 0.1, &hits);
  RemoteScorer sc(std::make_shared<http::HttplibTransport>(), server->url("/score"));
  EXPECT_DOUBLE_EQ(sc.score({"Q", "Rialto", {"f"}, "r"}), 0.8);
  EXPECT_DOUBLE_EQ(sc.score({"Q", "Other", {}, "r"}), 0.1);
  EXPECT_EQ(hits.load(), 2);
  EXPECT_EQ(sc.calls(), 2u);
}

TEST(RemoteScorer, RequestBodyAndErrorMapping) {
  int status = 200;
  std::string body = R"({"score": 0.25})";
  auto t = std::make_shared<FakeTransport>([&](const http::Request&) { return http::Response{status, body}; });
  RemoteScorer sc(t, "http://scorer.test/score");
  EXPECT_DOUBLE_EQ(sc.score({"Q", "A", {"f1", "f2"}, "R"}), 0.25);
  auto j = nlohmann::json::parse(t->requests().at(0).body);
  EXPECT_EQ(j, (nlohmann::json{{"question", "Q"}, {"answer", "A"}, {"facts", {"f1", "f2"}}, {"reasoning", "R"}}));
  body = R"({"nope": 1})";
  EXPECT_THROW(sc.score({"Q", "A", {}, "R"}), ProtocolError);
  status = 500;
  EXPECT_THROW(sc.score({"Q", "A", {}, "R"}), BackendError);
}

TEST(RemoteEmbedding, CachesAndChecksDimension) {
  int dim = 3;
  auto t = std::make_shared<FakeTransport>([&](const http::Request&) {
    std::vector<double> e(dim, 1.0);
    return http::Response{200, nlohmann::json{{"data", {{{"embedding", e}}}}}.dump()};
  });
  RemoteEmbeddingFeaturizer fz(t, "http://emb.test", "m");
  auto v = fz.extract("hello");
  EXPECT_EQ(v.dim, 3u);
  EXPECT_NEAR(v.values[0], 1.0 / std::sqrt(3.0), 1e-15);
  fz.extract("hello");
  EXPECT_EQ(t->count(), 1u);
  dim = 4;
  EXPECT_THROW(fz.extract("other"), EmbeddingProviderError);
}

TEST(LocalHeadScorer, ScoresRenderedInput) {
  auto fz = std::make_shared<HashedFeaturizer>(32);
  auto head = random_head(Architecture::linear, 32, 0, 2);
  LocalHeadScorer sc(head, fz);
  ScorerInput in{"Q?", "A", {"f"}, "R"};
  double want = predict_score(head, fz->extract(compress::render_scorer_input("Q?", "A", {"f"}, "R")));
  EXPECT_DOUBLE_EQ(sc.score(in), want);
  EXPECT_EQ(sc.calls(), 1u);
}
