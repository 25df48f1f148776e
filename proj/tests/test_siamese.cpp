#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "siamtl/gradcheck.hpp"
#include "siamtl/siamese.hpp"

using namespace siamtl;

namespace {

siamese_net small_net(std::uint64_t seed) {
  const std::size_t dims[] = {8, 4, 2};
  return make_siamese(8, dims, 2, seed);
}

std::vector<std::vector<double>> random_features(std::size_t n, std::size_t dim, rng& gen) {
  std::vector<std::vector<double>> out(n, std::vector<double>(dim, 0.0));
  for (auto& row : out)
    for (double& v : row) v = gen.uniform(-1.0, 1.0);
  return out;
}

// first half of the indices behave as one class, second half as the other
pair_batch balanced_batch(std::size_t n_samples, std::size_t n_pairs, rng& gen) {
  const std::size_t half = n_samples / 2;
  pair_batch batch;
  for (std::size_t k = 0; k < n_pairs / 2; ++k) {
    const bool lower = gen.below(2) == 0;
    const std::size_t base = lower ? 0 : half;
    const std::size_t a = base + gen.below(half);
    std::size_t b = base + gen.below(half - 1);
    if (b >= a) ++b;
    batch.pairs.push_back({a, b, true});
    batch.pairs.push_back({gen.below(half), half + gen.below(half), false});
  }
  return batch;
}


bool head_equal(const siamese_net& a, const siamese_net& b) {
  for (std::size_t l = a.extractor_layers; l < a.params.layers.size(); ++l) {
    if (std::memcmp(a.params.layers[l].weights.data.data(),
                    b.params.layers[l].weights.data.data(),
                    a.params.layers[l].weights.data.size() * sizeof(double)) != 0)
      return false;
    if (std::memcmp(a.params.layers[l].biases.data(), b.params.layers[l].biases.data(),
                    a.params.layers[l].biases.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("default topology matches the 64-64-32-16 + 16-1 layout") {
  const siamese_net net = make_default_siamese(7);
  REQUIRE(net.params.layers.size() == 5);
  REQUIRE(net.extractor_layers == 3);
  REQUIRE(net.input_dim() == 64);
  REQUIRE(net.params.layers[0].out_dim() == 64);
  REQUIRE(net.params.layers[1].out_dim() == 32);
  REQUIRE(net.params.layers[2].out_dim() == 16);
  REQUIRE(net.embedding_dim() == 16);
  REQUIRE(net.params.layers[3].out_dim() == 16);
  REQUIRE(net.params.layers[4].out_dim() == 1);
  REQUIRE(net.params.layers[4].act == activation::sigmoid);
}

TEST_CASE("extract of the zero network is the zero embedding") {
  siamese_net net = small_net(1);
  for (dense_layer& layer : net.params.layers) {
    for (double& w : layer.weights.data) w = 0.0;
    for (double& b : layer.biases) b = 0.0;
  }
  const std::vector<double> x = {1, -2, 3, 0.5, -1, 2, 0, 4};
  for (double e : extract(net, x)) REQUIRE(e == 0.0);
}

TEST_CASE("extract is deterministic") {
  const siamese_net net = small_net(2);
  const std::vector<double> x = {0.3, -0.1, 0.2, 0.9, -0.5, 0.1, 0.0, -0.7};
  REQUIRE(extract(net, x) == extract(net, x));
}

TEST_CASE("extract matches an independent three-matrix computation") {
  const siamese_net net = small_net(3);
  rng gen(4);
  std::vector<double> x(8);
  for (double& v : x) v = gen.uniform(-1, 1);

  std::vector<double> cur = x;
  for (std::size_t l = 0; l < net.extractor_layers; ++l) {
    const dense_layer& layer = net.params.layers[l];
    std::vector<double> next(layer.out_dim());
    for (std::size_t i = 0; i < layer.out_dim(); ++i) {
      double z = layer.biases[i];
      for (std::size_t j = 0; j < layer.in_dim(); ++j) z += layer.weights(i, j) * cur[j];
      next[i] = z > 0 ? z : 0;
    }
    cur = std::move(next);
  }

  const std::vector<double> embedding = extract(net, x);
  REQUIRE(embedding.size() == cur.size());
  for (std::size_t i = 0; i < cur.size(); ++i)
    REQUIRE(embedding[i] == Catch::Approx(cur[i]).margin(1e-12));
}

TEST_CASE("similarity is symmetric") {
  const siamese_net net = small_net(5);
  rng gen(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(8), b(8);
    for (double& v : a) v = gen.uniform(-2, 2);
    for (double& v : b) v = gen.uniform(-2, 2);
    REQUIRE(std::abs(similarity(net, a, b) - similarity(net, b, a)) <= 1e-12);
  }
}

TEST_CASE("similarity of a pair with itself through a zero head is one half") {
  siamese_net net = small_net(7);
  for (std::size_t l = net.extractor_layers; l < net.params.layers.size(); ++l) {
    for (double& w : net.params.layers[l].weights.data) w = 0.0;
    for (double& b : net.params.layers[l].biases) b = 0.0;
  }
  const std::vector<double> x = {0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8};
  REQUIRE(similarity(net, x, x) == Catch::Approx(0.5));
}

TEST_CASE("similarity stays inside the clamped range") {
  rng gen(8);
  for (int trial = 0; trial < 50; ++trial) {
    siamese_net net = small_net(gen.next_u64());
    // inflate the head so the sigmoid saturates for some inputs
    for (double& w : net.params.layers.back().weights.data) w *= 100.0;
    std::vector<double> a(8), b(8);
    for (double& v : a) v = gen.uniform(-3, 3);
    for (double& v : b) v = gen.uniform(-3, 3);
    const double p = similarity(net, a, b);
    REQUIRE(p >= probability_floor);
    REQUIRE(p <= 1.0 - probability_floor);
  }
}

TEST_CASE("bce_loss closed forms") {
  REQUIRE(bce_loss(0.5, 1) == Catch::Approx(std::log(2.0)));
  REQUIRE(bce_loss(0.9, 0) == Catch::Approx(2.302585).epsilon(1e-6));
  REQUIRE(bce_loss(1.0 - probability_floor, 1) == Catch::Approx(0.0).margin(2e-7));
  REQUIRE(bce_loss(probability_floor, 0) == Catch::Approx(0.0).margin(2e-7));
}

TEST_CASE("distance_loss substitution examples") {
  // same-pair distances 0, different-pair distances 2 -> (2+0)/(2-0) = 1
  std::vector<std::vector<double>> embeddings = {{1.0, 0.0}, {1.0, 0.0}, {3.0, 0.0}};
  pair_batch batch;
  batch.pairs = {{0, 1, true}, {0, 2, false}};
  REQUIRE(*distance_loss(embeddings, batch) == Catch::Approx(1.0));

  // S = 1, D = 3 -> (3+1)/(3-1) = 2
  embeddings = {{0.0, 0.0}, {1.0, 0.0}, {3.0, 0.0}};
  REQUIRE(*distance_loss(embeddings, batch) == Catch::Approx(2.0));
}

TEST_CASE("distance_loss is invariant to embedding scale") {
  rng gen(9);
  pair_batch batch = balanced_batch(10, 12, gen);
  std::vector<std::vector<double>> embeddings = random_features(10, 4, gen);
  for (std::size_t i = 5; i < 10; ++i) embeddings[i][0] += 1.5;  // keep D > S
  const auto base = distance_loss(embeddings, batch);
  REQUIRE(base.has_value());
  for (auto& e : embeddings)
    for (double& v : e) v *= 10.0;
  const auto scaled = distance_loss(embeddings, batch);
  REQUIRE(scaled.has_value());
  REQUIRE(std::abs(*scaled - *base) < 1e-9);
}

TEST_CASE("distance_loss signals a degenerate denominator when S equals D") {
  std::vector<std::vector<double>> embeddings = {{0.0}, {1.0}, {2.0}};
  pair_batch batch;
  batch.pairs = {{0, 1, true}, {1, 2, false}};  // S = D = 1
  REQUIRE_FALSE(distance_loss(embeddings, batch).has_value());
}

TEST_CASE("distance_loss rejects one-sided batches") {
  std::vector<std::vector<double>> embeddings = {{0.0}, {1.0}};
  pair_batch same_only;
  same_only.pairs = {{0, 1, true}};
  REQUIRE_THROWS_AS(distance_loss(embeddings, same_only), invalid_input_error);
  pair_batch diff_only;
  diff_only.pairs = {{0, 1, false}};
  REQUIRE_THROWS_AS(distance_loss(embeddings, diff_only), invalid_input_error);
}

TEST_CASE("distance_loss_grad leaves head blocks exactly zero") {
  const siamese_net net = small_net(10);
  rng gen(11);
  const auto features = random_features(10, 8, gen);
  const pair_batch batch = balanced_batch(10, 12, gen);
  const auto result = distance_loss_grad(net, features, batch);
  REQUIRE(result.has_value());
  for (std::size_t l = net.extractor_layers; l < net.params.layers.size(); ++l) {
    for (double v : result->grads[l].weights.data) REQUIRE(v == 0.0);
    for (double v : result->grads[l].biases) REQUIRE(v == 0.0);
  }
}

TEST_CASE("distance_loss_grad matches finite differences") {
  const gradcheck_instance inst = make_gradcheck_instance(12);
  const auto result = distance_loss_grad(inst.net, inst.features, inst.batch);
  REQUIRE(result.has_value());

  auto loss_of = [&](const network& params) {
    const siamese_net probe{params, inst.net.extractor_layers};
    std::vector<std::vector<double>> embeddings;
    embeddings.reserve(inst.features.size());
    for (const auto& f : inst.features) embeddings.push_back(extract(probe, f));
    return *distance_loss(embeddings, inst.batch);
  };
  const double err = finite_difference_check(loss_of, inst.net.params, result->grads, 1e-5);
  REQUIRE(err < 1e-4);
}

TEST_CASE("distance_loss_grad at the S = 0 boundary matches finite differences") {
  const siamese_net net = small_net(14);
  rng gen(15);
  auto features = random_features(8, 8, gen);
  // same-class pairs duplicate one sample so S stays 0 under perturbation
  pair_batch batch;
  batch.pairs = {{0, 0, true}, {1, 1, true}, {0, 4, false}, {1, 5, false}, {2, 6, false}};
  const auto result = distance_loss_grad(net, features, batch);
  REQUIRE(result.has_value());
  REQUIRE(result->stats.same_mean == 0.0);
  REQUIRE(result->loss == Catch::Approx(1.0));

  auto loss_of = [&](const network& params) {
    const siamese_net probe{params, net.extractor_layers};
    std::vector<std::vector<double>> embeddings;
    embeddings.reserve(features.size());
    for (const auto& f : features) embeddings.push_back(extract(probe, f));
    return *distance_loss(embeddings, batch);
  };
  const double err = finite_difference_check(loss_of, net.params, result->grads, 1e-5);
  REQUIRE(err < 1e-4);
}

TEST_CASE("bce gradients match finite differences") {
  const gradcheck_instance inst = make_gradcheck_instance(16);
  const bce_batch_result result = bce_batch_gradient(inst.net, inst.features, inst.batch);

  auto loss_of = [&](const network& params) {
    const siamese_net probe{params, inst.net.extractor_layers};
    return bce_batch_loss(probe, inst.features, inst.batch);
  };
  const double err = finite_difference_check(loss_of, inst.net.params, result.grads, 1e-5);
  REQUIRE(err < 1e-4);

  REQUIRE(result.loss == Catch::Approx(bce_batch_loss(inst.net, inst.features, inst.batch)));
}

TEST_CASE("gradient fidelity holds across randomly sampled small networks") {
  for (std::uint64_t seed : {100, 200, 300, 400, 500}) {
    const gradcheck_instance inst = make_gradcheck_instance(seed);
    const bce_batch_result bce = bce_batch_gradient(inst.net, inst.features, inst.batch);
    const double bce_err = finite_difference_check(
        [&](const network& params) {
          const siamese_net probe{params, inst.net.extractor_layers};
          return bce_batch_loss(probe, inst.features, inst.batch);
        },
        inst.net.params, bce.grads, 1e-5);
    REQUIRE(bce_err < 1e-4);

    const auto dist = distance_loss_grad(inst.net, inst.features, inst.batch);
    REQUIRE(dist.has_value());
    const double dist_err = finite_difference_check(
        [&](const network& params) {
          const siamese_net probe{params, inst.net.extractor_layers};
          std::vector<std::vector<double>> embeddings;
          for (const auto& f : inst.features) embeddings.push_back(extract(probe, f));
          return *distance_loss(embeddings, inst.batch);
        },
        inst.net.params, dist->grads, 1e-5);
    REQUIRE(dist_err < 1e-4);
  }
}

TEST_CASE("train_pair_batch without distance loss is a plain BCE step") {
  rng gen(18);
  const auto features = random_features(10, 8, gen);
  const pair_batch batch = balanced_batch(10, 8, gen);

  siamese_net a = small_net(19);
  siamese_net b = a;
  adam_state opt_a = make_adam(a.params);
  adam_state opt_b = make_adam(b.params);

  const batch_metrics metrics = train_pair_batch(a, features, batch, opt_a, {false, 0});
  const bce_batch_result manual = bce_batch_gradient(b, features, batch);
  apply_update(b.params, manual.grads, opt_b);

  REQUIRE(metrics.bce == Catch::Approx(manual.loss));
  for (std::size_t l = 0; l < a.params.layers.size(); ++l)
    REQUIRE(a.params.layers[l].weights.data == b.params.layers[l].weights.data);
}

TEST_CASE("train_pair_batch skips the distance step on degenerate batches") {
  rng gen(20);
  auto features = random_features(4, 8, gen);
  features[1] = features[0];  // same-class pair distance 0... and also make D = 0
  features[2] = features[0];
  features[3] = features[0];
  pair_batch batch;
  batch.pairs = {{0, 1, true}, {2, 3, false}};  // S = D = 0 -> degenerate

  siamese_net with_distance = small_net(21);
  siamese_net bce_only = with_distance;
  adam_state opt_a = make_adam(with_distance.params);
  adam_state dist_opt = make_adam(with_distance.params);
  adam_state opt_b = make_adam(bce_only.params);

  const batch_metrics metrics =
      train_pair_batch(with_distance, features, batch, opt_a, {true, 0}, &dist_opt);
  REQUIRE(metrics.distance_skipped);
  REQUIRE_FALSE(metrics.distance.has_value());

  train_pair_batch(bce_only, features, batch, opt_b, {false, 0});
  for (std::size_t l = 0; l < with_distance.params.layers.size(); ++l)
    REQUIRE(with_distance.params.layers[l].weights.data == bce_only.params.layers[l].weights.data);
}

TEST_CASE("the distance step never touches head parameters") {
  rng gen(22);
  const auto features = random_features(10, 8, gen);
  siamese_net net = small_net(23);
  adam_state opt = make_adam(net.params);
  int applied = 0;
  for (int step = 0; step < 100; ++step) {
    const pair_batch batch = balanced_batch(10, 12, gen);
    const siamese_net before = net;
    const auto result = distance_loss_grad(net, features, batch);
    if (!result) continue;
    apply_update(net.params, result->grads, opt, freeze_mask{0}, net.extractor_layers);
    ++applied;
    REQUIRE(head_equal(net, before));
  }
  REQUIRE(applied > 0);
}

TEST_CASE("a distance step reduces the distance loss on most batches") {
  rng gen(24);
  int improved = 0, tried = 0;
  adam_config cfg;
  cfg.learning_rate = 1e-3;
  for (int trial = 0; trial < 100; ++trial) {
    siamese_net net = small_net(gen.next_u64());
    const auto features = random_features(12, 8, gen);
    const pair_batch batch = balanced_batch(12, 16, gen);
    const auto before = distance_loss_grad(net, features, batch);
    if (!before) continue;
    ++tried;
    adam_state opt = make_adam(net.params, cfg);
    apply_update(net.params, before->grads, opt, freeze_mask{0}, net.extractor_layers);

    std::vector<std::vector<double>> embeddings;
    for (const auto& f : features) embeddings.push_back(extract(net, f));
    const auto after = distance_loss(embeddings, batch);
    if (after && *after <= before->loss) ++improved;
  }
  REQUIRE(tried >= 50);
  REQUIRE(improved >= (tried * 9) / 10);
}
