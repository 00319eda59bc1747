#include <doctest.h>

#include <vector>

#include "gradcheck.hpp"
#include "hsr/graph.hpp"
#include "hsr/model.hpp"
#include "hsr/rng.hpp"
#include "hsr/tensor.hpp"
#include "hsr/training.hpp"

using namespace hsr;
using namespace hsr::testing;

namespace {

Tensor<double> rnd(std::vector<Index> shape, std::uint64_t seed, double stddev = 1.0) {
  RngStream rng(seed);
  return random_tensor(std::move(shape), rng, stddev);
}

}  // namespace

TEST_CASE("gradcheck: matmul of a 5x4 by a 4x3 operand") {
  Tensor<double> a = rnd({5, 4}, 1);
  Tensor<double> b = rnd({4, 3}, 2);
  auto rep = op_gradcheck({&a, &b}, [](Graph<double>& g, std::span<const NodeId> in) {
    return g.matmul(in[0], in[1]);
  });
  CHECK(rep.coords == 32);
  CHECK(rep.max_rel_err < 1e-6);  // loss is linear in each coordinate
}

TEST_CASE("gradcheck: matmul_nt") {
  Tensor<double> a = rnd({3, 5}, 3);
  Tensor<double> b = rnd({4, 5}, 4);
  auto rep = op_gradcheck({&a, &b}, [](Graph<double>& g, std::span<const NodeId> in) {
    return g.matmul_nt(in[0], in[1]);
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: add and add_rowvec") {
  Tensor<double> x = rnd({3, 4}, 5);
  Tensor<double> y = rnd({3, 4}, 6);
  auto rep = op_gradcheck({&x, &y}, [](Graph<double>& g, std::span<const NodeId> in) {
    return g.add(in[0], in[1]);
  });
  CHECK(rep.max_rel_err < 1e-6);

  Tensor<double> v = rnd({1, 4}, 7);
  rep = op_gradcheck({&x, &v}, [](Graph<double>& g, std::span<const NodeId> in) {
    return g.add_rowvec(in[0], in[1]);
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: add_const / scale / cmul") {
  Tensor<double> x = rnd({3, 4}, 8);
  Tensor<double> c = rnd({3, 4}, 9);
  auto rep = op_gradcheck({&x}, [&c](Graph<double>& g, std::span<const NodeId> in) {
    return g.add_const(in[0], c);
  });
  CHECK(rep.max_rel_err < 1e-6);

  rep = op_gradcheck({&x}, [](Graph<double>& g, std::span<const NodeId> in) {
    return g.scale(in[0], -1.75);
  });
  CHECK(rep.max_rel_err < 1e-6);

  Tensor<double> y = rnd({3, 4}, 10);
  rep = op_gradcheck({&x, &y}, [](Graph<double>& g, std::span<const NodeId> in) {
    return g.cmul(in[0], in[1]);
  });
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("gradcheck: softmax_rows") {
  Tensor<double> x = rnd({4, 6}, 11, 2.0);
  auto rep = op_gradcheck({&x}, [](Graph<double>& g, std::span<const NodeId> in) {
    return g.softmax_rows(in[0]);
  });
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("gradcheck: gelu core region and far tails") {
  Tensor<double> core = Tensor<double>::row({-3.5, -2.0, -1.0, -0.3, 0.0, 0.4, 1.2, 2.5, 3.9});
  auto rep = op_gradcheck({&core}, [](Graph<double>& g, std::span<const NodeId> in) {
    return g.gelu(in[0]);
  });
  CHECK(rep.max_rel_err < 1e-4);

  Tensor<double> tail = Tensor<double>::row({-6.0, -5.0, -4.5, 4.5, 5.0, 6.0});
  rep = op_gradcheck({&tail}, [](Graph<double>& g, std::span<const NodeId> in) {
    return g.gelu(in[0]);
  });
  CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("gradcheck: layer_norm over input, gain, and bias") {
  Tensor<double> x = rnd({4, 8}, 12, 2.0);
  Tensor<double> gain = rnd({1, 8}, 13);
  Tensor<double> bias = rnd({1, 8}, 14);
  auto rep = op_gradcheck({&x, &gain, &bias}, [](Graph<double>& g, std::span<const NodeId> in) {
    return g.layer_norm(in[0], in[1], in[2]);
  });
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("gradcheck: dropout with a reseeded (fixed) mask") {
  Tensor<double> x = rnd({5, 6}, 15);
  auto rep = op_gradcheck({&x}, [](Graph<double>& g, std::span<const NodeId> in) {
    RngStream rng(909);  // same mask on every rebuild
    return g.dropout(in[0], 0.3, rng, true);
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: gather_rows scatter-adds duplicate indices") {
  Tensor<double> table = rnd({5, 3}, 16);
  auto rep = op_gradcheck({&table}, [](Graph<double>& g, std::span<const NodeId> in) {
    return g.gather_rows(in[0], {4, 0, 4, 2, 4});
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: slices and concat_cols") {
  Tensor<double> x = rnd({4, 6}, 17);
  auto rep = op_gradcheck({&x}, [](Graph<double>& g, std::span<const NodeId> in) {
    return g.slice_rows(in[0], 1, 2);
  });
  CHECK(rep.max_rel_err < 1e-6);

  rep = op_gradcheck({&x}, [](Graph<double>& g, std::span<const NodeId> in) {
    return g.slice_cols(in[0], 2, 3);
  });
  CHECK(rep.max_rel_err < 1e-6);

  Tensor<double> y = rnd({4, 2}, 18);
  rep = op_gradcheck({&x, &y}, [](Graph<double>& g, std::span<const NodeId> in) {
    std::vector<NodeId> parts{in[1], g.slice_cols(in[0], 0, 3), in[1]};
    return g.concat_cols(parts);
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: sum and masked_ce") {
  Tensor<double> x = rnd({3, 3}, 19);
  auto rep = op_gradcheck({&x}, [](Graph<double>& g, std::span<const NodeId> in) {
    return g.sum(in[0]);
  });
  CHECK(rep.max_rel_err < 1e-6);

  Tensor<double> logits = rnd({4, 7}, 20, 2.0);
  rep = op_gradcheck({&logits}, [](Graph<double>& g, std::span<const NodeId> in) {
    return g.masked_ce(in[0], {2, -1, 0, 6});
  });
  CHECK(rep.max_rel_err < 1e-4);
}

namespace {

// A deliberately small but fully populated model: 2 heads, 1 layer, every
// parameter tensor present, dropout off so the loss is deterministic.
ModelParams<double> tiny_model(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.head_hidden = 6;
  cfg.dropout = 0.0;
  cfg.l_max = 8;
  cfg.vocab_size = 9;
  ModelParams<double> params(cfg);
  RngStream rng(seed);
  params.init(rng);
  return params;
}

}  // namespace

TEST_CASE("gradcheck: end-to-end masked loss over every model parameter") {
  ModelParams<double> params = tiny_model(21);
  const std::vector<int> input{2, 5, 1, 6, 3, 1};
  const std::vector<int> labels{-1, -1, 2, -1, -1, 7};

  std::vector<Tensor<double>> sinks;
  std::vector<Tensor<double>*> handles;
  for_each_param(params, [&sinks](const std::string&, Tensor<double>& t) {
    sinks.push_back(Tensor<double>::zeros(t.shape()));
  });
  for_each_param(params,
                 [&handles](const std::string&, Tensor<double>& t) { handles.push_back(&t); });

  masked_sequence_pass<double>(params, sinks, input, labels, 1.0, false, nullptr);

  auto loss = [&]() {
    return masked_sequence_pass<double>(params, {}, input, labels, 0.0, false, nullptr).loss;
  };
  GradCheckReport rep = check_gradients(handles, sinks, loss);
  CHECK(rep.coords > 1000);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("gradcheck: per-sequence passes weighted by mask counts give the batch gradient") {
  ModelParams<double> params = tiny_model(22);
  // two sequences with 2 and 1 masked positions: weights 2/3 and 1/3
  const std::vector<std::vector<int>> inputs{{2, 1, 3, 1}, {4, 5, 2, 1}};
  const std::vector<std::vector<int>> labels{{-1, 5, -1, 6}, {-1, -1, -1, 8}};

  std::vector<Tensor<double>> sinks;
  std::vector<Tensor<double>*> handles;
  for_each_param(params, [&sinks](const std::string&, Tensor<double>& t) {
    sinks.push_back(Tensor<double>::zeros(t.shape()));
  });
  for_each_param(params,
                 [&handles](const std::string&, Tensor<double>& t) { handles.push_back(&t); });

  auto batch_loss = [&](std::span<Tensor<double>> grad_sinks) {
    double total = 0.0;
    const double weights[] = {2.0 / 3.0, 1.0 / 3.0};
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const double seed = grad_sinks.empty() ? 0.0 : weights[i];
      auto pass = masked_sequence_pass<double>(params, grad_sinks, inputs[i], labels[i],
                                               seed, false, nullptr);
      total += weights[i] * pass.loss;
    }
    return total;
  };

  batch_loss(sinks);  // analytic gradients of the weighted batch loss
  GradCheckReport rep = check_gradients(handles, sinks, [&]() { return batch_loss({}); });
  CHECK(rep.max_rel_err < 1e-4);
}
