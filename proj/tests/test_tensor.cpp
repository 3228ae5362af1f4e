#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "roadgnn/optim.hpp"
#include "roadgnn/tensor.hpp"
#include "testutil.hpp"

using namespace roadgnn;
using ad::Mat;
using ad::Var;

namespace {

// Weighted-sum loss makes per-element output gradients distinct.
Var weighted(Var x, std::uint64_t seed) {
  return ad::sum_all(ad::mul(x, ad::constant(testutil::random_mat(x.rows(), x.cols(), seed))));
}

double op_fd(const std::function<Var(std::vector<Var>&)>& build, std::vector<Mat> inputs) {
  std::vector<Var> leaves;
  for (auto& m : inputs) leaves.push_back(Var::leaf(m, true));
  std::vector<testutil::FdTarget> targets;
  for (std::size_t i = 0; i < leaves.size(); ++i)
    targets.push_back({"in" + std::to_string(i), leaves[i]});
  return testutil::finite_difference_max_rel_err(
      [&]() { return build(leaves); }, targets);
}

}  // namespace

TEST_CASE("forward values: analytic cases") {
  SUBCASE("softmax of equal logits is 1/n") {
    Var x = ad::constant(Mat::full(2, 5, 0.7));
    const Mat y = ad::softmax(x, 1).value();
    for (double v : y.a) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("softmax rows sum to 1 within 1e-12") {
    Var x = ad::constant(testutil::random_mat(7, 9, 3, -4, 4));
    const Mat y = ad::softmax(x, 1).value();
    for (int i = 0; i < y.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < y.cols; ++j) s += y.at(i, j);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
  SUBCASE("l2_normalize of [3,4] is [0.6,0.8]") {
    Var x = ad::constant(Mat::row({3, 4}));
    const Mat y = ad::l2_normalize_rows(x).value();
    CHECK(y.at(0, 0) == doctest::Approx(0.6));
    CHECK(y.at(0, 1) == doctest::Approx(0.8));
  }
  SUBCASE("cross entropy of uniform logits over 5 classes is ln 5") {
    Var logits = ad::constant(Mat::zeros(4, 5));
    const double loss = ad::cross_entropy(logits, {0, 1, 2, 3}).scalar();
    CHECK(loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }
  SUBCASE("matmul identity") {
    Var a = ad::constant(testutil::random_mat(4, 4, 5));
    const Mat y = ad::matmul(a, ad::constant(Mat::identity(4))).value();
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.a[i] == a.value().a[i]);
  }
}

TEST_CASE("backward: analytic cases") {
  SUBCASE("d sum(W) / dW is all ones") {
    Var w = Var::leaf(testutil::random_mat(3, 4, 7), true);
    ad::backward(ad::sum_all(w));
    for (double g : w.grad().a) CHECK(g == 1.0);
  }
  SUBCASE("d sigmoid(0) = 0.25") {
    Var w = Var::leaf(Mat::zeros(1, 1), true);
    ad::backward(ad::sigmoid(w));
    CHECK(w.grad().a[0] == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("three-layer composite passes finite differences") {
    Var w1 = Var::leaf(testutil::random_mat(4, 6, 11), true);
    Var w2 = Var::leaf(testutil::random_mat(6, 3, 12), true);
    Var b = Var::leaf(testutil::random_mat(1, 3, 13), true);
    Var x = Var::leaf(testutil::random_mat(5, 4, 14), true);
    auto loss_fn = [&]() {
      Var h = ad::elu(ad::matmul(x, w1));
      Var o = ad::sigmoid(ad::add_rowvec(ad::matmul(h, w2), b));
      return weighted(ad::l2_normalize_rows(o), 21);
    };
    const double err = testutil::finite_difference_max_rel_err(
        loss_fn, {{"w1", w1}, {"w2", w2}, {"b", b}, {"x", x}});
    CHECK(err < 1e-4);
  }
  SUBCASE("backward rejects non-scalar loss") {
    Var w = Var::leaf(Mat::zeros(2, 2), true);
    CHECK_THROWS_AS(ad::backward(ad::scale(w, 2.0)), Error);
  }
}

TEST_CASE("every differentiable op passes finite differences on random shapes") {
  struct Case {
    const char* name;
    std::function<double()> run;
  };
  auto rm = [](int r, int c, std::uint64_t s) { return testutil::random_mat(r, c, s); };
  const std::vector<Case> cases = {
      {"matmul", [&] { return op_fd([](auto& v) { return ad::sum_all(ad::matmul(v[0], v[1])); },
                                    {rm(5, 7, 1), rm(7, 3, 2)}); }},
      {"add", [&] { return op_fd([](auto& v) { return weighted(ad::add(v[0], v[1]), 9); },
                                 {rm(6, 4, 3), rm(6, 4, 4)}); }},
      {"sub", [&] { return op_fd([](auto& v) { return weighted(ad::sub(v[0], v[1]), 9); },
                                 {rm(6, 4, 5), rm(6, 4, 6)}); }},
      {"add_rowvec", [&] { return op_fd([](auto& v) { return weighted(ad::add_rowvec(v[0], v[1]), 9); },
                                        {rm(6, 4, 7), rm(1, 4, 8)}); }},
      {"scale", [&] { return op_fd([](auto& v) { return weighted(ad::scale(v[0], -1.7), 9); },
                                   {rm(5, 5, 9)}); }},
      {"mul", [&] { return op_fd([](auto& v) { return weighted(ad::mul(v[0], v[1]), 9); },
                                 {rm(4, 6, 10), rm(4, 6, 11)}); }},
      {"mul_colvec", [&] { return op_fd([](auto& v) { return weighted(ad::mul_colvec(v[0], v[1]), 9); },
                                        {rm(5, 3, 12), rm(5, 1, 13)}); }},
      {"mul_scalar", [&] { return op_fd([](auto& v) { return weighted(ad::mul_scalar(v[0], v[1]), 9); },
                                        {rm(4, 4, 14), rm(1, 1, 15)}); }},
      {"concat_cols", [&] { return op_fd([](auto& v) { return weighted(ad::concat_cols(v[0], v[1]), 9); },
                                         {rm(5, 2, 16), rm(5, 4, 17)}); }},
      {"slice_cols", [&] { return op_fd([](auto& v) { return weighted(ad::slice_cols(v[0], 1, 4), 9); },
                                        {rm(5, 6, 18)}); }},
      {"repeat_rows", [&] { return op_fd([](auto& v) { return weighted(ad::repeat_rows(v[0], 3), 9); },
                                         {rm(4, 3, 19)}); }},
      {"group_prepend", [&] { return op_fd([](auto& v) { return weighted(ad::group_prepend(v[0], v[1], 3), 9); },
                                           {rm(4, 3, 20), rm(12, 3, 21)}); }},
      {"gather_rows", [&] { return op_fd([](auto& v) {
                              return weighted(ad::gather_rows(v[0], {0, 2, 2, 1}), 9);
                            },
                            {rm(4, 5, 22)}); }},
      {"group_sum", [&] { return op_fd([](auto& v) { return weighted(ad::group_sum(v[0], 4), 9); },
                                       {rm(12, 3, 23)}); }},
      {"group_mean", [&] { return op_fd([](auto& v) { return weighted(ad::group_mean(v[0], 4), 9); },
                                        {rm(12, 3, 24)}); }},
      {"group_max", [&] { return op_fd([](auto& v) { return weighted(ad::group_max(v[0], 4), 9); },
                                       {rm(12, 3, 25)}); }},
      {"group_softmax", [&] { return op_fd([](auto& v) { return weighted(ad::group_softmax(v[0], 4), 9); },
                                           {rm(12, 1, 26)}); }},
      {"softmax0", [&] { return op_fd([](auto& v) { return weighted(ad::softmax(v[0], 0), 9); },
                                      {rm(6, 4, 27)}); }},
      {"softmax1", [&] { return op_fd([](auto& v) { return weighted(ad::softmax(v[0], 1), 9); },
                                      {rm(6, 4, 28)}); }},
      {"sum_axis0", [&] { return op_fd([](auto& v) { return weighted(ad::sum_axis(v[0], 0), 9); },
                                       {rm(6, 4, 29)}); }},
      {"mean_axis1", [&] { return op_fd([](auto& v) { return weighted(ad::mean_axis(v[0], 1), 9); },
                                        {rm(6, 4, 30)}); }},
      {"max_axis0", [&] { return op_fd([](auto& v) { return weighted(ad::max_axis(v[0], 0), 9); },
                                       {rm(6, 4, 31)}); }},
      {"max_axis1", [&] { return op_fd([](auto& v) { return weighted(ad::max_axis(v[0], 1), 9); },
                                       {rm(6, 4, 32)}); }},
      {"sigmoid", [&] { return op_fd([](auto& v) { return weighted(ad::sigmoid(v[0]), 9); },
                                     {rm(8, 8, 33)}); }},
      {"tanh", [&] { return op_fd([](auto& v) { return weighted(ad::tanh_op(v[0]), 9); },
                                  {rm(8, 8, 34)}); }},
      {"elu", [&] { return op_fd([](auto& v) { return weighted(ad::elu(v[0]), 9); },
                                 {rm(8, 8, 35)}); }},
      {"leaky_relu", [&] { return op_fd([](auto& v) { return weighted(ad::leaky_relu(v[0]), 9); },
                                        {rm(8, 8, 36)}); }},
      {"log", [&] { return op_fd([](auto& v) { return weighted(ad::log_op(v[0]), 9); },
                                 {testutil::random_mat(6, 6, 37, 0.5, 2.0)}); }},
      {"clamp_inactive", [&] { return op_fd([](auto& v) { return weighted(ad::clamp(v[0], -50, 50), 9); },
                                            {rm(6, 6, 38)}); }},
      {"l2_normalize", [&] { return op_fd([](auto& v) { return weighted(ad::l2_normalize_rows(v[0]), 9); },
                                          {rm(6, 5, 39)}); }},
      {"rowwise_dot", [&] { return op_fd([](auto& v) { return weighted(ad::rowwise_dot(v[0], v[1]), 9); },
                                         {rm(7, 4, 40), rm(7, 4, 41)}); }},
      {"cross_entropy", [&] { return op_fd([](auto& v) {
                                return ad::cross_entropy(v[0], {0, 3, -1, 2, 4, 1});
                              },
                              {rm(6, 5, 42)}); }},
      {"dropout", [&] { return op_fd([](auto& v) {
                          SplitMix64 rng(77);
                          return weighted(ad::dropout(v[0], 0.3, rng), 9);
                        },
                        {rm(8, 8, 43)}); }},
      {"larger shapes", [&] { return op_fd([](auto& v) {
                                return weighted(ad::sigmoid(ad::matmul(v[0], v[1])), 9);
                              },
                              {rm(32, 32, 44), rm(32, 32, 45)}); }},
  };
  for (const auto& c : cases) {
    INFO(c.name);
    CHECK(c.run() < 1e-4);
  }
}

TEST_CASE("dropout semantics") {
  SUBCASE("rate 0 is the identity node") {
    Var x = Var::leaf(testutil::random_mat(4, 4, 1), true);
    SplitMix64 rng(1);
    Var y = ad::dropout(x, 0.0, rng);
    CHECK(y.node().get() == x.node().get());
  }
  SUBCASE("survivors scaled by 1/(1-rate), zero fraction near rate") {
    Var x = ad::constant(Mat::full(200, 200, 1.0));
    SplitMix64 rng(5);
    const Mat y = ad::dropout(x, 0.25, rng).value();
    long zeros = 0;
    for (double v : y.a) {
      if (v == 0.0)
        ++zeros;
      else
        CHECK(v == doctest::Approx(1.0 / 0.75).epsilon(1e-12));
    }
    const double frac = static_cast<double>(zeros) / static_cast<double>(y.size());
    CHECK(std::abs(frac - 0.25) < 0.01);
  }
}

TEST_CASE("clamp counts activations and passes gradients through the interior") {
  std::size_t hits = 0;
  Var x = ad::constant(Mat::row({-2.0, 0.5, 3.0}));
  const Mat y = ad::clamp(x, -1.0, 1.0, &hits).value();
  CHECK(hits == 2);
  CHECK(y.a[0] == -1.0);
  CHECK(y.a[1] == 0.5);
  CHECK(y.a[2] == 1.0);
}

TEST_CASE("shape errors and traps") {
  Var a = ad::constant(Mat::zeros(2, 3));
  Var b = ad::constant(Mat::zeros(3, 3));
  CHECK_THROWS_AS(ad::add(a, b), Error);
  CHECK_THROWS_AS(ad::matmul(a, a), Error);
  CHECK_THROWS_AS(ad::group_sum(a, 4), Error);
  CHECK_THROWS_AS(ad::softmax(ad::constant(Mat::zeros(0, 4)), 1), Error);
  // log(0) -> -inf is trapped by the finiteness check.
  CHECK_THROWS_AS(ad::log_op(ad::constant(Mat::zeros(1, 1))), Error);
}

TEST_CASE("adam optimizer") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ad::ParamStore store;
    Var w = store.create("w", testutil::random_mat(3, 3, 4));
    const Mat before = w.value();
    store.zero_grad();
    store.adam_step(0.05);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(w.value().a[i] == before.a[i]);
  }
  SUBCASE("first step with unit gradient moves by ~ -lr") {
    ad::ParamStore store;
    Var w = store.create("w", Mat::zeros(1, 1));
    w.grad().a[0] = 1.0;
    store.adam_step(0.01);
    CHECK(w.value().a[0] == doctest::Approx(-0.01).epsilon(1e-6));
  }
  SUBCASE("constant gradient: step size approaches lr * sign(g)") {
    ad::ParamStore store;
    Var w = store.create("w", Mat::zeros(1, 1));
    const double lr = 0.003;
    double prev = 0.0;
    double step = 0.0;
    for (int i = 0; i < 500; ++i) {
      w.grad().a[0] = 2.5;  // constant positive gradient
      store.adam_step(lr);
      step = prev - w.value().a[0];
      prev = w.value().a[0];
    }
    CHECK(step == doctest::Approx(lr).epsilon(1e-6));
  }
}

TEST_CASE("init_params") {
  SUBCASE("zeros") {
    const Mat m = ad::init_params(4, 5, ad::InitScheme::Zeros, 1);
    for (double v : m.a) CHECK(v == 0.0);
  }
  SUBCASE("constant") {
    const Mat m = ad::init_params(2, 2, ad::InitScheme::Constant, 0, 0.5);
    for (double v : m.a) CHECK(v == 0.5);
  }
  SUBCASE("glorot bound and near-zero mean") {
    const int rows = 100, cols = 100;  // 1e4 per draw; 100 seeds -> 1e6 samples
    const double bound = std::sqrt(6.0 / (rows + cols));
    double sum = 0.0;
    long n = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const Mat m = ad::init_params(rows, cols, ad::InitScheme::GlorotUniform, seed);
      for (double v : m.a) {
        CHECK(std::abs(v) <= bound);
        sum += v;
        ++n;
      }
    }
    const double mean = sum / static_cast<double>(n);
    const double sigma_mean = bound / std::sqrt(3.0 * static_cast<double>(n));
    CHECK(std::abs(mean) < 3.0 * sigma_mean);
  }
}

TEST_CASE("determinism: same seed gives bitwise-identical forward and backward") {
  auto run = [](std::uint64_t seed) {
    ad::ParamStore store;
    Var w = store.create("w", ad::init_params(6, 6, ad::InitScheme::GlorotUniform, seed));
    Var x = ad::constant(testutil::random_mat(4, 6, seed + 1));
    SplitMix64 rng(seed + 2);
    Var y = ad::sum_all(ad::dropout(ad::sigmoid(ad::matmul(x, w)), 0.2, rng));
    store.zero_grad();
    ad::backward(y);
    return std::make_pair(y.scalar(), w.grad().a);
  };
  const auto a = run(12);
  const auto b = run(12);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("param store checkpoints") {
  ad::ParamStore store;
  store.create("a/W", testutil::random_mat(3, 4, 1));
  store.create("b", testutil::random_mat(1, 4, 2));
  const auto j = store.to_json();
  ad::ParamStore back = ad::ParamStore::from_json(j);
  CHECK(back.at("a/W").value().a == store.at("a/W").value().a);
  ad::ParamStore target;
  target.create("a/W", Mat::zeros(3, 4));
  target.create("b", Mat::zeros(1, 4));
  target.restore_values(back);
  CHECK(target.at("b").value().a == store.at("b").value().a);
  ad::ParamStore missing;
  missing.create("not-there", Mat::zeros(1, 1));
  CHECK_THROWS_AS(missing.restore_values(store), Error);
}
