#include <catch2/catch_amalgamated.hpp>

#include "fedcp/kernel.hpp"

using namespace fedcp;

namespace {

// central finite difference on one coordinate of a scalar function
template <class F>
double fd(std::vector<double>& x, std::size_t i, F f, double h = 1e-5) {
  double save = x[i];
  x[i] = save + h;
  double up = f();
  x[i] = save - h;
  double dn = f();
  x[i] = save;
  return (up - dn) / (2 * h);
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

}  // namespace

TEST_CASE("matmul agrees with a hand computation") {
  Matrix A(2, 3), B(3, 2);
  for (int i = 0; i < 6; ++i) A.a[i] = i + 1;      // [[1,2,3],[4,5,6]]
  for (int i = 0; i < 6; ++i) B.a[i] = (i + 1) * 2;  // [[2,4],[6,8],[10,12]]
  Matrix C = matmul(A, B);
  REQUIRE(C.rows == 2);
  REQUIRE(C.cols == 2);
  CHECK(C(0, 0) == 44.0);   // 1*2+2*6+3*10
  CHECK(C(0, 1) == 56.0);
  CHECK(C(1, 0) == 98.0);
  CHECK(C(1, 1) == 128.0);
}

TEST_CASE("matmul shape mismatch throws") {
  Matrix A(2, 3), B(2, 2);
  CHECK_THROWS_AS(matmul(A, B), KernelError);
}

TEST_CASE("transpose products match explicit transposes") {
  Rng rng = make_rng(1);
  Matrix A = randn_matrix(rng, 4, 3), B = randn_matrix(rng, 4, 5);
  Matrix AtB = matmul_tn(A, B);  // (3x5)
  Matrix At(3, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) At(j, i) = A(i, j);
  CHECK(max_abs_diff(AtB.a, matmul(At, B).a) < 1e-14);

  Matrix C = randn_matrix(rng, 5, 3);
  Matrix ACt = matmul_nt(A.rows == 4 ? A : A, C);  // (4x5) = A * C^T
  Matrix Ct(3, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) Ct(j, i) = C(i, j);
  CHECK(max_abs_diff(ACt.a, matmul(A, Ct).a) < 1e-14);
}

TEST_CASE("affine forward/backward gradients check out") {
  Rng rng = make_rng(2);
  const int n = 5, d = 4, h = 3;
  Matrix X = randn_matrix(rng, n, d), W = randn_matrix(rng, d, h);
  Matrix dY = randn_matrix(rng, n, h);
  // loss = sum(Y .* dY) so dL/dY = dY exactly
  auto loss = [&] {
    Matrix Y = matmul(X, W);
    double s = 0;
    for (int i = 0; i < n * h; ++i) s += Y.a[i] * dY.a[i];
    return s;
  };
  Matrix dW(d, h), dX(n, d);
  affine_backward(X, W, dY, &dX, dW);
  for (std::size_t i : {std::size_t(0), std::size_t(5), std::size_t(11)}) {
    CHECK(rel_err(fd(W.a, i, loss), dW.a[i]) < 1e-6);
  }
  for (std::size_t i : {std::size_t(0), std::size_t(7), std::size_t(19)}) {
    CHECK(rel_err(fd(X.a, i, loss), dX.a[i]) < 1e-6);
  }
}

TEST_CASE("relu and sigmoid backward match finite differences") {
  Rng rng = make_rng(3);
  Matrix X = randn_matrix(rng, 3, 4), dY = randn_matrix(rng, 3, 4);
  {
    auto loss = [&] {
      Matrix Y = relu_forward(X);
      double s = 0;
      for (int i = 0; i < 12; ++i) s += Y.a[i] * dY.a[i];
      return s;
    };
    Matrix dX = relu_backward(X, dY);
    for (std::size_t i = 0; i < 12; ++i)
      if (std::abs(X.a[i]) > 1e-3)  // kink at 0 breaks FD, skip near it
        CHECK(rel_err(fd(X.a, i, loss), dX.a[i]) < 1e-6);
  }
  {
    auto loss = [&] {
      Matrix Y = sigmoid_forward(X);
      double s = 0;
      for (int i = 0; i < 12; ++i) s += Y.a[i] * dY.a[i];
      return s;
    };
    Matrix Y = sigmoid_forward(X);
    Matrix dX = sigmoid_backward_from_output(Y, dY);
    for (std::size_t i = 0; i < 12; ++i)
      CHECK(rel_err(fd(X.a, i, loss), dX.a[i]) < 1e-6);
  }
}

TEST_CASE("softmax cross-entropy: uniform logits give ln L and correct grads") {
  // two classes, zero logits: loss = ln 2
  Matrix z(1, 2);
  std::vector<int> y{0};
  SoftmaxXent out = softmax_xent(z, y);
  CHECK_THAT(out.loss, Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
  CHECK_THAT(out.probs(0, 0), Catch::Matchers::WithinAbs(0.5, 1e-12));

  Rng rng = make_rng(4);
  Matrix logits = randn_matrix(rng, 6, 5);
  std::vector<int> labels(6);
  for (auto& l : labels) l = rng.uniform_int(5);
  SoftmaxXent sx = softmax_xent(logits, labels);
  auto loss = [&] { return softmax_xent(logits, labels).loss; };
  for (std::size_t i = 0; i < 30; i += 7)
    CHECK(rel_err(fd(logits.a, i, loss), sx.dz.a[i]) < 1e-6);
}

TEST_CASE("adam first step moves each coordinate by about lr") {
  ParamVector p;
  p.register_param("w", 2, 2);
  p.fill(1.0);
  ParamVector g = p.zeros_like();
  for (auto& x : g.data()) x = 0.5;  // any nonzero grad
  AdamState st(p.size());
  adam_step(p, g, st);
  // bias-corrected first step = lr * g/|g| elementwise = 0.01
  for (double x : p.data()) CHECK_THAT(x, Catch::Matchers::WithinAbs(1.0 - 0.01, 1e-6));
}

TEST_CASE("adam rejects non-finite gradients naming the slice") {
  ParamVector p;
  p.register_param("enc", 2, 2);
  ParamVector g = p.zeros_like();
  g.data()[1] = std::numeric_limits<double>::quiet_NaN();
  AdamState st(p.size());
  CHECK_THROWS_AS(adam_step(p, g, st), OptimizerError);
  try {
    adam_step(p, g, st);
  } catch (const OptimizerError& e) {
    CHECK(std::string(e.what()).find("enc") != std::string::npos);
  }
}

TEST_CASE("param vector registry: layout, views, axpy") {
  ParamVector p;
  p.register_param("a", 2, 3);
  p.register_param("b", 3, 1);
  REQUIRE(p.size() == 9);
  CHECK_THROWS_AS(p.register_param("a", 1, 1), ModelError);  // duplicate name
  MutMat a = p.view("a");
  CHECK(a.rows == 2);
  CHECK(a.cols == 3);
  CHECK_THROWS_AS(p.view("missing"), ModelError);

  ParamVector q = p.zeros_like();
  CHECK(q.same_layout(p));
  p.fill(2.0);
  q.fill(3.0);
  q.axpy(0.5, p);  // q = 3 + 0.5*2 = 4
  for (double x : q.data()) CHECK(x == 4.0);
}

TEST_CASE("csr from triplets: sorted, deduplicated, spmm correct") {
  // duplicate entries merge by addition
  std::vector<std::tuple<int, int, double>> trip{
      {1, 0, 2.0}, {0, 1, 1.0}, {1, 0, 3.0}, {0, 0, 1.0}};
  SparseMatrix S = csr_from_triplets(2, 2, trip);
  REQUIRE(S.row_ptr.back() == 3);  // one duplicate merged
  Matrix X(2, 1);
  X.a = {1.0, 10.0};
  Matrix Y = spmm(S, X);
  CHECK(Y(0, 0) == 11.0);  // 1*1 + 1*10
  CHECK(Y(1, 0) == 5.0);   // (2+3)*1

  // spmm_t(S, X) == S^T X
  Matrix Z = spmm_t(S, X);
  CHECK(Z(0, 0) == 1.0 + 5.0 * 10.0);
  CHECK(Z(1, 0) == 1.0);
}

TEST_CASE("glorot init is deterministic per seed and bounded") {
  ParamVector p;
  p.register_param("w", 20, 30);
  Rng r1 = make_rng(9), r2 = make_rng(9);
  ParamVector q = p.zeros_like();
  glorot_init(p, "w", r1);
  glorot_init(q, "w", r2);
  CHECK(p.data() == q.data());
  double bound = std::sqrt(6.0 / (20 + 30));
  for (double x : p.data()) {
    CHECK(std::abs(x) <= bound + 1e-12);
  }
}
