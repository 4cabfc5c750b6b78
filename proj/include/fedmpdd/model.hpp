#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fedmpdd {

// Dense row-major matrix. Small enough helper that we do not pull in a
// linear-algebra dependency for two matrix-vector products.
struct RowMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  RowMatrix() = default;
  RowMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
  std::span<const double> row_span(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }
};

struct Batch {
  RowMatrix inputs;         // n x p
  std::vector<int> labels;  // class ids, length n
};

// Global parameter vector plus its dimension.
struct ModelState {
  std::vector<double> params;

  std::size_t dim() const { return params.size(); }
  static ModelState zeros(std::size_t d) { return ModelState{std::vector<double>(d, 0.0)}; }
};

// Differentiable classifier family. Parameter layouts (row-major):
//   logistic: [W (C x p), b (C)]                         d = C*(p+1)
//   mlp1:     [W1 (h x p), b1 (h), W2 (C x h), b2 (C)]   d = h*(p+1) + C*(h+1)
struct ModelKind {
  enum class Arch { kLogistic, kMlp1 };

  Arch arch = Arch::kLogistic;
  int classes = 2;
  int input_dim = 1;
  int hidden = 0;  // mlp1 only

  static ModelKind logistic(int classes, int input_dim) {
    return ModelKind{Arch::kLogistic, classes, input_dim, 0};
  }
  static ModelKind mlp1(int hidden, int classes, int input_dim) {
    return ModelKind{Arch::kMlp1, classes, input_dim, hidden};
  }

  std::size_t param_count() const {
    if (arch == Arch::kLogistic) {
      return static_cast<std::size_t>(classes) * (input_dim + 1);
    }
    return static_cast<std::size_t>(hidden) * (input_dim + 1) +
           static_cast<std::size_t>(classes) * (hidden + 1);
  }
};

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

struct Evaluation {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

// Mean cross-entropy over the batch and its exact analytic gradient.
LossGrad loss_and_grad(const ModelKind& model, const ModelState& state,
                       const Batch& batch);

// Same forward/backward path with per-sample target probability rows instead
// of integer labels (targets: n x C). The integer-label op is the one-hot
// special case; gradient-matching attacks need the soft form.
LossGrad loss_and_grad_soft(const ModelKind& model, const ModelState& state,
                            const RowMatrix& inputs, const RowMatrix& targets);

// Central-difference gradient of the batch loss, one coordinate at a time.
std::vector<double> finite_diff_grad(const ModelKind& model, const ModelState& state,
                                     const Batch& batch, double h);

// params - eta * estimate.
ModelState sgd_step(const ModelState& state, std::span<const double> estimate,
                    double eta);

// Mean loss and argmax accuracy over a labeled input matrix. Argmax ties
// break toward the lowest class index.
Evaluation evaluate(const ModelKind& model, const ModelState& state,
                    const RowMatrix& inputs, const std::vector<int>& labels);

// Class scores for a single input row; used by evaluate and the tests.
std::vector<double> forward_logits(const ModelKind& model, const ModelState& state,
                                   std::span<const double> input);

}  // namespace fedmpdd
