#include "fedmpdd/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedmpdd {
namespace {

void check_inputs(const ModelKind& model, const ModelState& state,
                  const RowMatrix& inputs) {
  if (state.dim() != model.param_count()) {
    throw std::invalid_argument("model: state dimension does not match parameter count");
  }
  if (inputs.rows == 0) throw std::invalid_argument("model: empty batch");
  if (inputs.cols != static_cast<std::size_t>(model.input_dim)) {
    throw std::invalid_argument("model: input width does not match model input_dim");
  }
}

void check_labels(const ModelKind& model, const std::vector<int>& labels,
                  std::size_t rows) {
  if (labels.size() != rows) throw std::invalid_argument("model: label count does not match batch");
  for (int y : labels) {
    if (y < 0 || y >= model.classes) throw std::invalid_argument("model: label out of range");
  }
}

// In-place softmax with max subtraction; returns log(sum exp(z - max)) + max
// so callers can form the cross-entropy without re-exponentiating.
double softmax_inplace(std::vector<double>& z) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return std::log(sum) + zmax;
}

struct Mlp1Layout {
  std::size_t w1, b1, w2, b2;
};

Mlp1Layout mlp1_layout(const ModelKind& m) {
  const std::size_t h = m.hidden, p = m.input_dim, c = m.classes;
  return Mlp1Layout{0, h * p, h * p + h, h * p + h + c * h};
}

}  // namespace

std::vector<double> forward_logits(const ModelKind& model, const ModelState& state,
                                   std::span<const double> input) {
  const std::size_t p = model.input_dim;
  const std::size_t c = model.classes;
  std::vector<double> logits(c, 0.0);
  if (model.arch == ModelKind::Arch::kLogistic) {
    const double* w = state.params.data();
    const double* b = state.params.data() + c * p;
    for (std::size_t cc = 0; cc < c; ++cc) {
      double z = b[cc];
      const double* wc = w + cc * p;
      for (std::size_t k = 0; k < p; ++k) z += wc[k] * input[k];
      logits[cc] = z;
    }
    return logits;
  }
  const std::size_t h = model.hidden;
  const Mlp1Layout at = mlp1_layout(model);
  const double* w1 = state.params.data() + at.w1;
  const double* b1 = state.params.data() + at.b1;
  const double* w2 = state.params.data() + at.w2;
  const double* b2 = state.params.data() + at.b2;
  std::vector<double> act(h);
  for (std::size_t j = 0; j < h; ++j) {
    double z = b1[j];
    const double* row = w1 + j * p;
    for (std::size_t k = 0; k < p; ++k) z += row[k] * input[k];
    act[j] = std::tanh(z);
  }
  for (std::size_t cc = 0; cc < c; ++cc) {
    double z = b2[cc];
    const double* row = w2 + cc * h;
    for (std::size_t j = 0; j < h; ++j) z += row[j] * act[j];
    logits[cc] = z;
  }
  return logits;
}

LossGrad loss_and_grad_soft(const ModelKind& model, const ModelState& state,
                            const RowMatrix& inputs, const RowMatrix& targets) {
  check_inputs(model, state, inputs);
  if (targets.rows != inputs.rows ||
      targets.cols != static_cast<std::size_t>(model.classes)) {
    throw std::invalid_argument("model: target matrix shape mismatch");
  }

  const std::size_t n = inputs.rows;
  const std::size_t p = model.input_dim;
  const std::size_t c = model.classes;
  LossGrad out;
  out.grad.assign(state.dim(), 0.0);

  if (model.arch == ModelKind::Arch::kLogistic) {
    double* gw = out.grad.data();
    double* gb = out.grad.data() + c * p;
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = inputs.row(i);
      const double* t = targets.row(i);
      std::vector<double> logits = forward_logits(model, state, inputs.row_span(i));
      std::vector<double> prob = logits;
      const double lse = softmax_inplace(prob);
      // cross-entropy against the target distribution: sum_c t_c (lse - z_c)
      for (std::size_t cc = 0; cc < c; ++cc) {
        out.loss += t[cc] * (lse - logits[cc]);
        const double delta = prob[cc] - t[cc];
        double* gwc = gw + cc * p;
        for (std::size_t k = 0; k < p; ++k) gwc[k] += delta * x[k];
        gb[cc] += delta;
      }
    }
  } else {
    const std::size_t h = model.hidden;
    const Mlp1Layout at = mlp1_layout(model);
    const double* w1 = state.params.data() + at.w1;
    const double* b1 = state.params.data() + at.b1;
    const double* w2 = state.params.data() + at.w2;
    const double* b2 = state.params.data() + at.b2;
    double* gw1 = out.grad.data() + at.w1;
    double* gb1 = out.grad.data() + at.b1;
    double* gw2 = out.grad.data() + at.w2;
    double* gb2 = out.grad.data() + at.b2;
    std::vector<double> act(h), logits(c), dz2(c), dz1(h);
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = inputs.row(i);
      const double* t = targets.row(i);
      for (std::size_t j = 0; j < h; ++j) {
        double z = b1[j];
        const double* row = w1 + j * p;
        for (std::size_t k = 0; k < p; ++k) z += row[k] * x[k];
        act[j] = std::tanh(z);
      }
      for (std::size_t cc = 0; cc < c; ++cc) {
        double z = b2[cc];
        const double* row = w2 + cc * h;
        for (std::size_t j = 0; j < h; ++j) z += row[j] * act[j];
        logits[cc] = z;
      }
      const double zmax = *std::max_element(logits.begin(), logits.end());
      double sum = 0.0;
      for (std::size_t cc = 0; cc < c; ++cc) {
        dz2[cc] = std::exp(logits[cc] - zmax);
        sum += dz2[cc];
      }
      const double lse = std::log(sum) + zmax;
      for (std::size_t cc = 0; cc < c; ++cc) {
        out.loss += t[cc] * (lse - logits[cc]);
        dz2[cc] = dz2[cc] / sum - t[cc];
      }
      std::fill(dz1.begin(), dz1.end(), 0.0);
      for (std::size_t cc = 0; cc < c; ++cc) {
        const double* row = w2 + cc * h;
        double* grow = gw2 + cc * h;
        for (std::size_t j = 0; j < h; ++j) {
          grow[j] += dz2[cc] * act[j];
          dz1[j] += dz2[cc] * row[j];
        }
        gb2[cc] += dz2[cc];
      }
      for (std::size_t j = 0; j < h; ++j) {
        const double d1 = dz1[j] * (1.0 - act[j] * act[j]);
        double* grow = gw1 + j * p;
        for (std::size_t k = 0; k < p; ++k) grow[k] += d1 * x[k];
        gb1[j] += d1;
      }
    }
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  out.loss *= inv_n;
  for (double& g : out.grad) g *= inv_n;
  return out;
}

LossGrad loss_and_grad(const ModelKind& model, const ModelState& state,
                       const Batch& batch) {
  check_inputs(model, state, batch.inputs);
  check_labels(model, batch.labels, batch.inputs.rows);
  RowMatrix targets(batch.inputs.rows, model.classes);
  for (std::size_t i = 0; i < batch.inputs.rows; ++i) {
    targets.row(i)[batch.labels[i]] = 1.0;
  }
  return loss_and_grad_soft(model, state, batch.inputs, targets);
}

std::vector<double> finite_diff_grad(const ModelKind& model, const ModelState& state,
                                     const Batch& batch, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be positive");
  check_inputs(model, state, batch.inputs);
  check_labels(model, batch.labels, batch.inputs.rows);

  ModelState probe = state;
  std::vector<double> grad(state.dim());
  for (std::size_t t = 0; t < state.dim(); ++t) {
    const double saved = probe.params[t];
    probe.params[t] = saved + h;
    const double up = loss_and_grad(model, probe, batch).loss;
    probe.params[t] = saved - h;
    const double down = loss_and_grad(model, probe, batch).loss;
    probe.params[t] = saved;
    grad[t] = (up - down) / (2.0 * h);
  }
  return grad;
}

ModelState sgd_step(const ModelState& state, std::span<const double> estimate,
                    double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("sgd_step: eta must be positive");
  if (estimate.size() != state.dim()) {
    throw std::invalid_argument("sgd_step: estimate length does not match state");
  }
  ModelState next = state;
  for (std::size_t t = 0; t < next.params.size(); ++t) {
    next.params[t] -= eta * estimate[t];
  }
  return next;
}

Evaluation evaluate(const ModelKind& model, const ModelState& state,
                    const RowMatrix& inputs, const std::vector<int>& labels) {
  check_inputs(model, state, inputs);
  check_labels(model, labels, inputs.rows);

  Evaluation out;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < inputs.rows; ++i) {
    std::vector<double> logits = forward_logits(model, state, inputs.row_span(i));
    std::size_t best = 0;
    for (std::size_t cc = 1; cc < logits.size(); ++cc) {
      if (logits[cc] > logits[best]) best = cc;  // ties keep the lower index
    }
    if (static_cast<int>(best) == labels[i]) ++correct;
    const double zmax = logits[best];
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - zmax);
    out.mean_loss += std::log(sum) + zmax - logits[labels[i]];
  }
  out.mean_loss /= static_cast<double>(inputs.rows);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(inputs.rows);
  return out;
}

}  // namespace fedmpdd
