#include "crepe/nn.hpp"

#include <cmath>

#include "crepe/errors.hpp"
#include "crepe/util/binary_io.hpp"

namespace crepe::nn {

std::span<double> view(Mat& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> view(Vec& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<const double> view(const Mat& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}
std::span<const double> view(const Vec& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

std::size_t total_size(const ConstParamViews& views) {
  std::size_t n = 0;
  for (const auto& v : views) n += v.size();
  return n;
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return {Mat::Zero(out, in), Vec::Zero(out)};
}

Linear Linear::fan_in(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Linear l = zeros(in, out);
  for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = u(rng);
  }
  for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = u(rng);
  return l;
}

Vec Linear::backward(const Vec& x, const Vec& grad_out, Linear& grad) const {
  grad.weight.noalias() += grad_out * x.transpose();
  grad.bias += grad_out;
  return weight.transpose() * grad_out;
}

Mat Linear::forward_rows(const Mat& x) const {
  Mat y = x * weight.transpose();
  y.rowwise() += bias.transpose();
  return y;
}

Mat Linear::backward_rows(const Mat& x, const Mat& grad_out, Linear& grad) const {
  grad.weight.noalias() += grad_out.transpose() * x;
  grad.bias += grad_out.colwise().sum().transpose();
  return grad_out * weight;
}

Mlp2 Mlp2::zeros(std::size_t in, std::size_t hidden, std::size_t out) {
  return {Linear::zeros(in, hidden), Linear::zeros(hidden, out)};
}

Mlp2 Mlp2::fan_in(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
  Linear a = Linear::fan_in(in, hidden, rng);
  Linear b = Linear::fan_in(hidden, out, rng);
  return {std::move(a), std::move(b)};
}

Vec Mlp2::forward(const Vec& x, Trace* trace) const {
  Vec pre = first.forward(x);
  Vec hidden = pre.cwiseMax(0.0);
  Vec out = second.forward(hidden);
  if (trace) {
    trace->input = x;
    trace->pre = std::move(pre);
    trace->hidden = std::move(hidden);
  }
  return out;
}

Vec Mlp2::backward(const Trace& trace, const Vec& grad_out, Mlp2& grad) const {
  Vec d_hidden = second.backward(trace.hidden, grad_out, grad.second);
  for (Eigen::Index i = 0; i < d_hidden.size(); ++i) {
    if (trace.pre(i) <= 0.0) d_hidden(i) = 0.0;
  }
  return first.backward(trace.input, d_hidden, grad.first);
}

Mat Mlp2::forward_rows(const Mat& x, BatchTrace* trace) const {
  Mat pre = first.forward_rows(x);
  Mat hidden = pre.cwiseMax(0.0);
  Mat out = second.forward_rows(hidden);
  if (trace) {
    trace->input = x;
    trace->pre = std::move(pre);
    trace->hidden = std::move(hidden);
  }
  return out;
}

Mat Mlp2::backward_rows(const BatchTrace& trace, const Mat& grad_out, Mlp2& grad) const {
  Mat d_hidden = second.backward_rows(trace.hidden, grad_out, grad.second);
  d_hidden = (trace.pre.array() > 0.0).select(d_hidden, 0.0);
  return first.backward_rows(trace.input, d_hidden, grad.first);
}

ParamViews Mlp2::params() {
  ParamViews v = first.params();
  for (auto s : second.params()) v.push_back(s);
  return v;
}

ConstParamViews Mlp2::params() const {
  ConstParamViews v = first.params();
  for (auto s : second.params()) v.push_back(s);
  return v;
}

Vec softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp();
  return e / e.sum();
}

double log_sum_exp(const Vec& logits) {
  const double m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum());
}

Vec normalized(const Vec& x) {
  const double n = x.norm();
  if (!(n > 0.0)) {
    throw ArgumentError("cannot normalize a zero vector");
  }
  return x / n;
}

Vec normalize_backward(const Vec& x, const Vec& grad_out) {
  const double n = x.norm();
  const Vec u = x / n;
  return (grad_out - u * u.dot(grad_out)) / n;
}

double cosine(const Vec& a, const Vec& x) {
  const double na = a.norm();
  const double nx = x.norm();
  if (!(na > 0.0) || !(nx > 0.0)) {
    throw ArgumentError("cosine similarity of a zero vector");
  }
  return a.dot(x) / (na * nx);
}

Vec cosine_grad_x(const Vec& a, const Vec& x) {
  const double nx = x.norm();
  const Vec ua = a / a.norm();
  const Vec ux = x / nx;
  return (ua - ux * ua.dot(ux)) / nx;
}

void Sgd::step(const ParamViews& params, const ConstParamViews& grads, double lr) {
  if (params.size() != grads.size()) {
    throw ArgumentError("optimizer: parameter / gradient count mismatch");
  }
  if (velocity_.empty()) {
    for (const auto& p : params) velocity_.emplace_back(p.size(), 0.0);
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& vel = velocity_[t];
    const auto& g = grads[t];
    const auto& p = params[t];
    if (g.size() != p.size() || vel.size() != p.size()) {
      throw ArgumentError("optimizer: tensor size mismatch");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      vel[i] = momentum_ * vel[i] + g[i];
      p[i] -= lr * vel[i];
    }
  }
}

void zero(const ParamViews& views) {
  for (const auto& v : views) std::fill(v.begin(), v.end(), 0.0);
}

bool all_finite(const ConstParamViews& views) {
  for (const auto& v : views) {
    for (double x : v) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

void write_linear(std::ostream& out, const Linear& l) {
  io::write_matrix(out, l.weight);
  io::write_vector(out, l.bias);
}

Linear read_linear(std::istream& in) {
  Linear l;
  l.weight = io::read_matrix(in);
  l.bias = io::read_vector(in);
  if (l.bias.size() != l.weight.rows()) {
    throw FormatError("linear layer bias does not match weight rows");
  }
  return l;
}

void write_mlp(std::ostream& out, const Mlp2& m) {
  write_linear(out, m.first);
  write_linear(out, m.second);
}

Mlp2 read_mlp(std::istream& in) {
  Linear a = read_linear(in);
  Linear b = read_linear(in);
  if (b.in_dim() != a.out_dim()) {
    throw FormatError("mlp layers do not chain");
  }
  return {std::move(a), std::move(b)};
}

}  // namespace crepe::nn
