#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

namespace crepe::nn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Mutable and read-only views over every parameter tensor of a module, in a
// fixed order. Optimizers and finite-difference checks walk these.
using ParamViews = std::vector<std::span<double>>;
using ConstParamViews = std::vector<std::span<const double>>;

std::span<double> view(Mat& m);
std::span<double> view(Vec& v);
std::span<const double> view(const Mat& m);
std::span<const double> view(const Vec& v);

std::size_t total_size(const ConstParamViews& views);

struct Linear {
  Mat weight;  // out x in
  Vec bias;    // out

  static Linear zeros(std::size_t in, std::size_t out);
  // U(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
  static Linear fan_in(std::size_t in, std::size_t out, std::mt19937_64& rng);

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }

  Vec forward(const Vec& x) const { return weight * x + bias; }
  // Accumulates into `grad` and returns dL/dx.
  Vec backward(const Vec& x, const Vec& grad_out, Linear& grad) const;

  // Row-batched forms: each row of `x` is one sample.
  Mat forward_rows(const Mat& x) const;
  Mat backward_rows(const Mat& x, const Mat& grad_out, Linear& grad) const;

  ParamViews params() { return {view(weight), view(bias)}; }
  ConstParamViews params() const { return {view(weight), view(bias)}; }
};

// Linear -> ReLU -> Linear.
struct Mlp2 {
  Linear first;
  Linear second;

  struct Trace {
    Vec input;
    Vec pre;
    Vec hidden;
  };

  static Mlp2 zeros(std::size_t in, std::size_t hidden, std::size_t out);
  static Mlp2 fan_in(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng);

  std::size_t in_dim() const { return first.in_dim(); }
  std::size_t hidden_dim() const { return first.out_dim(); }
  std::size_t out_dim() const { return second.out_dim(); }
  std::size_t parameter_count() const {
    return first.parameter_count() + second.parameter_count();
  }

  Vec forward(const Vec& x, Trace* trace = nullptr) const;
  Vec backward(const Trace& trace, const Vec& grad_out, Mlp2& grad) const;

  struct BatchTrace {
    Mat input;
    Mat pre;
    Mat hidden;
  };
  Mat forward_rows(const Mat& x, BatchTrace* trace = nullptr) const;
  Mat backward_rows(const BatchTrace& trace, const Mat& grad_out, Mlp2& grad) const;

  ParamViews params();
  ConstParamViews params() const;
};

Vec softmax(const Vec& logits);
double log_sum_exp(const Vec& logits);

// Unit vector and the Jacobian-vector product of x -> x/|x|.
Vec normalized(const Vec& x);
Vec normalize_backward(const Vec& x, const Vec& grad_out);

// cos(a, x) and its gradient with respect to x.
double cosine(const Vec& a, const Vec& x);
Vec cosine_grad_x(const Vec& a, const Vec& x);

// SGD with classical momentum: v = mu v + g; p -= lr v.
class Sgd {
 public:
  explicit Sgd(double momentum = 0.0) : momentum_(momentum) {}
  void step(const ParamViews& params, const ConstParamViews& grads, double lr);
  double momentum() const { return momentum_; }

 private:
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

void zero(const ParamViews& views);
bool all_finite(const ConstParamViews& views);

void write_linear(std::ostream& out, const Linear& l);
Linear read_linear(std::istream& in);
void write_mlp(std::ostream& out, const Mlp2& m);
Mlp2 read_mlp(std::istream& in);

}  // namespace crepe::nn
