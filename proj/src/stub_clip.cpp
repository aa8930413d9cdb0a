#include "crepe/embed/stub_clip.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "crepe/embed/image.hpp"
#include "crepe/errors.hpp"
#include "crepe/util/binary_io.hpp"
#include "crepe/util/hash.hpp"

namespace crepe::embed {
namespace {

constexpr char kMagic[] = "CRPSTUB1";
constexpr std::uint32_t kVersion = 2;
constexpr double kLnEps = 1e-5;

Mat gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = n(rng);
  }
  return m;
}

// Row-wise layer normalization.
struct LayerNormCache {
  Mat xhat;
  Vec inv_std;
};

Mat layer_norm(const Mat& x, const Vec& gain, const Vec& bias, LayerNormCache* cache) {
  const Eigen::Index n = x.rows();
  Mat xhat(n, x.cols());
  Vec inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  Mat y = (xhat.array().rowwise() * gain.transpose().array()).rowwise() + bias.transpose().array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat layer_norm_backward(const LayerNormCache& cache, const Vec& gain, const Mat& dy) {
  Mat dxhat = dy.array().rowwise() * gain.transpose().array();
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
    dx.row(i) =
        cache.inv_std(i) * (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double quick_gelu(double x) { return x * sigmoid(1.702 * x); }
double quick_gelu_grad(double x) {
  const double s = sigmoid(1.702 * x);
  return s + 1.702 * x * s * (1.0 - s);
}

Mat affine_rows(const Mat& x, const Mat& w, const Vec& b) {
  Mat y = x * w.transpose();
  y.rowwise() += b.transpose();
  return y;
}

struct StubTrace final : TextTrace {
  struct Layer {
    LayerNormCache ln1;
    Mat q, k, v;
    std::vector<Mat> probs;
    LayerNormCache ln2;
    Mat pre;
    Mat act;
  };
  std::vector<Layer> layers;
  LayerNormCache final_ln;  // end-of-sequence row only
  Eigen::Index length = 0;
};

}  // namespace

StubClip StubClip::create(const StubClipConfig& c) {
  if (c.token_dim == 0 || c.embed_dim == 0 || c.n_heads == 0 || c.token_dim % c.n_heads != 0) {
    throw ArgumentError("stub encoder: token_dim must be a positive multiple of n_heads");
  }
  if (c.vocab_size < 16 || c.image_channels == 0 || c.image_grid == 0) {
    throw ArgumentError("stub encoder: degenerate vocabulary or image tower size");
  }
  std::mt19937_64 rng(c.seed ^ 0x5354554243ULL);
  StubClip m;
  m.config_ = c;
  const auto D = static_cast<Eigen::Index>(c.token_dim);
  const auto F = static_cast<Eigen::Index>(c.token_dim * c.ffn_mult);
  const double attn_std = 1.0 / std::sqrt(double(D));
  const double proj_std = attn_std / std::sqrt(2.0 * double(c.n_layers));
  const double fc_std = 1.0 / std::sqrt(2.0 * double(D));

  m.token_embedding_ = gaussian(static_cast<Eigen::Index>(c.vocab_size), D, 0.02, rng);
  m.positional_ = gaussian(static_cast<Eigen::Index>(kMaxTokens), D, 0.01, rng);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    Block b;
    b.ln1_gain = Vec::Ones(D);
    b.ln1_bias = Vec::Zero(D);
    b.w_q = gaussian(D, D, attn_std, rng);
    b.w_k = gaussian(D, D, attn_std, rng);
    b.w_v = gaussian(D, D, attn_std, rng);
    b.w_o = gaussian(D, D, proj_std, rng);
    b.b_q = b.b_k = b.b_v = b.b_o = Vec::Zero(D);
    b.ln2_gain = Vec::Ones(D);
    b.ln2_bias = Vec::Zero(D);
    b.w_fc = gaussian(F, D, fc_std, rng);
    b.b_fc = Vec::Zero(F);
    b.w_proj = gaussian(D, F, proj_std, rng);
    b.b_proj = Vec::Zero(D);
    m.blocks_.push_back(std::move(b));
  }
  m.lnf_gain_ = Vec::Ones(D);
  m.lnf_bias_ = Vec::Zero(D);
  m.text_projection_ = gaussian(static_cast<Eigen::Index>(c.embed_dim), D, attn_std, rng);

  const auto feat = static_cast<Eigen::Index>(m.image_feature_dim());
  m.feature_mean_ = Vec::Zero(feat);
  m.feature_std_ = Vec::Ones(feat);
  const auto proj = static_cast<Eigen::Index>(m.image_projection_dim());
  m.image_projection_ =
      gaussian(static_cast<Eigen::Index>(c.embed_dim), proj, 1.0 / std::sqrt(double(proj)), rng);
  m.image_bias_ = Vec::Zero(static_cast<Eigen::Index>(c.embed_dim));
  const auto hidden = static_cast<Eigen::Index>(c.image_hidden);
  m.hidden_weight_ = gaussian(hidden, feat, 1.0 / std::sqrt(double(feat)), rng);
  m.hidden_bias_ = gaussian(hidden, 1, 1.0, rng).col(0);
  m.refresh_fingerprint();
  return m;
}

std::vector<int> StubClip::tokenize(std::string_view text) const {
  std::vector<int> ids;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    const auto buckets = static_cast<std::uint64_t>(config_.vocab_size - 3);
    ids.push_back(3 + static_cast<int>(util::fnv1a64(word) % buckets));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '\'' || c >= 0x80) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      if (std::ispunct(c)) {
        word.push_back(static_cast<char>(c));
        flush();
      }
    }
  }
  flush();
  return ids;
}

Mat StubClip::embed_tokens(std::span<const int> ids) const {
  Mat out(static_cast<Eigen::Index>(ids.size()), token_embedding_.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= token_embedding_.rows()) {
      throw ArgumentError("token id " + std::to_string(ids[i]) + " out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = token_embedding_.row(ids[i]);
  }
  return out;
}

Vec StubClip::text_forward(const Mat& tokens, std::unique_ptr<TextTrace>* trace) const {
  const Eigen::Index n = tokens.rows();
  if (n < 1 || n > static_cast<Eigen::Index>(kMaxTokens)) {
    throw TokenLimitError("text tower input length " + std::to_string(n) + " outside [1, 77]");
  }
  if (tokens.cols() != token_embedding_.cols()) {
    throw ArgumentError("token embeddings have the wrong width");
  }
  auto st = std::make_unique<StubTrace>();
  st->length = n;
  const auto H = static_cast<Eigen::Index>(config_.n_heads);
  const Eigen::Index dh = tokens.cols() / H;
  const double scale = 1.0 / std::sqrt(double(dh));

  Mat x = tokens + positional_.topRows(n);
  for (const Block& b : blocks_) {
    StubTrace::Layer L;
    const Mat h1 = layer_norm(x, b.ln1_gain, b.ln1_bias, &L.ln1);
    L.q = affine_rows(h1, b.w_q, b.b_q);
    L.k = affine_rows(h1, b.w_k, b.b_k);
    L.v = affine_rows(h1, b.w_v, b.b_v);
    Mat ctx(n, tokens.cols());
    for (Eigen::Index h = 0; h < H; ++h) {
      const auto qh = L.q.middleCols(h * dh, dh);
      const auto kh = L.k.middleCols(h * dh, dh);
      Mat scores = (qh * kh.transpose()) * scale;
      Mat p = Mat::Zero(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = scores.row(i).head(i + 1).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          p(i, j) = std::exp(scores(i, j) - mx);
          z += p(i, j);
        }
        p.row(i).head(i + 1) /= z;
      }
      ctx.middleCols(h * dh, dh) = p * L.v.middleCols(h * dh, dh);
      L.probs.push_back(std::move(p));
    }
    x += affine_rows(ctx, b.w_o, b.b_o);
    const Mat h2 = layer_norm(x, b.ln2_gain, b.ln2_bias, &L.ln2);
    L.pre = affine_rows(h2, b.w_fc, b.b_fc);
    L.act = L.pre.unaryExpr(&quick_gelu);
    x += affine_rows(L.act, b.w_proj, b.b_proj);
    st->layers.push_back(std::move(L));
  }
  const Mat z = layer_norm(x.bottomRows(1), lnf_gain_, lnf_bias_, &st->final_ln);
  Vec out = text_projection_ * z.row(0).transpose();
  if (trace) *trace = std::move(st);
  return out;
}

Mat StubClip::text_backward(const TextTrace& trace, const Vec& grad_out) const {
  const auto* st = dynamic_cast<const StubTrace*>(&trace);
  if (!st) {
    throw ArgumentError("text_backward: trace was not produced by this encoder");
  }
  if (grad_out.size() != text_projection_.rows()) {
    throw ArgumentError("text_backward: gradient has the wrong dimension");
  }
  const Eigen::Index n = st->length;
  const Eigen::Index D = token_embedding_.cols();
  const auto H = static_cast<Eigen::Index>(config_.n_heads);
  const Eigen::Index dh = D / H;
  const double scale = 1.0 / std::sqrt(double(dh));

  const Mat dz = (text_projection_.transpose() * grad_out).transpose();
  Mat dx = Mat::Zero(n, D);
  dx.bottomRows(1) = layer_norm_backward(st->final_ln, lnf_gain_, dz);

  for (std::size_t l = blocks_.size(); l-- > 0;) {
    const Block& b = blocks_[l];
    const StubTrace::Layer& L = st->layers[l];
    // x_out = x_mid + proj(gelu(fc(ln2(x_mid))))
    Mat dpre = (dx * b.w_proj).cwiseProduct(L.pre.unaryExpr(&quick_gelu_grad));
    Mat dx_mid = dx + layer_norm_backward(L.ln2, b.ln2_gain, dpre * b.w_fc);
    // x_mid = x_in + attn(ln1(x_in))
    const Mat dctx = dx_mid * b.w_o;
    Mat dq(n, D);
    Mat dk(n, D);
    Mat dv(n, D);
    for (Eigen::Index h = 0; h < H; ++h) {
      const Mat& p = L.probs[static_cast<std::size_t>(h)];
      const auto dctx_h = dctx.middleCols(h * dh, dh);
      const Mat dp = dctx_h * L.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = p.transpose() * dctx_h;
      const Vec row_dot = (dp.cwiseProduct(p)).rowwise().sum();
      const Mat ds = p.cwiseProduct(dp.colwise() - row_dot) * scale;
      dq.middleCols(h * dh, dh) = ds * L.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * L.q.middleCols(h * dh, dh);
    }
    const Mat dh1 = dq * b.w_q + dk * b.w_k + dv * b.w_v;
    dx = dx_mid + layer_norm_backward(L.ln1, b.ln1_gain, dh1);
  }
  return dx;
}

Vec StubClip::image_features(const Image& image, const data::BoundingBox& box) const {
  if (image.channels != static_cast<int>(config_.image_channels)) {
    throw ArgumentError("image has " + std::to_string(image.channels) +
                        " channels; the image tower expects " +
                        std::to_string(config_.image_channels));
  }
  const Vec raw = grid_pool(image, box, static_cast<int>(config_.image_grid));
  return ((raw - feature_mean_).array() / feature_std_.array()).matrix();
}

Vec StubClip::expand(const Vec& standardized) const {
  if (config_.image_hidden == 0) return standardized;
  Vec out(static_cast<Eigen::Index>(image_projection_dim()));
  out.head(standardized.size()) = standardized;
  out.tail(hidden_bias_.size()) = (hidden_weight_ * standardized + hidden_bias_).cwiseMax(0.0);
  return out;
}

Vec StubClip::image_forward(const Image& image, const data::BoundingBox& box) const {
  return image_projection_ * expand(image_features(image, box)) + image_bias_;
}

void StubClip::align_image_tower(const std::vector<Vec>& pooled_crops,
                                 const std::vector<Vec>& targets, double ridge) {
  if (pooled_crops.empty() || pooled_crops.size() != targets.size()) {
    throw ArgumentError("image tower alignment needs matching, non-empty samples");
  }
  const auto F = static_cast<Eigen::Index>(image_feature_dim());
  const auto d = static_cast<Eigen::Index>(config_.embed_dim);
  const auto N = static_cast<Eigen::Index>(pooled_crops.size());
  Mat X(N, F);
  Mat Y(N, d);
  for (Eigen::Index i = 0; i < N; ++i) {
    if (pooled_crops[i].size() != F || targets[i].size() != d) {
      throw ArgumentError("image tower alignment sample has the wrong dimension");
    }
    X.row(i) = pooled_crops[i].transpose();
    Y.row(i) = targets[i].transpose();
  }
  feature_mean_ = X.colwise().mean().transpose();
  Vec var = (X.rowwise() - feature_mean_.transpose()).array().square().colwise().mean();
  feature_std_ = (var.array() + 1e-8).sqrt().matrix();
  const Mat Xs = ((X.rowwise() - feature_mean_.transpose()).array().rowwise() /
                  feature_std_.transpose().array())
                     .matrix();
  Mat Z(N, static_cast<Eigen::Index>(image_projection_dim()));
  for (Eigen::Index i = 0; i < N; ++i) Z.row(i) = expand(Xs.row(i).transpose()).transpose();
  // Centre the design so the unpenalized bias decouples.
  const Vec z_mean = Z.colwise().mean().transpose();
  Z.rowwise() -= z_mean.transpose();
  const Vec y_mean = Y.colwise().mean().transpose();
  Mat A = Z.transpose() * Z;
  A.diagonal().array() += ridge;
  const Mat W = A.ldlt().solve(Z.transpose() * (Y.rowwise() - y_mean.transpose()));
  image_projection_ = W.transpose();
  image_bias_ = y_mean - image_projection_ * z_mean;
  refresh_fingerprint();
}

std::vector<double> StubClip::flat_weights() const {
  std::vector<double> out;
  auto add = [&](const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
  add(token_embedding_);
  add(positional_);
  for (const Block& b : blocks_) {
    for (const Mat* m : {&b.w_q, &b.w_k, &b.w_v, &b.w_o, &b.w_fc, &b.w_proj}) add(*m);
    for (const Vec* v : {&b.ln1_gain, &b.ln1_bias, &b.b_q, &b.b_k, &b.b_v, &b.b_o, &b.ln2_gain,
                         &b.ln2_bias, &b.b_fc, &b.b_proj}) {
      add(*v);
    }
  }
  add(lnf_gain_);
  add(lnf_bias_);
  add(text_projection_);
  add(feature_mean_);
  add(feature_std_);
  add(hidden_weight_);
  add(hidden_bias_);
  add(image_projection_);
  add(image_bias_);
  return out;
}

void StubClip::refresh_fingerprint() {
  std::ostringstream out;
  io::write_u64(out, config_.vocab_size);
  io::write_u64(out, config_.token_dim);
  io::write_u64(out, config_.n_layers);
  io::write_u64(out, config_.n_heads);
  io::write_u64(out, config_.ffn_mult);
  io::write_u64(out, config_.embed_dim);
  io::write_u64(out, config_.image_channels);
  io::write_u64(out, config_.image_grid);
  io::write_u64(out, config_.image_hidden);
  for (double w : flat_weights()) io::write_f64(out, w);
  fingerprint_ = util::sha256_hex(out.str()).substr(0, 16);
}

void StubClip::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw BackendError("cannot write encoder weights to " + path.string());
  }
  io::write_bytes(out, {kMagic, 8});
  io::write_u32(out, kVersion);
  for (std::size_t v : {config_.vocab_size, config_.token_dim, config_.n_layers, config_.n_heads,
                        config_.ffn_mult, config_.embed_dim, config_.image_channels,
                        config_.image_grid, config_.image_hidden}) {
    io::write_u64(out, v);
  }
  io::write_u64(out, config_.seed);
  io::write_matrix(out, token_embedding_);
  io::write_matrix(out, positional_);
  for (const Block& b : blocks_) {
    for (const Mat* m : {&b.w_q, &b.w_k, &b.w_v, &b.w_o, &b.w_fc, &b.w_proj}) {
      io::write_matrix(out, *m);
    }
    for (const Vec* v : {&b.ln1_gain, &b.ln1_bias, &b.b_q, &b.b_k, &b.b_v, &b.b_o, &b.ln2_gain,
                         &b.ln2_bias, &b.b_fc, &b.b_proj}) {
      io::write_vector(out, *v);
    }
  }
  io::write_vector(out, lnf_gain_);
  io::write_vector(out, lnf_bias_);
  io::write_matrix(out, text_projection_);
  io::write_vector(out, feature_mean_);
  io::write_vector(out, feature_std_);
  io::write_matrix(out, hidden_weight_);
  io::write_vector(out, hidden_bias_);
  io::write_matrix(out, image_projection_);
  io::write_vector(out, image_bias_);
}

StubClip StubClip::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw BackendError("encoder weights not found at " + path.string());
  }
  io::expect_magic(in, {kMagic, 8}, "stub encoder weights");
  if (io::read_u32(in) != kVersion) {
    throw FormatError("unsupported stub encoder weights version");
  }
  StubClip m;
  auto& c = m.config_;
  c.vocab_size = io::read_u64(in);
  c.token_dim = io::read_u64(in);
  c.n_layers = io::read_u64(in);
  c.n_heads = io::read_u64(in);
  c.ffn_mult = io::read_u64(in);
  c.embed_dim = io::read_u64(in);
  c.image_channels = io::read_u64(in);
  c.image_grid = io::read_u64(in);
  c.image_hidden = io::read_u64(in);
  c.seed = io::read_u64(in);
  if (c.n_layers > 64 || c.n_heads == 0 || c.token_dim % c.n_heads != 0) {
    throw FormatError("implausible stub encoder header");
  }
  m.token_embedding_ = io::read_matrix(in);
  m.positional_ = io::read_matrix(in);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    Block b;
    for (Mat* x : {&b.w_q, &b.w_k, &b.w_v, &b.w_o, &b.w_fc, &b.w_proj}) *x = io::read_matrix(in);
    for (Vec* v : {&b.ln1_gain, &b.ln1_bias, &b.b_q, &b.b_k, &b.b_v, &b.b_o, &b.ln2_gain,
                   &b.ln2_bias, &b.b_fc, &b.b_proj}) {
      *v = io::read_vector(in);
    }
    m.blocks_.push_back(std::move(b));
  }
  m.lnf_gain_ = io::read_vector(in);
  m.lnf_bias_ = io::read_vector(in);
  m.text_projection_ = io::read_matrix(in);
  m.feature_mean_ = io::read_vector(in);
  m.feature_std_ = io::read_vector(in);
  m.hidden_weight_ = io::read_matrix(in);
  m.hidden_bias_ = io::read_vector(in);
  m.image_projection_ = io::read_matrix(in);
  m.image_bias_ = io::read_vector(in);
  if (m.token_embedding_.rows() != static_cast<Eigen::Index>(c.vocab_size) ||
      m.token_embedding_.cols() != static_cast<Eigen::Index>(c.token_dim) ||
      m.image_projection_.cols() != static_cast<Eigen::Index>(m.image_projection_dim()) ||
      m.hidden_weight_.rows() != static_cast<Eigen::Index>(c.image_hidden)) {
    throw FormatError("stub encoder weights do not match their header");
  }
  m.refresh_fingerprint();
  return m;
}

}  // namespace crepe::embed
