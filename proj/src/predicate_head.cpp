#include "crepe/head/predicate_head.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "crepe/data/synthetic.hpp"
#include "crepe/errors.hpp"
#include "crepe/util/binary_io.hpp"

namespace crepe::head {
namespace {

constexpr char kMagic[] = "CRPHEAD1";
constexpr std::uint32_t kVersion = 1;
constexpr auto kLocDim = static_cast<Eigen::Index>(geometry::LocationFeature::kDim);

void check_dim(const Vec& v, std::size_t d, const char* what) {
  if (static_cast<std::size_t>(v.size()) != d) {
    throw ArgumentError(std::string(what) + " has dimension " + std::to_string(v.size()) +
                        ", expected " + std::to_string(d));
  }
}

struct PoolTrace {
  Mat t;      // K x a, tanh activations
  Vec alpha;  // K
};

Vec pool(const PredicateHeadState& st, const Mat& c, PoolTrace* trace) {
  if (c.rows() == 0) {
    throw ArgumentError("attention pooling needs at least one candidate");
  }
  if (!st.has_attention() || c.rows() == 1) {
    if (trace) {
      trace->alpha = Vec::Ones(1);
      trace->t.resize(0, 0);
    }
    return c.row(0).transpose();
  }
  Mat t = st.attention_v.forward_rows(c).array().tanh();
  const Vec alpha = nn::softmax(t * st.attention_w);
  Vec out = c.transpose() * alpha;
  if (trace) {
    trace->t = std::move(t);
    trace->alpha = alpha;
  }
  return out;
}

void pool_backward(const PredicateHeadState& st, const Mat& c, const PoolTrace& trace,
                   const Vec& du, PredicateHeadState& grads) {
  if (!st.has_attention() || c.rows() == 1) return;
  const Vec dalpha = c * du;
  const Vec& alpha = trace.alpha;
  const Vec da = alpha.cwiseProduct((dalpha.array() - alpha.dot(dalpha)).matrix());
  grads.attention_w += trace.t.transpose() * da;
  const Mat dz =
      (da * st.attention_w.transpose()).array() * (1.0 - trace.t.array().square());
  st.attention_v.backward_rows(c, dz, grads.attention_v);
}

Vec location_vector(const std::array<double, geometry::LocationFeature::kDim>& loc) {
  return Eigen::Map<const Vec>(loc.data(), kLocDim);
}

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kVisual:
      return "visual";
    case Mode::kVisualLanguage:
      return "visual-language";
    case Mode::kPseudoK:
      return "pseudo-k";
    case Mode::kCrepe:
      return "crepe";
  }
  return "crepe";
}

Mode parse_mode(std::string_view text) {
  if (text == "visual") return Mode::kVisual;
  if (text == "visual-language") return Mode::kVisualLanguage;
  if (text == "pseudo-k") return Mode::kPseudoK;
  if (text == "crepe") return Mode::kCrepe;
  throw ArgumentError("unknown mode '" + std::string(text) +
                      "' (expected visual, visual-language, pseudo-k or crepe)");
}

HeadDims PredicateHeadState::dims() const {
  HeadDims d;
  d.embed_dim = f_u.in_dim();
  d.hidden_dim = f_u.hidden_dim();
  d.output_dim = f_u.out_dim();
  d.location_hidden = location.hidden_dim();
  d.location_out = location.out_dim();
  d.n_predicates = n_predicates();
  d.attention_hidden = static_cast<std::size_t>(attention_w.size());
  return d;
}

nn::ParamViews PredicateHeadState::params() {
  nn::ParamViews v;
  for (auto* m : {&f_s, &f_o, &f_u, &location}) {
    for (auto s : m->params()) v.push_back(s);
  }
  for (auto s : f_p.params()) v.push_back(s);
  for (auto s : attention_v.params()) v.push_back(s);
  v.push_back(nn::view(attention_w));
  return v;
}

nn::ConstParamViews PredicateHeadState::params() const {
  nn::ConstParamViews v;
  for (const auto* m : {&f_s, &f_o, &f_u, &location}) {
    for (auto s : m->params()) v.push_back(s);
  }
  for (auto s : f_p.params()) v.push_back(s);
  for (auto s : attention_v.params()) v.push_back(s);
  v.push_back(nn::view(attention_w));
  return v;
}

bool operator==(const PredicateHeadState& a, const PredicateHeadState& b) {
  if (a.seed != b.seed) return false;
  const auto pa = a.params();
  const auto pb = b.params();
  for (std::size_t t = 0; t < pa.size(); ++t) {
    if (pa[t].size() != pb[t].size() || !std::equal(pa[t].begin(), pa[t].end(), pb[t].begin())) {
      return false;
    }
  }
  return true;
}

PredicateHeadState init_head(const HeadDims& d, std::uint64_t seed) {
  if (d.n_predicates == 0 || d.embed_dim == 0 || d.hidden_dim == 0 || d.output_dim == 0 ||
      d.location_hidden == 0 || d.location_out == 0) {
    throw ArgumentError("predicate head dimensions must be positive");
  }
  std::mt19937_64 rng(data::mix_seed(seed, "head-init"));
  PredicateHeadState s;
  s.seed = seed;
  s.f_s = nn::Mlp2::fan_in(d.embed_dim, d.hidden_dim, d.output_dim, rng);
  s.f_o = nn::Mlp2::fan_in(d.embed_dim, d.hidden_dim, d.output_dim, rng);
  s.f_u = nn::Mlp2::fan_in(d.embed_dim, d.hidden_dim, d.output_dim, rng);
  s.location = nn::Mlp2::fan_in(geometry::LocationFeature::kDim, d.location_hidden,
                                d.location_out, rng);
  s.f_p = nn::Linear::fan_in(d.output_dim + d.location_out, d.n_predicates + 1, rng);
  if (d.attention_hidden > 0) {
    s.attention_v = nn::Linear::fan_in(d.embed_dim, d.attention_hidden, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d.attention_hidden));
    std::uniform_real_distribution<double> u(-bound, bound);
    s.attention_w.resize(static_cast<Eigen::Index>(d.attention_hidden));
    for (Eigen::Index i = 0; i < s.attention_w.size(); ++i) s.attention_w(i) = u(rng);
  } else {
    s.attention_v = nn::Linear::zeros(0, 0);
    s.attention_w.resize(0);
  }
  return s;
}

PredicateHeadState zeros_like(const PredicateHeadState& state) {
  PredicateHeadState g = state;
  nn::zero(g.params());
  return g;
}

Vec predicate_embedding(const PredicateHeadState& state, const Vec& s_emb, const Vec& o_emb,
                        const Vec& u_emb) {
  const std::size_t d = state.embed_dim();
  check_dim(s_emb, d, "subject embedding");
  check_dim(o_emb, d, "object embedding");
  check_dim(u_emb, d, "union embedding");
  return state.f_u.forward(u_emb) - state.f_s.forward(s_emb) - state.f_o.forward(o_emb);
}

Vec classify(const PredicateHeadState& state, const Vec& pred_emb,
             const geometry::LocationFeature& loc) {
  check_dim(pred_emb, state.output_dim(), "predicate embedding");
  const Vec l = state.location.forward(location_vector(loc.concat()));
  Vec z(pred_emb.size() + l.size());
  z << pred_emb, l;
  return nn::softmax(state.f_p.forward(z));
}

Vec attention_pool(const PredicateHeadState& state, const Mat& candidates, Vec* weights) {
  if (candidates.rows() == 0) {
    throw ArgumentError("attention pooling needs at least one candidate");
  }
  if (candidates.rows() > 1 && !state.has_attention()) {
    throw ArgumentError("this head has no attention module for multiple candidates");
  }
  PoolTrace trace;
  Vec out = pool(state, candidates, &trace);
  if (weights) *weights = trace.alpha;
  return out;
}

Vec predict(const PredicateHeadState& state, const HeadExample& ex) {
  const Vec u = attention_pool(state, ex.u);
  const Vec p = predicate_embedding(state, ex.s, ex.o, u);
  const Vec l = state.location.forward(location_vector(ex.location));
  Vec z(p.size() + l.size());
  z << p, l;
  return nn::softmax(state.f_p.forward(z));
}

double batch_loss(const PredicateHeadState& st, const std::vector<const HeadExample*>& batch,
                  PredicateHeadState* grads) {
  if (batch.empty()) return 0.0;
  const auto B = static_cast<Eigen::Index>(batch.size());
  const auto d = static_cast<Eigen::Index>(st.embed_dim());
  const auto e = static_cast<Eigen::Index>(st.output_dim());
  Mat S(B, d), O(B, d), U(B, d), L(B, kLocDim);
  std::vector<PoolTrace> pools(batch.size());
  for (Eigen::Index i = 0; i < B; ++i) {
    const HeadExample& ex = *batch[static_cast<std::size_t>(i)];
    if (ex.s.size() != d || ex.o.size() != d || ex.u.cols() != d) {
      throw ArgumentError("head example has the wrong embedding dimension");
    }
    if (ex.u.rows() > 1 && !st.has_attention()) {
      throw ArgumentError("this head has no attention module for multiple candidates");
    }
    if (ex.label >= st.n_classes()) {
      throw ArgumentError("head example label " + std::to_string(ex.label) + " out of range");
    }
    S.row(i) = ex.s.transpose();
    O.row(i) = ex.o.transpose();
    U.row(i) = pool(st, ex.u, &pools[static_cast<std::size_t>(i)]).transpose();
    L.row(i) = location_vector(ex.location).transpose();
  }
  nn::Mlp2::BatchTrace ts, to, tu, tl;
  const Mat P = st.f_u.forward_rows(U, &tu) - st.f_s.forward_rows(S, &ts) -
                st.f_o.forward_rows(O, &to);
  const Mat Lo = st.location.forward_rows(L, &tl);
  Mat Z(B, e + Lo.cols());
  Z << P, Lo;
  const Mat logits = st.f_p.forward_rows(Z);

  double loss = 0.0;
  Mat dlogits(B, logits.cols());
  for (Eigen::Index i = 0; i < B; ++i) {
    const Vec row = logits.row(i).transpose();
    const auto y = static_cast<Eigen::Index>(batch[static_cast<std::size_t>(i)]->label);
    loss += nn::log_sum_exp(row) - row(y);
    if (grads) {
      Vec p = nn::softmax(row);
      p(y) -= 1.0;
      dlogits.row(i) = p.transpose() / static_cast<double>(B);
    }
  }
  loss /= static_cast<double>(B);
  if (!grads) return loss;

  const Mat dZ = st.f_p.backward_rows(Z, dlogits, grads->f_p);
  const Mat dP = dZ.leftCols(e);
  st.location.backward_rows(tl, dZ.rightCols(Lo.cols()), grads->location);
  const Mat dU = st.f_u.backward_rows(tu, dP, grads->f_u);
  st.f_s.backward_rows(ts, -dP, grads->f_s);
  st.f_o.backward_rows(to, -dP, grads->f_o);
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto& ex = *batch[static_cast<std::size_t>(i)];
    pool_backward(st, ex.u, pools[static_cast<std::size_t>(i)], dU.row(i).transpose(), *grads);
  }
  return loss;
}

std::vector<std::pair<std::size_t, std::size_t>> sample_no_relation_pairs(const data::Scene& scene,
                                                                          double ratio,
                                                                          std::uint64_t seed) {
  if (!(ratio > 0.0) || !std::isfinite(ratio)) {
    throw ArgumentError("no-relation ratio must be positive");
  }
  std::vector<std::pair<std::size_t, std::size_t>> free;
  for (const auto& p : data::ordered_pairs(scene)) {
    const bool related = std::any_of(scene.relations.begin(), scene.relations.end(), [&](auto& r) {
      return r.subject_idx == p.first && r.object_idx == p.second;
    });
    if (!related) free.push_back(p);
  }
  const auto wanted =
      static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(scene.relations.size())));
  const std::size_t n = std::min(wanted, free.size());
  std::mt19937_64 rng(data::mix_seed(seed, scene.image_id));
  // Partial Fisher-Yates keeps the draw independent of how many are taken.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, free.size() - 1);
    std::swap(free[i], free[pick(rng)]);
  }
  free.resize(n);
  return free;
}

std::vector<LrStep> default_schedule() {
  return {{1, 1e-3}, {16, 1e-4}, {31, 1e-3}, {46, 1e-4}};
}

double learning_rate_at(const std::vector<LrStep>& schedule, std::size_t epoch) {
  if (schedule.empty() || schedule.front().first_epoch > epoch) {
    throw ArgumentError("learning-rate schedule does not cover epoch " + std::to_string(epoch));
  }
  double lr = schedule.front().learning_rate;
  for (const auto& step : schedule) {
    if (step.first_epoch <= epoch) lr = step.learning_rate;
  }
  return lr;
}

double mean_class_accuracy(const PredicateHeadState& state,
                           const std::vector<HeadExample>& examples) {
  const std::size_t K = state.n_predicates();
  std::vector<std::size_t> hit(K, 0), total(K, 0);
  for (const auto& ex : examples) {
    if (ex.label >= K) continue;
    const Vec p = predict(state, ex);
    Eigen::Index best = 0;
    p.head(static_cast<Eigen::Index>(K)).maxCoeff(&best);
    ++total[ex.label];
    if (static_cast<std::size_t>(best) == ex.label) ++hit[ex.label];
  }
  double sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t k = 0; k < K; ++k) {
    if (total[k] == 0) continue;
    sum += static_cast<double>(hit[k]) / static_cast<double>(total[k]);
    ++classes;
  }
  return classes ? sum / static_cast<double>(classes) : 0.0;
}

HeadTrainResult train_head(PredicateHeadState state, const std::vector<HeadExample>& train,
                           const std::vector<HeadExample>& val, const HeadTrainConfig& config) {
  if (train.empty()) {
    throw TrainingError("predicate head: no training examples");
  }
  if (config.batch_size == 0) {
    throw ArgumentError("predicate head: batch size must be positive");
  }
  std::mt19937_64 rng(data::mix_seed(config.seed, "head-train"));
  nn::Sgd optimizer(config.momentum);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  HeadTrainResult result;
  double best = -1.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = learning_rate_at(config.schedule, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<const HeadExample*> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&train[order[i]]);
      PredicateHeadState grads = zeros_like(state);
      const double loss = batch_loss(state, batch, &grads);
      if (!std::isfinite(loss)) {
        throw TrainingError("predicate head: non-finite loss at epoch " + std::to_string(epoch) +
                            ", batch starting at example " + std::to_string(order[begin]));
      }
      epoch_loss += loss * static_cast<double>(end - begin);
      optimizer.step(state.params(), std::as_const(grads).params(), lr);
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(train.size()));
    result.lr_trace.push_back(lr);
    if (!val.empty()) {
      const double acc = mean_class_accuracy(state, val);
      result.val_trace.push_back(acc);
      if (acc > best) {
        best = acc;
        result.best_epoch = epoch;
        result.state = state;
      }
    }
  }
  result.final_state = state;
  if (val.empty()) {
    result.state = state;
    result.best_epoch = config.epochs;
  }
  return result;
}

const Mat& SceneFeatures::union_for(std::size_t s, std::size_t o) const {
  const std::pair<std::size_t, std::size_t> key{s, o};
  const auto it = std::lower_bound(pairs.begin(), pairs.end(), key);
  if (it == pairs.end() || *it != key) {
    throw LookupError("no union embedding for pair (" + std::to_string(s) + ", " +
                      std::to_string(o) + ") of scene '" + image_id + "'");
  }
  return unions[static_cast<std::size_t>(it - pairs.begin())];
}

HeadExample make_example(const data::Scene& scene, const SceneFeatures& features, std::size_t s,
                         std::size_t o, std::size_t label) {
  if (features.entities.rows() != static_cast<Eigen::Index>(scene.entities.size())) {
    throw LookupError("features of scene '" + scene.image_id + "' cover " +
                      std::to_string(features.entities.rows()) + " entities, the scene has " +
                      std::to_string(scene.entities.size()));
  }
  HeadExample ex;
  ex.s = features.entities.row(static_cast<Eigen::Index>(s)).transpose();
  ex.o = features.entities.row(static_cast<Eigen::Index>(o)).transpose();
  ex.u = features.union_for(s, o);
  ex.location = geometry::location_feature(scene.entities[s].box, scene.entities[o].box,
                                           geometry::ImageDims::of(scene))
                    .concat();
  ex.label = label;
  return ex;
}

PairDistributions predict_scene(const PredicateHeadState& state, const data::Scene& scene,
                                const SceneFeatures& features,
                                const calibration::CalibrationTable* calibration) {
  PairDistributions out;
  if (scene.relations.empty()) return out;
  for (const auto& [s, o] : data::ordered_pairs(scene)) {
    Vec dist = predict(state, make_example(scene, features, s, o, 0));
    if (calibration) dist = calibration::adjust(dist, *calibration);
    out.emplace(std::make_pair(s, o), std::move(dist));
  }
  return out;
}

void save_checkpoint(const PredicateHeadState& state, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) {
      throw Error("cannot write head checkpoint " + path.string());
    }
    const HeadDims d = state.dims();
    io::write_bytes(out, {kMagic, 8});
    io::write_u32(out, kVersion);
    for (std::size_t v : {d.embed_dim, d.hidden_dim, d.output_dim, d.location_hidden,
                          d.location_out, d.n_predicates, d.attention_hidden}) {
      io::write_u32(out, static_cast<std::uint32_t>(v));
    }
    io::write_u64(out, state.seed);
    for (const auto* m : {&state.f_s, &state.f_o, &state.f_u, &state.location}) {
      nn::write_mlp(out, *m);
    }
    nn::write_linear(out, state.f_p);
    nn::write_linear(out, state.attention_v);
    io::write_vector(out, state.attention_w);
  }
  std::filesystem::rename(tmp, path);
}

PredicateHeadState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DependencyError("missing head checkpoint " + path.string());
  }
  io::expect_magic(in, {kMagic, 8}, "head checkpoint");
  if (io::read_u32(in) != kVersion) {
    throw FormatError("unsupported head checkpoint version in " + path.string());
  }
  HeadDims d;
  for (std::size_t* v : {&d.embed_dim, &d.hidden_dim, &d.output_dim, &d.location_hidden,
                         &d.location_out, &d.n_predicates, &d.attention_hidden}) {
    *v = io::read_u32(in);
  }
  PredicateHeadState s;
  s.seed = io::read_u64(in);
  s.f_s = nn::read_mlp(in);
  s.f_o = nn::read_mlp(in);
  s.f_u = nn::read_mlp(in);
  s.location = nn::read_mlp(in);
  s.f_p = nn::read_linear(in);
  s.attention_v = nn::read_linear(in);
  s.attention_w = io::read_vector(in);
  const HeadDims got = s.dims();
  if (got.embed_dim != d.embed_dim || got.hidden_dim != d.hidden_dim ||
      got.output_dim != d.output_dim || got.location_hidden != d.location_hidden ||
      got.location_out != d.location_out || got.n_predicates != d.n_predicates ||
      got.attention_hidden != d.attention_hidden ||
      s.f_p.in_dim() != d.output_dim + d.location_out) {
    throw FormatError("head checkpoint header does not match its parameters: " + path.string());
  }
  return s;
}

std::string prediction_line(const std::string& image_id, const PairDistributions& dists,
                            const data::Vocabulary& predicates, std::size_t top_n) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [pair, dist] : dists) {
    const std::size_t K = static_cast<std::size_t>(dist.size()) - 1;
    if (K != predicates.size()) {
      throw ArgumentError("prediction for scene '" + image_id +
                          "' does not match the predicate vocabulary");
    }
    std::vector<std::size_t> idx(K);
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t n = std::min(top_n, K);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double x = dist(static_cast<Eigen::Index>(a));
                        const double y = dist(static_cast<Eigen::Index>(b));
                        return x != y ? x > y : a < b;
                      });
    nlohmann::json top = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
      top.push_back({predicates.name(idx[i]), dist(static_cast<Eigen::Index>(idx[i]))});
    }
    pairs.push_back({{"s", pair.first}, {"o", pair.second}, {"top", std::move(top)}});
  }
  return nlohmann::json{{"image_id", image_id}, {"pairs", std::move(pairs)}}.dump();
}

}  // namespace crepe::head
