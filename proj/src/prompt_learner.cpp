#include "crepe/prompt/prompt_learner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "crepe/data/synthetic.hpp"
#include "crepe/errors.hpp"
#include "crepe/util/binary_io.hpp"

namespace crepe::prompt {
namespace {

constexpr char kMagic[] = "CRPPRMT1";
constexpr std::uint32_t kVersion = 1;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

nn::ParamViews PromptLearnerState::params() {
  nn::ParamViews v{nn::view(context)};
  for (auto s : bias_mlp.params()) v.push_back(s);
  return v;
}

nn::ConstParamViews PromptLearnerState::params() const {
  nn::ConstParamViews v{nn::view(context)};
  for (auto s : bias_mlp.params()) v.push_back(s);
  return v;
}

bool operator==(const PromptLearnerState& a, const PromptLearnerState& b) {
  if (a.seed != b.seed || a.epoch != b.epoch) return false;
  const auto pa = a.params();
  const auto pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t t = 0; t < pa.size(); ++t) {
    if (pa[t].size() != pb[t].size() || !std::equal(pa[t].begin(), pa[t].end(), pb[t].begin())) {
      return false;
    }
  }
  return true;
}

PromptLearnerState init_prompt_learner(std::size_t n_context, std::size_t token_dim,
                                       std::size_t embed_dim, std::size_t hidden_dim,
                                       std::uint64_t seed) {
  if (n_context == 0) {
    throw ArgumentError("prompt learner needs at least one context token");
  }
  if (token_dim == 0 || embed_dim == 0 || hidden_dim == 0) {
    throw ArgumentError("prompt learner dimensions must be positive");
  }
  std::mt19937_64 rng(data::mix_seed(seed, "prompt-init"));
  std::normal_distribution<double> normal(0.0, 0.02);
  PromptLearnerState s;
  s.seed = seed;
  s.context.resize(static_cast<Eigen::Index>(n_context), static_cast<Eigen::Index>(token_dim));
  for (Eigen::Index r = 0; r < s.context.rows(); ++r) {
    for (Eigen::Index c = 0; c < s.context.cols(); ++c) s.context(r, c) = normal(rng);
  }
  s.bias_mlp = nn::Mlp2::fan_in(embed_dim, hidden_dim, token_dim, rng);
  return s;
}

Vec compute_bias(const PromptLearnerState& state, const Vec& u_img, nn::Mlp2::Trace* trace) {
  if (static_cast<std::size_t>(u_img.size()) != state.embed_dim()) {
    throw ArgumentError("bias MLP expects a " + std::to_string(state.embed_dim()) +
                        "-dim image embedding, got " + std::to_string(u_img.size()));
  }
  return state.bias_mlp.forward(u_img, trace);
}

Vec compute_bias(const PromptLearnerState& state, const embed::EmbeddingVector& u_img) {
  return compute_bias(state, u_img.as_double());
}

AssembledPrompt assemble_prompt(const PromptLearnerState& state,
                                const embed::VisionLanguageEncoder& encoder,
                                std::string_view subject_label, std::string_view object_label,
                                const Vec& u_img) {
  if (encoder.token_dim() != state.token_dim()) {
    throw ArgumentError("prompt learner token dimension does not match the encoder");
  }
  const auto subj = encoder.tokenize(subject_label);
  const auto obj = encoder.tokenize(object_label);
  const std::size_t M = state.n_context();
  const std::size_t length = subj.size() + obj.size() + M + 2;
  if (length > encoder.max_tokens()) {
    throw TokenLimitError("prompt for subject '" + std::string(subject_label) + "' and object '" +
                          std::string(object_label) + "' needs " + std::to_string(length) +
                          " tokens; the limit is " + std::to_string(encoder.max_tokens()));
  }
  const Vec pi = compute_bias(state, u_img);

  AssembledPrompt p;
  p.n_context = M;
  p.context_begin = 1 + subj.size();
  auto& ids = p.sequence.ids;
  ids.reserve(length);
  ids.push_back(encoder.sos_token());
  ids.insert(ids.end(), subj.begin(), subj.end());
  ids.insert(ids.end(), M, kContextToken);
  ids.insert(ids.end(), obj.begin(), obj.end());
  ids.push_back(encoder.eos_token());

  // Frozen lookups for every real token; context rows are filled below.
  std::vector<int> lookup(ids);
  for (auto& id : lookup) {
    if (id == kContextToken) id = encoder.sos_token();
  }
  p.sequence.embeddings = encoder.embed_tokens(lookup);
  for (std::size_t m = 0; m < M; ++m) {
    p.sequence.embeddings.row(static_cast<Eigen::Index>(p.context_begin + m)) =
        state.context.row(static_cast<Eigen::Index>(m)) + pi.transpose();
  }
  return p;
}

embed::EmbeddingVector union_text_embedding(const PromptLearnerState& state,
                                            const embed::VisionLanguageEncoder& encoder,
                                            std::string_view subject_label,
                                            std::string_view object_label,
                                            const embed::EmbeddingVector& u_img) {
  const AssembledPrompt p =
      assemble_prompt(state, encoder, subject_label, object_label, u_img.as_double());
  return embed::encode_token_sequence(encoder, p.sequence);
}

double contrastive_loss_from_sims(double sim_pos, double sim_neg) {
  return softplus(sim_neg - sim_pos);
}

double contrastive_loss(const Vec& u_img, const Vec& u_txt, const Vec& u_hat) {
  if (u_img.size() != u_txt.size() || u_img.size() != u_hat.size()) {
    throw ArgumentError("contrastive loss: embedding dimensions differ");
  }
  return contrastive_loss_from_sims(nn::cosine(u_img, u_txt), nn::cosine(u_img, u_hat));
}

double contrastive_loss(const embed::EmbeddingVector& u_img, const embed::EmbeddingVector& u_txt,
                        const embed::EmbeddingVector& u_hat) {
  return contrastive_loss(u_img.as_double(), u_txt.as_double(), u_hat.as_double());
}

PromptGradients PromptGradients::zeros_like(const PromptLearnerState& state) {
  return {Mat::Zero(state.context.rows(), state.context.cols()),
          nn::Mlp2::zeros(state.embed_dim(), state.hidden_dim(), state.token_dim())};
}

nn::ConstParamViews PromptGradients::params() const {
  nn::ConstParamViews v{nn::view(context)};
  for (auto s : bias_mlp.params()) v.push_back(s);
  return v;
}

SampleResult sample_loss(const PromptLearnerState& state,
                         const embed::VisionLanguageEncoder& encoder, const PromptSample& sample,
                         PromptGradients* grads) {
  const AssembledPrompt p =
      assemble_prompt(state, encoder, sample.subject, sample.object, sample.u_img);
  std::unique_ptr<embed::TextTrace> trace;
  const Vec raw = encoder.text_forward(p.sequence.embeddings, grads ? &trace : nullptr);

  SampleResult r;
  r.sim_pos = nn::cosine(sample.u_img, raw);
  r.sim_neg = nn::cosine(sample.u_img, sample.negative);
  r.loss = contrastive_loss_from_sims(r.sim_pos, r.sim_neg);
  if (!grads) return r;

  // dL/dsim_pos = -sigmoid(sim_neg - sim_pos); the negative is constant.
  const double coeff = -sigmoid(r.sim_neg - r.sim_pos);
  const Vec d_raw = coeff * nn::cosine_grad_x(sample.u_img, raw);
  const Mat d_tokens = encoder.text_backward(*trace, d_raw);

  Vec d_pi = Vec::Zero(static_cast<Eigen::Index>(state.token_dim()));
  for (std::size_t m = 0; m < p.n_context; ++m) {
    const auto row = d_tokens.row(static_cast<Eigen::Index>(p.context_begin + m));
    grads->context.row(static_cast<Eigen::Index>(m)) += row;
    d_pi += row.transpose();
  }
  nn::Mlp2::Trace mlp_trace;
  state.bias_mlp.forward(sample.u_img, &mlp_trace);
  state.bias_mlp.backward(mlp_trace, d_pi, grads->bias_mlp);
  return r;
}

double mean_loss(const PromptLearnerState& state, const embed::VisionLanguageEncoder& encoder,
                 const std::vector<PromptSample>& samples) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) total += sample_loss(state, encoder, s).loss;
  return total / static_cast<double>(samples.size());
}

PromptTrainResult train_prompt_learner(PromptLearnerState state,
                                       const std::vector<PromptSample>& samples,
                                       const embed::VisionLanguageEncoder& encoder,
                                       const PromptTrainConfig& config) {
  if (samples.empty()) {
    throw TrainingError("prompt learner: no training samples");
  }
  if (config.batch_size == 0 || !(config.learning_rate > 0.0)) {
    throw ArgumentError("prompt learner: batch size and learning rate must be positive");
  }
  for (const auto& s : samples) {
    if (static_cast<std::size_t>(s.negative.size()) != encoder.embed_dim()) {
      throw ArgumentError("prompt sample '" + s.id + "' has a pseudo-label of the wrong dimension");
    }
  }

  std::mt19937_64 rng(data::mix_seed(config.seed, "prompt-train"));
  nn::Sgd optimizer(config.momentum);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  PromptTrainResult result;
  result.loss_trace.reserve(config.epochs);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      PromptGradients grads = PromptGradients::zeros_like(state);
      for (std::size_t i = begin; i < end; ++i) {
        const auto& sample = samples[order[i]];
        const SampleResult r = sample_loss(state, encoder, sample, &grads);
        if (!std::isfinite(r.loss)) {
          throw TrainingError("prompt learner: non-finite loss at epoch " + std::to_string(epoch) +
                              " on sample '" + sample.id + "'");
        }
        epoch_loss += r.loss;
      }
      const double scale = 1.0 / static_cast<double>(end - begin);
      grads.context *= scale;
      for (auto v : grads.bias_mlp.params()) {
        for (double& g : v) g *= scale;
      }
      optimizer.step(state.params(), grads.params(), config.learning_rate);
      if (!nn::all_finite(std::as_const(state).params())) {
        throw TrainingError("prompt learner: parameters diverged at epoch " + std::to_string(epoch));
      }
    }
    state.epoch = epoch;
    result.loss_trace.push_back(epoch_loss / static_cast<double>(samples.size()));
    if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 &&
        config.on_checkpoint) {
      config.on_checkpoint(state);
    }
  }
  result.state = std::move(state);
  return result;
}

void save_checkpoint(const PromptLearnerState& state, const std::string& encoder_fingerprint,
                     const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) {
      throw Error("cannot write prompt checkpoint " + path.string());
    }
    io::write_bytes(out, {kMagic, 8});
    io::write_u32(out, kVersion);
    io::write_u32(out, static_cast<std::uint32_t>(state.n_context()));
    io::write_u32(out, static_cast<std::uint32_t>(state.token_dim()));
    io::write_u32(out, static_cast<std::uint32_t>(state.embed_dim()));
    io::write_u32(out, static_cast<std::uint32_t>(state.hidden_dim()));
    io::write_u64(out, state.seed);
    io::write_u64(out, state.epoch);
    io::write_string(out, encoder_fingerprint);
    io::write_matrix(out, state.context);
    nn::write_mlp(out, state.bias_mlp);
  }
  std::filesystem::rename(tmp, path);
}

PromptLearnerState load_checkpoint(const std::filesystem::path& path,
                                   std::string* encoder_fingerprint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DependencyError("missing prompt checkpoint " + path.string());
  }
  io::expect_magic(in, {kMagic, 8}, "prompt checkpoint");
  if (io::read_u32(in) != kVersion) {
    throw FormatError("unsupported prompt checkpoint version in " + path.string());
  }
  const std::uint32_t M = io::read_u32(in);
  const std::uint32_t token_dim = io::read_u32(in);
  const std::uint32_t embed_dim = io::read_u32(in);
  const std::uint32_t hidden = io::read_u32(in);
  PromptLearnerState s;
  s.seed = io::read_u64(in);
  s.epoch = io::read_u64(in);
  std::string fp = io::read_string(in);
  s.context = io::read_matrix(in);
  s.bias_mlp = nn::read_mlp(in);
  if (s.n_context() != M || s.token_dim() != token_dim || s.embed_dim() != embed_dim ||
      s.hidden_dim() != hidden || s.bias_mlp.out_dim() != token_dim) {
    throw FormatError("prompt checkpoint header does not match its parameters: " + path.string());
  }
  if (encoder_fingerprint) *encoder_fingerprint = std::move(fp);
  return s;
}

void write_loss_trace(const std::vector<double>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot write loss trace " + path.string());
  }
  out.precision(17);
  out << "epoch,mean_loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out << (i + 1) << ',' << trace[i] << '\n';
}

}  // namespace crepe::prompt
