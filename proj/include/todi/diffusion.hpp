#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "todi/errors.hpp"
#include "todi/nn.hpp"
#include "todi/rng.hpp"
#include "todi/tensor.hpp"
#include "todi/textenc.hpp"

namespace todi {

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

// sqrt schedule: alpha_bar(t) = 1 - sqrt(t/T + s). alpha_bar is strictly
// decreasing with alpha_bar[0] = 1 by convention; beta is derived per step.
// Note the derived beta values are not monotone for this family (they dip in
// the middle of the schedule); each still lies in (0, 1).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha_bar;  // size T+1, alpha_bar[0] = 1
  std::vector<double> beta;       // size T+1, beta[0] = 0 (unused)

  static NoiseSchedule build(int T, const std::string& kind = "sqrt") {
    if (T < 2) throw ContractError("noise schedule needs T >= 2");
    if (kind != "sqrt") throw ConfigError("unknown noise schedule kind: " + kind);
    constexpr double kShift = 1e-4;
    constexpr double kFloor = 1e-4;
    NoiseSchedule s;
    s.T = T;
    s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 0.0);
    s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
    s.alpha_bar[0] = 1.0;
    for (int t = 1; t <= T; ++t) {
      double ab = 1.0 - std::sqrt(static_cast<double>(t) / T + kShift);
      ab = std::min(1.0 - kFloor, std::max(kFloor, ab));
      // Strict decrease even where the floor clips.
      ab = std::min(ab, s.alpha_bar[static_cast<std::size_t>(t - 1)] * (1.0 - 1e-9));
      s.alpha_bar[static_cast<std::size_t>(t)] = ab;
      s.beta[static_cast<std::size_t>(t)] =
          1.0 - ab / s.alpha_bar[static_cast<std::size_t>(t - 1)];
    }
    return s;
  }

  double alpha_bar_at(int t) const {
    if (t < 0 || t > T) throw ContractError("schedule step out of range: " + std::to_string(t));
    return alpha_bar[static_cast<std::size_t>(t)];
  }
};

// Forward corruption X_t = sqrt(ab_t) X_0 + sqrt(1 - ab_t) eps. t = 0 is the
// identity by the alpha_bar[0] = 1 convention.
inline Tensor q_sample(const NoiseSchedule& s, const Tensor& x0, int t, const Tensor& eps) {
  const double ab = s.alpha_bar_at(t);
  return add(scale(x0, static_cast<float>(std::sqrt(ab))),
             scale(eps, static_cast<float>(std::sqrt(1.0 - ab))));
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

struct DiffusionConfig {
  int vocab_size = 0;
  int seq_len = 64;     // molecular token positions L
  int d_emb = 32;       // token embedding width
  int width = 64;       // transformer width H
  int heads = 4;
  int blocks = 2;
  int d_o = 128;        // conditioning latent width
  int text_width = 64;  // key/value width of the text stream
  int text_len = 64;    // text positions L_d
  float dropout = 0.1f;
  bool no_text = false;   // ablation: drop cross-attention entirely
  bool no_omics = false;  // ablation: zero the concatenated latent block
};

// One training record, with conditions pre-encoded.
struct DiffusionExample {
  std::vector<int> tokens;         // seq_len ids, PAD-filled tail
  int real_len = 1;                // non-PAD prefix length, >= 1
  std::vector<float> text_hidden;  // text_len x text_width (empty if no_text)
  std::vector<float> text_mask;    // text_len (empty if no_text)
  std::vector<float> z_o;          // d_o (empty if no_omics)
};

struct LossParts {
  Tensor total;          // f32 scalar on the tape (for backward)
  double mse = 0.0;      // embedding reconstruction
  double nll = 0.0;      // tied-head token likelihood
  double align = 0.0;    // conditioning alignment (reported even when unweighted)
  double total_value = 0.0;  // mse + nll + lambda*align in double arithmetic
};

struct Snapped {
  std::vector<int> ids;
  Tensor x;  // rows replaced by their nearest embedding rows
};

class DiffusionModel {
 public:
  DiffusionModel(DiffusionConfig cfg, Rng& rng)
      : cfg_(cfg), in_proj_(cfg.d_emb, cfg.width, rng, "diff.in_proj") {
    if (cfg.vocab_size < 2) throw ContractError("diffusion model needs a token vocabulary");
    std::vector<float> table(static_cast<std::size_t>(cfg.vocab_size) *
                             static_cast<std::size_t>(cfg.d_emb));
    for (auto& v : table) v = rng.gaussf();
    embedding_ = Tensor::param({cfg.vocab_size, cfg.d_emb}, std::move(table), "diff.embedding");
    renormalize_embedding();
    for (int i = 0; i < cfg.blocks; ++i)
      blocks_.emplace_back(cfg.width, 4 * cfg.width, cfg.heads, !cfg.no_text, cfg.text_width,
                           cfg.dropout, rng, "diff.block" + std::to_string(i));
    out_head_ = Linear(cfg.width + cfg.d_o, cfg.d_emb, rng, "diff.out_head");
    align_ = Linear(cfg.width, cfg.d_o, rng, "diff.align");
    posenc_ = positional_encoding(cfg.seq_len, cfg.width);
  }

  const DiffusionConfig& config() const { return cfg_; }
  const Tensor& embedding_table() const { return embedding_; }

  // Unit rows keep "nearest embedding row" and "argmax tied logit"
  // interchangeable; called after every optimizer step.
  void renormalize_embedding() {
    float* data = embedding_.value().data();
    for (int r = 0; r < cfg_.vocab_size; ++r) {
      float* row = data + static_cast<std::size_t>(r) * cfg_.d_emb;
      double sq = 0.0;
      for (int j = 0; j < cfg_.d_emb; ++j) sq += static_cast<double>(row[j]) * row[j];
      const float inv = static_cast<float>(1.0 / std::sqrt(std::max(sq, 1e-12)));
      for (int j = 0; j < cfg_.d_emb; ++j) row[j] *= inv;
    }
  }

  Tensor embed_tokens(const std::vector<int>& ids) const { return embedding_rows(embedding_, ids); }

  // Conditioned trunk: project X_t, add positional and per-example timestep
  // encodings, then run the blocks (self-attention, cross-attention over the
  // text stream unless ablated).
  Tensor fuse(const Tensor& x_t, const std::vector<int>& ts, const Tensor* text_kv,
              const std::vector<std::vector<float>>* text_masks, bool training,
              Rng* drop_rng) const {
    const int B = static_cast<int>(ts.size());
    if (x_t.dim(0) != B * cfg_.seq_len || x_t.dim(1) != cfg_.d_emb)
      throw ShapeError("fuse: noisy embedding batch has the wrong shape");
    Tensor h = in_proj_.forward(x_t);
    h = add(h, detail::tile_examples(posenc_, B));
    h = add(h, timestep_rows(ts));
    if (!cfg_.no_text) {
      if (text_kv == nullptr || text_masks == nullptr)
        throw ContractError("fuse: text conditioning required unless ablated");
      if (text_kv->dim(0) != B * cfg_.text_len || text_kv->dim(1) != cfg_.text_width)
        throw ShapeError("fuse: text stream has the wrong shape");
    }
    for (const auto& blk : blocks_)
      h = blk.forward(h, B, cfg_.seq_len, nullptr, cfg_.no_text ? nullptr : text_kv,
                      cfg_.text_len, cfg_.no_text ? nullptr : text_masks, drop_rng, training);
    return h;
  }

  // Z = Z_hat ++ broadcast Z_O (zeros under the no-omics ablation).
  Tensor concat_omics(const Tensor& z_hat, const Tensor& z_o) const {
    const int B = z_hat.dim(0) / cfg_.seq_len;
    Tensor zo = z_o;
    if (cfg_.no_omics) zo = Tensor::zeros({B, cfg_.d_o});
    if (zo.dim(0) != B || zo.dim(1) != cfg_.d_o)
      throw ShapeError("concat_omics: latent batch has the wrong shape");
    return concat_cols(z_hat, broadcast_rows_blocks(zo, cfg_.seq_len));
  }

  Tensor predict_x0(const Tensor& z) const { return out_head_.forward(z); }

  // Tied head: logits are inner products against the embedding table.
  Tensor nll_logits(const Tensor& x0_hat) const {
    return matmul(x0_hat, transpose(embedding_));
  }

  // Nearest-row rounding; with unit rows this is exactly the tied-logit
  // argmax (first index wins ties).
  Snapped clamp_to_rows(const Tensor& x0_hat) const {
    const int n = x0_hat.dim(0);
    Snapped out;
    out.ids.resize(static_cast<std::size_t>(n));
    std::vector<float> snapped(static_cast<std::size_t>(n) * static_cast<std::size_t>(cfg_.d_emb));
    const float* table = embedding_.value().data();
    for (int i = 0; i < n; ++i) {
      const float* row = x0_hat.value().data() + static_cast<std::size_t>(i) * cfg_.d_emb;
      int best = 0;
      double best_dot = -1e300;
      for (int k = 0; k < cfg_.vocab_size; ++k) {
        const float* e = table + static_cast<std::size_t>(k) * cfg_.d_emb;
        double dot = 0.0;
        for (int j = 0; j < cfg_.d_emb; ++j) dot += static_cast<double>(row[j]) * e[j];
        if (dot > best_dot) {
          best_dot = dot;
          best = k;
        }
      }
      out.ids[static_cast<std::size_t>(i)] = best;
      std::copy(table + static_cast<std::size_t>(best) * cfg_.d_emb,
                table + static_cast<std::size_t>(best + 1) * cfg_.d_emb,
                snapped.begin() + static_cast<std::size_t>(i) * cfg_.d_emb);
    }
    out.x = Tensor::constant({n, cfg_.d_emb}, std::move(snapped));
    return out;
  }

  Tensor alignment_projection(const Tensor& pooled) const { return align_.forward(pooled); }

  NamedParams named_params() const {
    NamedParams out{{embedding_.name(), embedding_}};
    append_params(out, in_proj_.named_params());
    for (const auto& blk : blocks_) append_params(out, blk.named_params());
    append_params(out, out_head_.named_params());
    append_params(out, align_.named_params());
    return out;
  }

 private:
  Tensor timestep_rows(const std::vector<int>& ts) const {
    std::vector<float> data;
    data.reserve(ts.size() * static_cast<std::size_t>(cfg_.seq_len) *
                 static_cast<std::size_t>(cfg_.width));
    for (const int t : ts) {
      const Tensor te = timestep_encoding(t, cfg_.width);
      for (int l = 0; l < cfg_.seq_len; ++l)
        data.insert(data.end(), te.value().begin(), te.value().end());
    }
    return Tensor::constant(
        {static_cast<int>(ts.size()) * cfg_.seq_len, cfg_.width}, std::move(data));
  }

  DiffusionConfig cfg_;
  Tensor embedding_;
  Linear in_proj_;
  std::vector<TransformerBlock> blocks_;
  Linear out_head_;
  Linear align_;
  Tensor posenc_;
};

// ---------------------------------------------------------------------------
// Training objective
// ---------------------------------------------------------------------------

// Three-part objective: embedding reconstruction + tied-head token likelihood
// + lambda * (1 - cos) alignment between pooled trunk state and the latent
// condition. `raw_cosine_align` flips the alignment to +lambda * cos for
// comparison runs. Per example t ~ Uniform{1..T} and fresh Gaussian noise.
inline LossParts diffusion_loss(const DiffusionModel& model, const NoiseSchedule& schedule,
                                const std::vector<const DiffusionExample*>& batch, float lambda,
                                bool raw_cosine_align, bool training, Rng& rng) {
  if (lambda < 0.0f) throw ContractError("lambda must be nonnegative");
  if (batch.empty()) throw ContractError("diffusion loss on an empty batch");
  const DiffusionConfig& cfg = model.config();
  const int B = static_cast<int>(batch.size());
  const int L = cfg.seq_len;

  std::vector<int> flat_tokens;
  std::vector<int> ts;
  std::vector<int> lengths;
  std::vector<float> mult0, mult1;
  flat_tokens.reserve(static_cast<std::size_t>(B) * static_cast<std::size_t>(L));
  for (const auto* ex : batch) {
    if (static_cast<int>(ex->tokens.size()) != L)
      throw ShapeError("diffusion example token length != configured L");
    flat_tokens.insert(flat_tokens.end(), ex->tokens.begin(), ex->tokens.end());
    lengths.push_back(std::max(1, std::min(L, ex->real_len)));
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.T)));
    ts.push_back(t);
    const double ab = schedule.alpha_bar_at(t);
    const float s0 = static_cast<float>(std::sqrt(ab));
    const float s1 = static_cast<float>(std::sqrt(1.0 - ab));
    for (int i = 0; i < L * cfg.d_emb; ++i) {
      mult0.push_back(s0);
      mult1.push_back(s1);
    }
  }

  const Tensor x0 = model.embed_tokens(flat_tokens);
  std::vector<float> noise(static_cast<std::size_t>(B) * static_cast<std::size_t>(L) *
                           static_cast<std::size_t>(cfg.d_emb));
  for (auto& v : noise) v = rng.gaussf();
  const Tensor eps = Tensor::constant({B * L, cfg.d_emb}, std::move(noise));
  const Tensor xt =
      add(hadamard(x0, Tensor::constant({B * L, cfg.d_emb}, std::move(mult0))),
          hadamard(eps, Tensor::constant({B * L, cfg.d_emb}, std::move(mult1))));

  Tensor text_kv;
  std::vector<std::vector<float>> text_masks;
  if (!cfg.no_text) {
    std::vector<float> kv;
    kv.reserve(static_cast<std::size_t>(B) * static_cast<std::size_t>(cfg.text_len) *
               static_cast<std::size_t>(cfg.text_width));
    for (const auto* ex : batch) {
      if (static_cast<int>(ex->text_hidden.size()) != cfg.text_len * cfg.text_width ||
          static_cast<int>(ex->text_mask.size()) != cfg.text_len)
        throw ShapeError("diffusion example lacks encoded text of the configured shape");
      kv.insert(kv.end(), ex->text_hidden.begin(), ex->text_hidden.end());
      text_masks.push_back(ex->text_mask);
    }
    text_kv = Tensor::constant({B * cfg.text_len, cfg.text_width}, std::move(kv));
  }

  Tensor z_o = Tensor::zeros({B, cfg.d_o});
  if (!cfg.no_omics) {
    std::vector<float> zo;
    zo.reserve(static_cast<std::size_t>(B) * static_cast<std::size_t>(cfg.d_o));
    for (const auto* ex : batch) {
      if (static_cast<int>(ex->z_o.size()) != cfg.d_o)
        throw ShapeError("diffusion example lacks a latent condition of the configured width");
      zo.insert(zo.end(), ex->z_o.begin(), ex->z_o.end());
    }
    z_o = Tensor::constant({B, cfg.d_o}, std::move(zo));
  }

  const Tensor z_hat = model.fuse(xt, ts, cfg.no_text ? nullptr : &text_kv,
                                  cfg.no_text ? nullptr : &text_masks, training, &rng);
  const Tensor z = model.concat_omics(z_hat, z_o);
  const Tensor x0_hat = model.predict_x0(z);

  const Tensor diff = sub(x0_hat, x0);
  const Tensor mse = mean_all(hadamard(diff, diff));
  const Tensor nll = nll_from_logits(model.nll_logits(x0_hat), flat_tokens);

  LossParts parts;
  parts.mse = mse.item();
  parts.nll = nll.item();
  Tensor base = add(mse, nll);
  if (!cfg.no_omics) {
    const Tensor pooled = mean_rows_blocks(z_hat, L, lengths);
    const Tensor cos = mean_all(cosine_rows(model.alignment_projection(pooled), z_o));
    const Tensor align_term = raw_cosine_align ? cos : add_scalar(scale(cos, -1.0f), 1.0f);
    parts.align = align_term.item();
    parts.total = lambda > 0.0f ? add(base, scale(align_term, lambda)) : base;
  } else {
    parts.total = base;  // alignment target is ablated away
  }
  parts.total_value = parts.mse + parts.nll + static_cast<double>(lambda) * parts.align;
  return parts;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct DiffusionTrainConfig {
  int epochs = 40;
  int batch_size = 32;
  float lr = 1e-4f;
  float lambda = 0.3f;
  bool raw_cosine_align = false;
  std::uint64_t seed = 1;
};

struct DiffusionTrainLog {
  std::vector<double> epoch_total;
  std::vector<double> epoch_mse;
  std::vector<double> epoch_nll;
  std::vector<double> epoch_align;
};

inline DiffusionTrainLog train_diffusion(DiffusionModel& model, const NoiseSchedule& schedule,
                                         const std::vector<DiffusionExample>& dataset,
                                         const DiffusionTrainConfig& tc) {
  if (dataset.empty()) throw ContractError("diffusion training set is empty");
  Rng rng(tc.seed);
  AdamConfig ac;
  ac.lr = tc.lr;
  Adam opt(ac);
  auto params = param_tensors(model.named_params());
  DiffusionTrainLog log;
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    rng.shuffle(order);
    double sum_total = 0.0, sum_mse = 0.0, sum_nll = 0.0, sum_align = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      std::vector<const DiffusionExample*> batch;
      for (std::size_t i = start; i < stop; ++i)
        batch.push_back(&dataset[static_cast<std::size_t>(order[i])]);
      Tape::active().reset();
      const LossParts parts =
          diffusion_loss(model, schedule, batch, tc.lambda, tc.raw_cosine_align, true, rng);
      if (!std::isfinite(parts.total_value))
        throw NumericError("diffusion training diverged: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(batches));
      zero_grads(params);
      backward(parts.total);
      opt.step(params);
      model.renormalize_embedding();
      sum_total += parts.total_value;
      sum_mse += parts.mse;
      sum_nll += parts.nll;
      sum_align += parts.align;
      ++batches;
    }
    Tape::active().reset();
    log.epoch_total.push_back(sum_total / batches);
    log.epoch_mse.push_back(sum_mse / batches);
    log.epoch_nll.push_back(sum_nll / batches);
    log.epoch_align.push_back(sum_align / batches);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Skip-step sampler
// ---------------------------------------------------------------------------

struct SampleResult {
  std::vector<int> tokens;    // seq_len ids
  double noise_error = 0.0;   // mean over visited steps (hit-ratio input)
  int visited_steps = 0;
};

// Reverse process over the visited subsequence {T, T-stride, ..., down to 0}.
// At each visited step the raw prediction is snapped to the nearest embedding
// row before the posterior step. The recorded noise error compares the noise
// implied by the raw prediction against the noise implied by the snapped one:
// ab/(1-ab) * ||x0_hat - snap||^2 summed over the sequence, averaged over
// visited steps.
inline SampleResult sample_tokens(const DiffusionModel& model, const NoiseSchedule& schedule,
                                  int stride, const std::vector<float>* text_hidden,
                                  const std::vector<float>* text_mask,
                                  const std::vector<float>* z_o_values, Rng& rng) {
  const DiffusionConfig& cfg = model.config();
  if (stride < 1 || stride > schedule.T)
    throw ContractError("sampling stride must lie in [1, T]");
  NoGradGuard guard;

  Tensor text_kv;
  std::vector<std::vector<float>> masks;
  if (!cfg.no_text) {
    if (text_hidden == nullptr || text_mask == nullptr)
      throw ContractError("sampling requires encoded text unless ablated");
    if (static_cast<int>(text_hidden->size()) != cfg.text_len * cfg.text_width ||
        static_cast<int>(text_mask->size()) != cfg.text_len)
      throw ShapeError("sampling text condition has the wrong shape");
    text_kv = Tensor::constant({cfg.text_len, cfg.text_width},
                               std::vector<float>(*text_hidden));
    masks.push_back(*text_mask);
  }
  Tensor z_o = Tensor::zeros({1, cfg.d_o});
  if (!cfg.no_omics) {
    if (z_o_values == nullptr || static_cast<int>(z_o_values->size()) != cfg.d_o)
      throw ContractError("sampling requires a latent condition of the configured width");
    z_o = Tensor::constant({1, cfg.d_o}, std::vector<float>(*z_o_values));
  }

  std::vector<float> init(static_cast<std::size_t>(cfg.seq_len) *
                          static_cast<std::size_t>(cfg.d_emb));
  for (auto& v : init) v = rng.gaussf();
  Tensor x = Tensor::constant({cfg.seq_len, cfg.d_emb}, std::move(init));

  SampleResult result;
  double err_sum = 0.0;
  for (int t = schedule.T; t >= 1; t -= stride) {
    const Tensor z_hat = model.fuse(x, {t}, cfg.no_text ? nullptr : &text_kv,
                                    cfg.no_text ? nullptr : &masks, false, nullptr);
    const Tensor x0_hat = model.predict_x0(model.concat_omics(z_hat, z_o));
    const Snapped snap = model.clamp_to_rows(x0_hat);

    const double ab_t = schedule.alpha_bar_at(t);
    double sq = 0.0;
    for (std::size_t i = 0; i < x0_hat.value().size(); ++i) {
      const double d = static_cast<double>(x0_hat.value()[i]) - snap.x.value()[i];
      sq += d * d;
    }
    err_sum += ab_t / (1.0 - ab_t) * sq;
    ++result.visited_steps;

    const int s = std::max(0, t - stride);
    const double ab_s = schedule.alpha_bar_at(s);
    const double ratio = ab_t / ab_s;          // alpha of the compound step
    const double beta_ts = 1.0 - ratio;
    const double denom = 1.0 - ab_t;
    const double coef_x0 = std::sqrt(ab_s) * beta_ts / denom;
    const double coef_xt = std::sqrt(ratio) * (1.0 - ab_s) / denom;
    const double var = beta_ts * (1.0 - ab_s) / denom;
    std::vector<float> next(x.value().size());
    const double sd = std::sqrt(std::max(0.0, var));
    for (std::size_t i = 0; i < next.size(); ++i) {
      double v = coef_x0 * snap.x.value()[i] + coef_xt * x.value()[i];
      if (s > 0) v += sd * rng.gauss();
      if (!std::isfinite(v)) throw NumericError("sampling trajectory left the finite range");
      next[i] = static_cast<float>(v);
    }
    x = Tensor::constant({cfg.seq_len, cfg.d_emb}, std::move(next));
    result.tokens = snap.ids;
  }
  result.noise_error = err_sum / std::max(1, result.visited_steps);
  return result;
}

}  // namespace todi
