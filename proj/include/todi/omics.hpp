#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "todi/errors.hpp"
#include "todi/nn.hpp"
#include "todi/rng.hpp"
#include "todi/tensor.hpp"

namespace todi {

// ---------------------------------------------------------------------------
// Expression-profile variational autoencoder
// ---------------------------------------------------------------------------

struct OmicsVaeConfig {
  int input_dim = 978;
  int hidden1 = 512;
  int hidden2 = 256;
  int latent_dim = 128;
  float beta = 1.0f;
  float dropout = 0.2f;
};

// Per-row diagonal Gaussian over the latent space; log-variance is clamped to
// [-10, 10] right after the encoder head.
struct OmicsPosterior {
  Tensor mu;       // [B, latent]
  Tensor log_var;  // [B, latent]
};

struct VaeLoss {
  Tensor total;        // scalar tensor on the tape
  double recon = 0.0;  // squared-error term, mean over batch of per-row sums
  double kl = 0.0;     // closed-form divergence from N(0, I), same reduction
};

class OmicsVae {
 public:
  OmicsVae(OmicsVaeConfig cfg, Rng& rng)
      : cfg_(cfg),
        enc1_(cfg.input_dim, cfg.hidden1, rng, "omics.enc1"),
        enc2_(cfg.hidden1, cfg.hidden2, rng, "omics.enc2"),
        mu_head_(cfg.hidden2, cfg.latent_dim, rng, "omics.mu"),
        logvar_head_(cfg.hidden2, cfg.latent_dim, rng, "omics.logvar"),
        dec1_(cfg.latent_dim, cfg.hidden2, rng, "omics.dec1"),
        dec2_(cfg.hidden2, cfg.hidden1, rng, "omics.dec2"),
        dec3_(cfg.hidden1, cfg.input_dim, rng, "omics.dec3") {}

  const OmicsVaeConfig& config() const { return cfg_; }

  // e: [B, input_dim]. Dropout only acts when training and a generator is
  // supplied; eval mode is deterministic.
  OmicsPosterior encode(const Tensor& e, bool training = false, Rng* drop = nullptr) const {
    if (e.dim(1) != cfg_.input_dim)
      throw ShapeError("omics encode: expected " + std::to_string(cfg_.input_dim) +
                       " genes, got " + std::to_string(e.dim(1)));
    Tensor h = relu(enc1_.forward(e));
    h = maybe_dropout(h, training, drop);
    h = relu(enc2_.forward(h));
    h = maybe_dropout(h, training, drop);
    OmicsPosterior post;
    post.mu = mu_head_.forward(h);
    post.log_var = clamp(logvar_head_.forward(h), -10.0f, 10.0f);
    return post;
  }

  // z = mu + exp(log_var / 2) * eps, with eps supplied by the caller so runs
  // stay reproducible.
  static Tensor reparameterize(const OmicsPosterior& post, const Tensor& eps) {
    return add(post.mu, hadamard(exp_t(scale(post.log_var, 0.5f)), eps));
  }

  Tensor decode(const Tensor& z, bool training = false, Rng* drop = nullptr) const {
    if (z.dim(1) != cfg_.latent_dim)
      throw ShapeError("omics decode: expected latent width " + std::to_string(cfg_.latent_dim) +
                       ", got " + std::to_string(z.dim(1)));
    Tensor h = relu(dec1_.forward(z));
    h = maybe_dropout(h, training, drop);
    Tensor h2 = relu(dec2_.forward(h));
    h2 = maybe_dropout(h2, training, drop);
    return dec3_.forward(h2);  // linear head: unit-variance Gaussian likelihood
  }

  // Negative evidence bound. The reconstruction term is the per-row sum of
  // squared errors (Gaussian log-likelihood up to constants), the divergence
  // term the diagonal closed form; both are averaged over the batch.
  VaeLoss elbo_loss(const Tensor& e, const Tensor& eps, float beta, bool training = false,
                    Rng* drop = nullptr) const {
    if (beta < 0.0f) throw ContractError("beta must be nonnegative");
    const int batch = e.dim(0);
    const OmicsPosterior post = encode(e, training, drop);
    const Tensor z = reparameterize(post, eps);
    const Tensor recon = decode(z, training, drop);
    const Tensor diff = sub(recon, e);
    const Tensor recon_term = scale(sum_all(hadamard(diff, diff)), 1.0f / static_cast<float>(batch));
    // 0.5 * sum(exp(lv) + mu^2 - 1 - lv), guaranteed nonnegative termwise.
    const Tensor kl_inner =
        add(add(exp_t(post.log_var), hadamard(post.mu, post.mu)),
            add_scalar(scale(post.log_var, -1.0f), -1.0f));
    const Tensor kl_term = scale(sum_all(kl_inner), 0.5f / static_cast<float>(batch));
    VaeLoss out;
    out.recon = recon_term.item();
    out.kl = kl_term.item();
    out.total = add(recon_term, scale(kl_term, beta));
    return out;
  }

  // Posterior mean, used as the conditioning vector downstream.
  std::vector<float> encode_mean(const std::vector<float>& profile) const {
    NoGradGuard guard;
    const Tensor e = Tensor::constant({1, cfg_.input_dim}, std::vector<float>(profile));
    return encode(e).mu.value();
  }

  std::vector<float> reconstruct(const std::vector<float>& profile) const {
    NoGradGuard guard;
    const Tensor e = Tensor::constant({1, cfg_.input_dim}, std::vector<float>(profile));
    return decode(encode(e).mu).value();
  }

  NamedParams named_params() const {
    NamedParams out;
    append_params(out, enc1_.named_params());
    append_params(out, enc2_.named_params());
    append_params(out, mu_head_.named_params());
    append_params(out, logvar_head_.named_params());
    append_params(out, dec1_.named_params());
    append_params(out, dec2_.named_params());
    append_params(out, dec3_.named_params());
    return out;
  }

 private:
  Tensor maybe_dropout(const Tensor& x, bool training, Rng* drop) const {
    if (!training || drop == nullptr || cfg_.dropout <= 0.0f) return x;
    return dropout(x, cfg_.dropout, *drop, true);
  }

  OmicsVaeConfig cfg_;
  Linear enc1_, enc2_, mu_head_, logvar_head_, dec1_, dec2_, dec3_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct OmicsTrainConfig {
  int epochs = 50;
  int batch_size = 64;
  float lr = 1e-4f;
  std::uint64_t seed = 1;
};

struct OmicsTrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_recon;
  std::vector<double> epoch_kl;
};

inline OmicsTrainLog train_omics_vae(OmicsVae& model, const std::vector<std::vector<float>>& corpus,
                                     const OmicsTrainConfig& tc) {
  if (corpus.empty()) throw ContractError("omics training corpus is empty");
  const int k = model.config().input_dim;
  for (const auto& row : corpus)
    if (static_cast<int>(row.size()) != k)
      throw ShapeError("omics corpus row width " + std::to_string(row.size()) +
                       ", expected " + std::to_string(k));
  Rng rng(tc.seed);
  AdamConfig ac;
  ac.lr = tc.lr;
  Adam opt(ac);
  auto params = param_tensors(model.named_params());
  OmicsTrainLog log;

  std::vector<int> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0, recon_sum = 0.0, kl_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      const int b = static_cast<int>(stop - start);
      std::vector<float> flat;
      flat.reserve(static_cast<std::size_t>(b) * static_cast<std::size_t>(k));
      for (std::size_t i = start; i < stop; ++i) {
        const auto& row = corpus[static_cast<std::size_t>(order[i])];
        flat.insert(flat.end(), row.begin(), row.end());
      }
      const Tensor e = Tensor::constant({b, k}, std::move(flat));
      std::vector<float> noise(static_cast<std::size_t>(b) *
                               static_cast<std::size_t>(model.config().latent_dim));
      for (auto& v : noise) v = rng.gaussf();
      const Tensor eps = Tensor::constant({b, model.config().latent_dim}, std::move(noise));

      Tape::active().reset();
      const VaeLoss loss = model.elbo_loss(e, eps, model.config().beta, true, &rng);
      const double value = loss.total.item();
      if (!std::isfinite(value))
        throw NumericError("omics training diverged: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(batches));
      zero_grads(params);
      backward(loss.total);
      opt.step(params);
      loss_sum += value;
      recon_sum += loss.recon;
      kl_sum += loss.kl;
      ++batches;
    }
    Tape::active().reset();
    log.epoch_loss.push_back(loss_sum / batches);
    log.epoch_recon.push_back(recon_sum / batches);
    log.epoch_kl.push_back(kl_sum / batches);
  }
  return log;
}

}  // namespace todi
