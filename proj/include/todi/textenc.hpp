#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "todi/errors.hpp"
#include "todi/nn.hpp"
#include "todi/rng.hpp"
#include "todi/tensor.hpp"

namespace todi {

// ---------------------------------------------------------------------------
// Description vocabulary and tokenization
// ---------------------------------------------------------------------------

// Lowercased maximal runs of letters and digits; punctuation separates.
inline std::vector<std::string> normalize_text(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (const char c : text) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

class TextVocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kUnk = 2;

  // Most frequent words first (ties alphabetically), capped at `word_cap`
  // non-reserved entries; everything else falls back to UNK.
  static TextVocabulary build(const std::vector<std::string>& corpus, int word_cap = 2048) {
    if (corpus.empty()) throw ContractError("text vocabulary needs a nonempty corpus");
    std::map<std::string, long> counts;
    for (const auto& text : corpus)
      for (const auto& w : normalize_text(text)) ++counts[w];
    std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    TextVocabulary v;
    for (std::size_t i = 0; i < ranked.size() && static_cast<int>(i) < word_cap; ++i)
      v.push_token(ranked[i].first);
    return v;
  }

  TextVocabulary() : tokens_{"[PAD]", "[MASK]", "[UNK]"} {
    for (int i = 0; i < 3; ++i) index_[tokens_[static_cast<std::size_t>(i)]] = i;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const {
    if (id < 0 || id >= size()) throw ContractError("text token id out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }
  int id_of(const std::string& word) const {
    const auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& word) const { return index_.count(word) != 0; }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& t : tokens_) out << t << "\n";
    if (!out) throw IoError("failed writing " + path);
  }

  static TextVocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) lines.push_back(line);
    if (lines.size() < 3 || lines[0] != "[PAD]" || lines[1] != "[MASK]" || lines[2] != "[UNK]")
      throw IoError("text vocabulary file must start with [PAD], [MASK], [UNK]: " + path);
    TextVocabulary v;
    for (std::size_t i = 3; i < lines.size(); ++i) v.push_token(lines[i]);
    return v;
  }

 private:
  void push_token(const std::string& t) {
    if (index_.count(t)) throw IoError("duplicate text token: " + t);
    index_[t] = static_cast<int>(tokens_.size());
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct TokenizedText {
  std::vector<int> ids;            // length L_d, PAD-filled tail
  std::vector<float> attention_mask;  // 1 on real tokens, 0 on padding
  int real_len = 0;
};

inline TokenizedText tokenize_text(const TextVocabulary& vocab, const std::string& text,
                                   int max_len) {
  if (max_len < 1) throw ContractError("text length budget must be positive");
  const auto words = normalize_text(text);
  TokenizedText t;
  t.ids.assign(static_cast<std::size_t>(max_len), TextVocabulary::kPad);
  t.attention_mask.assign(static_cast<std::size_t>(max_len), 0.0f);
  t.real_len = std::min<int>(max_len, static_cast<int>(words.size()));
  for (int i = 0; i < t.real_len; ++i) {
    t.ids[static_cast<std::size_t>(i)] = vocab.id_of(words[static_cast<std::size_t>(i)]);
    t.attention_mask[static_cast<std::size_t>(i)] = 1.0f;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

struct MaskedBatch {
  std::vector<int> ids_masked;     // L_d, MASK written over chosen positions
  std::vector<int> mask_positions; // ascending, subset of real positions
  std::vector<int> targets;        // original ids, parallel to mask_positions
};

inline MaskedBatch mask_tokens(const TokenizedText& t, double ratio, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError("mask ratio must lie in (0, 1)");
  if (t.real_len == 0) throw ContractError("cannot mask an all-padding text");
  const int m = std::min<int>(
      t.real_len, std::max<int>(1, static_cast<int>(std::lround(ratio * t.real_len))));
  std::vector<int> positions(static_cast<std::size_t>(t.real_len));
  std::iota(positions.begin(), positions.end(), 0);
  for (int i = 0; i < m; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(t.real_len - i)));
    std::swap(positions[static_cast<std::size_t>(i)], positions[static_cast<std::size_t>(j)]);
  }
  positions.resize(static_cast<std::size_t>(m));
  std::sort(positions.begin(), positions.end());
  MaskedBatch out;
  out.ids_masked = t.ids;
  for (const int p : positions) {
    out.mask_positions.push_back(p);
    out.targets.push_back(t.ids[static_cast<std::size_t>(p)]);
    out.ids_masked[static_cast<std::size_t>(p)] = TextVocabulary::kMask;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Masked-token transformer encoder
// ---------------------------------------------------------------------------

struct TextEncoderConfig {
  int vocab_size = 0;
  int max_len = 64;
  int width = 64;
  int heads = 4;
  int blocks = 2;
  int ffn_hidden = 256;
  float dropout = 0.1f;
};

struct TextEmbedding {
  int len = 0;
  int width = 0;
  std::vector<float> hidden;  // len x width, padded rows exactly zero
};

namespace detail {

// Constant [B*L, H] made of B stacked copies of a [L, H] tensor's values.
inline Tensor tile_examples(const Tensor& t, int B) {
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(B) * t.value().size());
  for (int b = 0; b < B; ++b) data.insert(data.end(), t.value().begin(), t.value().end());
  return Tensor::constant({B * t.dim(0), t.dim(1)}, std::move(data));
}

}  // namespace detail

class TextEncoder {
 public:
  TextEncoder(TextEncoderConfig cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.vocab_size < 4) throw ContractError("text encoder needs a built vocabulary");
    std::vector<float> table(static_cast<std::size_t>(cfg.vocab_size) *
                             static_cast<std::size_t>(cfg.width));
    for (auto& v : table) v = 0.3f * rng.gaussf();
    embedding_ = Tensor::param({cfg.vocab_size, cfg.width}, std::move(table), "text.embedding");
    for (int i = 0; i < cfg.blocks; ++i)
      blocks_.emplace_back(cfg.width, cfg.ffn_hidden, cfg.heads, false, 0, cfg.dropout, rng,
                           "text.block" + std::to_string(i));
    head_ = Linear(cfg.width, cfg.vocab_size, rng, "text.head");
    posenc_ = positional_encoding(cfg.max_len, cfg.width);
  }

  const TextEncoderConfig& config() const { return cfg_; }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  // ids: B examples of length max_len. Returns hidden states [B*L, width].
  Tensor forward_hidden(const std::vector<const std::vector<int>*>& ids,
                        const std::vector<std::vector<float>>& key_masks, bool training,
                        Rng* drop_rng) const {
    const int B = static_cast<int>(ids.size());
    if (B == 0) throw ContractError("text encoder forward on an empty batch");
    std::vector<int> flat;
    flat.reserve(static_cast<std::size_t>(B) * static_cast<std::size_t>(cfg_.max_len));
    for (const auto* v : ids) {
      if (static_cast<int>(v->size()) != cfg_.max_len)
        throw ShapeError("text example length != configured maximum");
      flat.insert(flat.end(), v->begin(), v->end());
    }
    Tensor x = add(embedding_rows(embedding_, flat), detail::tile_examples(posenc_, B));
    for (const auto& blk : blocks_)
      x = blk.forward(x, B, cfg_.max_len, &key_masks, nullptr, 0, nullptr, drop_rng, training);
    return x;
  }

  // Masked-token objective: mean over masked positions of -log P(original
  // token). All examples share the configured length.
  Tensor mlm_loss(const std::vector<MaskedBatch>& batch,
                  const std::vector<std::vector<float>>& key_masks, bool training = false,
                  Rng* drop_rng = nullptr) const {
    if (batch.empty()) throw ContractError("masked-token loss on an empty batch");
    std::vector<const std::vector<int>*> ids;
    std::vector<int> rows, targets(static_cast<std::size_t>(batch.size()) *
                                       static_cast<std::size_t>(cfg_.max_len),
                                   0);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      ids.push_back(&batch[b].ids_masked);
      if (batch[b].mask_positions.empty())
        throw ContractError("masked batch entry has no masked positions");
      for (std::size_t i = 0; i < batch[b].mask_positions.size(); ++i) {
        const int row = static_cast<int>(b) * cfg_.max_len + batch[b].mask_positions[i];
        rows.push_back(row);
        targets[static_cast<std::size_t>(row)] = batch[b].targets[i];
      }
    }
    const Tensor hidden = forward_hidden(ids, key_masks, training, drop_rng);
    const Tensor logits = head_.forward(hidden);
    return nll_from_logits(logits, targets, rows);
  }

  // Frozen, deterministic per-token embeddings with padded rows zeroed.
  TextEmbedding encode_text(const TokenizedText& t) const {
    require_frozen("encode_text");
    NoGradGuard guard;
    const Tensor hidden = forward_hidden({&t.ids}, {t.attention_mask}, false, nullptr);
    TextEmbedding out;
    out.len = cfg_.max_len;
    out.width = cfg_.width;
    out.hidden = hidden.value();
    for (int i = t.real_len; i < cfg_.max_len; ++i)
      std::fill(out.hidden.begin() + static_cast<long>(i) * cfg_.width,
                out.hidden.begin() + static_cast<long>(i + 1) * cfg_.width, 0.0f);
    return out;
  }

  // Batch variant for downstream conditioning: constant tensor [B*L, width]
  // plus the per-example key masks.
  std::pair<Tensor, std::vector<std::vector<float>>> encode_batch(
      const std::vector<TokenizedText>& batch) const {
    require_frozen("encode_batch");
    std::vector<float> data;
    std::vector<std::vector<float>> masks;
    data.reserve(batch.size() * static_cast<std::size_t>(cfg_.max_len) *
                 static_cast<std::size_t>(cfg_.width));
    for (const auto& t : batch) {
      const TextEmbedding e = encode_text(t);
      data.insert(data.end(), e.hidden.begin(), e.hidden.end());
      masks.push_back(t.attention_mask);
    }
    return {Tensor::constant({static_cast<int>(batch.size()) * cfg_.max_len, cfg_.width},
                             std::move(data)),
            masks};
  }

  NamedParams named_params() const {
    NamedParams out{{embedding_.name(), embedding_}};
    for (const auto& blk : blocks_) append_params(out, blk.named_params());
    append_params(out, head_.named_params());
    return out;
  }

  void require_trainable(const char* op) const {
    if (frozen_)
      throw ContractError(std::string(op) + ": encoder is frozen; training is forbidden");
  }

 private:
  void require_frozen(const char* op) const {
    if (!frozen_)
      throw ContractError(std::string(op) + ": encoder must be frozen before use downstream");
  }

  TextEncoderConfig cfg_;
  Tensor embedding_;
  std::vector<TransformerBlock> blocks_;
  Linear head_;
  Tensor posenc_;
  bool frozen_ = false;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TextTrainConfig {
  int epochs = 30;
  int batch_size = 32;
  float lr = 1e-3f;
  double mask_ratio = 0.15;
  std::uint64_t seed = 1;
  int min_corpus = 100;
};

struct TextTrainLog {
  std::vector<double> epoch_loss;
};

inline TextTrainLog train_text_encoder(TextEncoder& model, const TextVocabulary& vocab,
                                       const std::vector<std::string>& corpus,
                                       const TextTrainConfig& tc) {
  model.require_trainable("train_text_encoder");
  if (static_cast<int>(corpus.size()) < tc.min_corpus)
    throw ContractError("text training corpus too small: " + std::to_string(corpus.size()) +
                        " < " + std::to_string(tc.min_corpus));
  std::vector<TokenizedText> tokenized;
  tokenized.reserve(corpus.size());
  for (const auto& text : corpus) {
    TokenizedText t = tokenize_text(vocab, text, model.config().max_len);
    if (t.real_len == 0) throw ContractError("empty description after normalization");
    tokenized.push_back(std::move(t));
  }
  Rng rng(tc.seed);
  AdamConfig ac;
  ac.lr = tc.lr;
  Adam opt(ac);
  auto params = param_tensors(model.named_params());
  TextTrainLog log;
  std::vector<int> order(tokenized.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      std::vector<MaskedBatch> masked;
      std::vector<std::vector<float>> key_masks;
      for (std::size_t i = start; i < stop; ++i) {
        const auto& t = tokenized[static_cast<std::size_t>(order[i])];
        masked.push_back(mask_tokens(t, tc.mask_ratio, rng));
        key_masks.push_back(t.attention_mask);
      }
      Tape::active().reset();
      const Tensor loss = model.mlm_loss(masked, key_masks, true, &rng);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw NumericError("text training diverged: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(batches));
      zero_grads(params);
      backward(loss);
      opt.step(params);
      loss_sum += value;
      ++batches;
    }
    Tape::active().reset();
    log.epoch_loss.push_back(loss_sum / batches);
  }
  model.freeze();
  return log;
}

}  // namespace todi
