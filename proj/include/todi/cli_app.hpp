#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "todi/checkpoint.hpp"
#include "todi/config.hpp"
#include "todi/datagen.hpp"
#include "todi/diffusion.hpp"
#include "todi/errors.hpp"
#include "todi/fcd.hpp"
#include "todi/metrics.hpp"
#include "todi/molecule.hpp"
#include "todi/omics.hpp"
#include "todi/pca.hpp"
#include "todi/rng.hpp"
#include "todi/selfies.hpp"
#include "todi/smiles.hpp"
#include "todi/textenc.hpp"

namespace todi {
namespace cli {

// ---------------------------------------------------------------------------
// Formatting and small file helpers
// ---------------------------------------------------------------------------

inline std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline void write_csv(const std::string& path, const std::string& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << header << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
    f << "\n";
  }
  if (!f) throw IoError("failed writing " + path);
}

// ---------------------------------------------------------------------------
// Model assembly from one RunConfig
// ---------------------------------------------------------------------------

inline OmicsVaeConfig omics_model_config(const RunConfig& rc) {
  OmicsVaeConfig c;
  c.input_dim = rc.K;
  c.latent_dim = rc.d_o;
  c.beta = rc.beta;
  c.dropout = rc.dropout_omics;
  return c;
}

inline TextEncoderConfig text_model_config(const RunConfig& rc, int vocab_size) {
  TextEncoderConfig c;
  c.vocab_size = vocab_size;
  c.max_len = rc.L_d;
  c.width = rc.h_text;
  c.heads = rc.heads;
  c.blocks = rc.blocks;
  c.ffn_hidden = 4 * rc.h_text;
  c.dropout = rc.dropout_diff;
  return c;
}

inline DiffusionConfig diffusion_model_config(const RunConfig& rc, int vocab_size) {
  DiffusionConfig c;
  c.vocab_size = vocab_size;
  c.seq_len = rc.L_max;
  c.d_emb = rc.d_emb;
  c.width = rc.H;
  c.heads = rc.heads;
  c.blocks = rc.blocks;
  c.d_o = rc.d_o;
  c.text_width = rc.h_text;
  c.text_len = rc.L_d;
  c.dropout = rc.dropout_diff;
  c.no_text = rc.ablation == "no-text";
  c.no_omics = rc.ablation == "no-omics";
  return c;
}

// The conditioning wiring is part of the weight layout, so the checkpoint tag
// carries it; loading under a different ablation fails up front.
inline std::string diffusion_module_tag(const RunConfig& rc) { return "diffusion:" + rc.ablation; }

// ---------------------------------------------------------------------------
// Checkpoint-backed model loading
// ---------------------------------------------------------------------------

inline OmicsVae load_omics_vae(const RunConfig& rc, const std::string& ckpt_path) {
  Rng rng(1);
  OmicsVae model(omics_model_config(rc), rng);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  auto params = model.named_params();
  apply_checkpoint(ck, params, "omics");
  return model;
}

inline TextEncoder load_text_encoder(const RunConfig& rc, const std::string& ckpt_path,
                                     TextVocabulary& vocab_out) {
  vocab_out = TextVocabulary::load(ckpt_path + ".vocab.txt");
  Rng rng(1);
  TextEncoder model(text_model_config(rc, vocab_out.size()), rng);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  auto params = model.named_params();
  apply_checkpoint(ck, params, "text");
  model.freeze();
  return model;
}

inline DiffusionModel load_diffusion_model(const RunConfig& rc, const std::string& ckpt_path,
                                           SelfiesVocabulary& vocab_out) {
  vocab_out = SelfiesVocabulary::load(ckpt_path + ".selfies_vocab.txt");
  Rng rng(1);
  DiffusionModel model(diffusion_model_config(rc, vocab_out.size()), rng);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  auto params = model.named_params();
  apply_checkpoint(ck, params, diffusion_module_tag(rc));
  return model;
}

// ---------------------------------------------------------------------------
// Condition rows (description and/or expression profile per line)
// ---------------------------------------------------------------------------

struct ConditionRow {
  std::optional<std::string> description;
  std::optional<std::vector<float>> omics;
};

inline std::vector<ConditionRow> load_conditions(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open conditions file " + path);
  std::vector<ConditionRow> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      throw ParseError("conditions line " + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) fail("not valid JSON");
    if (!j.is_object()) fail("each line must be a JSON object");
    ConditionRow row;
    if (j.contains("description")) {
      if (!j.at("description").is_string()) fail("description must be a string");
      row.description = j.at("description").get<std::string>();
    }
    if (j.contains("omics")) {
      if (!j.at("omics").is_array()) fail("omics must be an array of numbers");
      std::vector<float> vals;
      for (const auto& v : j.at("omics")) {
        if (!v.is_number()) fail("omics must be an array of numbers");
        vals.push_back(v.get<float>());
      }
      row.omics = std::move(vals);
    }
    if (!row.description && !row.omics) fail("needs a description or an expression profile");
    out.push_back(std::move(row));
  }
  if (out.empty()) throw ContractError("conditions file " + path + " is empty");
  return out;
}

struct EncodedCondition {
  std::vector<float> text_hidden;  // L_d x h_text, or empty when text is off
  std::vector<float> text_mask;
  std::vector<float> z_o;          // d_o, or empty when profiles are off
};

inline EncodedCondition encode_condition(const RunConfig& rc, const ConditionRow& row,
                                         const TextEncoder* text, const TextVocabulary* tvocab,
                                         const OmicsVae* vae, int line_no) {
  auto fail = [&](const std::string& why) {
    throw ParseError("conditions line " + std::to_string(line_no) + ": " + why);
  };
  EncodedCondition out;
  if (rc.ablation != "no-text") {
    if (!row.description) fail("this run conditions on text, add a description");
    const TokenizedText t = tokenize_text(*tvocab, *row.description, rc.L_d);
    if (t.real_len == 0) fail("description has no usable words");
    const TextEmbedding e = text->encode_text(t);
    out.text_hidden = e.hidden;
    out.text_mask = t.attention_mask;
  }
  if (rc.ablation != "no-omics") {
    if (!row.omics) fail("this run conditions on expression profiles, add omics");
    if (static_cast<int>(row.omics->size()) != rc.K)
      fail("profile width " + std::to_string(row.omics->size()) + ", expected " +
           std::to_string(rc.K));
    out.z_o = vae->encode_mean(*row.omics);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage: corpus synthesis
// ---------------------------------------------------------------------------

inline CorpusStats stage_datagen(const RunConfig& rc, const std::string& out_path) {
  DatagenConfig dc;
  dc.n = rc.n;
  dc.seed = static_cast<std::uint64_t>(rc.seed);
  dc.genes = rc.K;
  dc.max_atoms = rc.max_atoms;
  dc.noise_sigma = rc.noise_sigma;
  dc.merges = rc.merges;
  dc.out_path = out_path;
  return generate_corpus(dc);
}

// ---------------------------------------------------------------------------
// Stage: profile encoder training
// ---------------------------------------------------------------------------

inline double stage_train_omics(const RunConfig& rc, const std::string& corpus_path,
                                const std::string& out_ckpt) {
  const LoadedCorpus corpus = load_corpus(corpus_path);
  if (corpus.omics_dim != rc.K)
    throw ContractError("corpus profile width " + std::to_string(corpus.omics_dim) +
                        " does not match configured K " + std::to_string(rc.K));
  std::vector<std::vector<float>> rows;
  rows.reserve(corpus.records.size());
  for (const auto& r : corpus.records) rows.push_back(r.omics);

  Rng rng(mix64(static_cast<std::uint64_t>(rc.seed)));
  OmicsVae model(omics_model_config(rc), rng);
  OmicsTrainConfig tc;
  tc.epochs = rc.epochs;
  tc.batch_size = rc.batch_size;
  tc.lr = rc.lr;
  tc.seed = static_cast<std::uint64_t>(rc.seed);
  const OmicsTrainLog log = train_omics_vae(model, rows, tc);

  save_checkpoint(out_ckpt, "omics", model.named_params());
  std::vector<std::vector<std::string>> csv;
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e)
    csv.push_back({std::to_string(e + 1), fmt(log.epoch_loss[e]), fmt(log.epoch_recon[e]),
                   fmt(log.epoch_kl[e])});
  write_csv(out_ckpt + ".loss.csv", "epoch,total,recon,kl", csv);
  return log.epoch_loss.back();
}

// ---------------------------------------------------------------------------
// Stage: text encoder training
// ---------------------------------------------------------------------------

inline double stage_train_text(const RunConfig& rc, const std::string& corpus_path,
                               const std::string& out_ckpt) {
  const LoadedCorpus corpus = load_corpus(corpus_path);
  std::vector<std::string> texts;
  texts.reserve(corpus.records.size());
  for (const auto& r : corpus.records) texts.push_back(r.description);

  const TextVocabulary vocab = TextVocabulary::build(texts);
  Rng rng(mix64(static_cast<std::uint64_t>(rc.seed)));
  TextEncoder model(text_model_config(rc, vocab.size()), rng);
  TextTrainConfig tc;
  tc.epochs = rc.epochs;
  tc.batch_size = rc.batch_size;
  tc.lr = rc.lr;
  tc.mask_ratio = rc.mask_ratio;
  tc.seed = static_cast<std::uint64_t>(rc.seed);
  tc.min_corpus = 8;
  const TextTrainLog log = train_text_encoder(model, vocab, texts, tc);

  save_checkpoint(out_ckpt, "text", model.named_params());
  vocab.save(out_ckpt + ".vocab.txt");
  std::vector<std::vector<std::string>> csv;
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e)
    csv.push_back({std::to_string(e + 1), fmt(log.epoch_loss[e])});
  write_csv(out_ckpt + ".loss.csv", "epoch,loss", csv);
  return log.epoch_loss.back();
}

// ---------------------------------------------------------------------------
// Stage: denoiser training
// ---------------------------------------------------------------------------

struct DiffusionStageResult {
  double final_total = 0.0;
  double final_mse = 0.0;
  double final_nll = 0.0;
  double final_align = 0.0;
};

inline DiffusionStageResult stage_train_diffusion(const RunConfig& rc,
                                                  const std::string& corpus_path,
                                                  const std::string& omics_ckpt,
                                                  const std::string& text_ckpt,
                                                  const std::string& out_ckpt,
                                                  bool raw_cosine_align = false) {
  const bool no_text = rc.ablation == "no-text";
  const bool no_omics = rc.ablation == "no-omics";
  if (!no_omics && omics_ckpt.empty())
    throw ConfigError("--omics-ckpt is required when the run conditions on expression profiles");
  if (!no_text && text_ckpt.empty())
    throw ConfigError("--text-ckpt is required when the run conditions on text");

  const LoadedCorpus corpus = load_corpus(corpus_path);
  const SelfiesVocabulary sv = SelfiesVocabulary::load(corpus_path + ".selfies_vocab.txt");

  std::optional<OmicsVae> vae;
  if (!no_omics) {
    if (corpus.omics_dim != rc.K)
      throw ContractError("corpus profile width " + std::to_string(corpus.omics_dim) +
                          " does not match configured K " + std::to_string(rc.K));
    vae.emplace(load_omics_vae(rc, omics_ckpt));
  }
  TextVocabulary tvocab;
  std::optional<TextEncoder> text;
  if (!no_text) text.emplace(load_text_encoder(rc, text_ckpt, tvocab));

  std::vector<DiffusionExample> examples;
  examples.reserve(corpus.records.size());
  for (const auto& r : corpus.records) {
    DiffusionExample ex;
    const std::vector<int> idx = sv.encode_indices(tokenize(r.selfies));
    ex.real_len = static_cast<int>(idx.size());
    ex.tokens = pad_indices(idx, rc.L_max);
    if (!no_text) {
      const TokenizedText t = tokenize_text(tvocab, r.description, rc.L_d);
      const TextEmbedding e = text->encode_text(t);
      ex.text_hidden = e.hidden;
      ex.text_mask = t.attention_mask;
    }
    if (!no_omics) ex.z_o = vae->encode_mean(r.omics);
    examples.push_back(std::move(ex));
  }

  Rng rng(mix64(static_cast<std::uint64_t>(rc.seed) ^ 0x5b7e9d3f11c84a62ULL));
  DiffusionModel model(diffusion_model_config(rc, sv.size()), rng);
  const NoiseSchedule schedule = NoiseSchedule::build(rc.T, "sqrt");
  DiffusionTrainConfig tc;
  tc.epochs = rc.epochs;
  tc.batch_size = rc.batch_size;
  tc.lr = rc.lr;
  tc.lambda = rc.lambda;
  tc.raw_cosine_align = raw_cosine_align;
  tc.seed = static_cast<std::uint64_t>(rc.seed);
  const DiffusionTrainLog log = train_diffusion(model, schedule, examples, tc);

  save_checkpoint(out_ckpt, diffusion_module_tag(rc), model.named_params());
  sv.save(out_ckpt + ".selfies_vocab.txt");
  std::vector<std::vector<std::string>> csv;
  for (std::size_t e = 0; e < log.epoch_total.size(); ++e)
    csv.push_back({std::to_string(e + 1), fmt(log.epoch_total[e]), fmt(log.epoch_mse[e]),
                   fmt(log.epoch_nll[e]), fmt(log.epoch_align[e])});
  write_csv(out_ckpt + ".loss.csv", "epoch,total,mse,nll,align", csv);
  return {log.epoch_total.back(), log.epoch_mse.back(), log.epoch_nll.back(),
          log.epoch_align.back()};
}

// ---------------------------------------------------------------------------
// Stage: sampling
// ---------------------------------------------------------------------------

inline std::uint64_t sample_seed(int run_seed, int condition, int sample, int per_condition) {
  const std::uint64_t cell =
      static_cast<std::uint64_t>(condition) * static_cast<std::uint64_t>(per_condition) +
      static_cast<std::uint64_t>(sample) + 1;
  return mix64(static_cast<std::uint64_t>(run_seed) ^ mix64(0xa24baed4963ee407ULL * cell));
}

struct GeneratedSample {
  int condition = 0;
  int sample = 0;
  std::optional<std::string> description;
  std::string selfies;
  std::string smiles;
  int atoms = 0;
  double noise_error = 0.0;
  int visited_steps = 0;
};

inline std::vector<GeneratedSample> stage_generate(const RunConfig& rc,
                                                   const std::string& diffusion_ckpt,
                                                   const std::string& omics_ckpt,
                                                   const std::string& text_ckpt,
                                                   const std::string& conditions_path,
                                                   int per_condition, const std::string& out_path) {
  if (per_condition < 1) throw ContractError("samples per condition must be at least 1");
  const bool no_text = rc.ablation == "no-text";
  const bool no_omics = rc.ablation == "no-omics";
  if (!no_omics && omics_ckpt.empty())
    throw ConfigError("--omics-ckpt is required when the run conditions on expression profiles");
  if (!no_text && text_ckpt.empty())
    throw ConfigError("--text-ckpt is required when the run conditions on text");

  SelfiesVocabulary sv;
  const DiffusionModel model = load_diffusion_model(rc, diffusion_ckpt, sv);
  const NoiseSchedule schedule = NoiseSchedule::build(rc.T, "sqrt");
  std::optional<OmicsVae> vae;
  if (!no_omics) vae.emplace(load_omics_vae(rc, omics_ckpt));
  TextVocabulary tvocab;
  std::optional<TextEncoder> text;
  if (!no_text) text.emplace(load_text_encoder(rc, text_ckpt, tvocab));

  const std::vector<ConditionRow> rows = load_conditions(conditions_path);
  std::vector<EncodedCondition> encoded;
  encoded.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    encoded.push_back(encode_condition(rc, rows[i], text ? &*text : nullptr,
                                       text ? &tvocab : nullptr, vae ? &*vae : nullptr,
                                       static_cast<int>(i) + 1));

  std::vector<GeneratedSample> out;
  out.reserve(rows.size() * static_cast<std::size_t>(per_condition));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const EncodedCondition& cond = encoded[i];
    for (int j = 0; j < per_condition; ++j) {
      Rng rng(sample_seed(rc.seed, static_cast<int>(i), j, per_condition));
      const SampleResult res = sample_tokens(
          model, schedule, rc.skip_stride, no_text ? nullptr : &cond.text_hidden,
          no_text ? nullptr : &cond.text_mask, no_omics ? nullptr : &cond.z_o, rng);
      MoleculeGraph g = decode_to_graph(sv.decode_indices(res.tokens));
      // An all-padding derivation has no atoms; report it as methane so every
      // sample names a concrete molecule.
      if (g.atom_count() == 0) g = decode_selfies("[C]");
      GeneratedSample s;
      s.condition = static_cast<int>(i);
      s.sample = j;
      s.description = rows[i].description;
      s.selfies = selfies_string(graph_to_selfies(g));
      s.smiles = graph_to_smiles(g);
      s.atoms = g.atom_count();
      s.noise_error = res.noise_error;
      s.visited_steps = res.visited_steps;
      out.push_back(std::move(s));
    }
  }

  std::ofstream f(out_path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + out_path);
  for (const auto& s : out) {
    nlohmann::ordered_json j;
    j["condition"] = s.condition;
    j["sample"] = s.sample;
    if (s.description) j["description"] = *s.description;
    j["selfies"] = s.selfies;
    j["smiles"] = s.smiles;
    j["atoms"] = s.atoms;
    j["noise_error"] = s.noise_error;
    j["visited_steps"] = s.visited_steps;
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("failed writing " + out_path);
  return out;
}

// ---------------------------------------------------------------------------
// Stage: metric battery
// ---------------------------------------------------------------------------

// Any JSONL whose rows carry a "selfies" string qualifies as a molecule set,
// so generated files and synthesized corpora are both accepted.
inline std::vector<std::string> load_selfies_column(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open molecule file " + path);
  std::vector<std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      throw ParseError(path + " line " + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) fail("not valid JSON");
    if (!j.is_object() || !j.contains("selfies") || !j.at("selfies").is_string())
      fail("needs a selfies string field");
    out.push_back(j.at("selfies").get<std::string>());
  }
  if (out.empty()) throw ContractError("molecule file " + path + " is empty");
  return out;
}

inline std::vector<std::string> token_texts(const std::string& selfies) {
  std::vector<std::string> out;
  for (const auto& t : tokenize(selfies)) out.push_back(t.text);
  return out;
}

struct EvalNumbers {
  int n_generated = 0;
  int n_reference = 0;
  double validity = 0.0;     // fractions; tables show the first three as percent
  double uniqueness = 0.0;
  double novelty = 0.0;
  double levenshtein = 0.0;  // mean paired token-level similarity
  double fcd = 0.0;
  double morgan = 0.0;       // mean paired circular-fingerprint overlap
  double maccs = 0.0;        // mean paired structural-key overlap
};

// Pairing convention: generated row i is scored against reference row
// i mod |R|, so evaluating a set against itself is the identity pairing.
inline EvalNumbers evaluate_sets(const std::vector<std::string>& generated,
                                 const std::vector<std::string>& reference) {
  if (generated.empty() || reference.empty())
    throw ContractError("metric battery needs nonempty molecule sets");
  auto decode_all = [](const std::vector<std::string>& sel, const char* which) {
    std::vector<MoleculeGraph> graphs;
    graphs.reserve(sel.size());
    for (std::size_t i = 0; i < sel.size(); ++i) {
      try {
        graphs.push_back(decode_selfies(sel[i]));
      } catch (const Error&) {
        throw ParseError(std::string(which) + " molecule " + std::to_string(i + 1) +
                         " is not a readable molecule string");
      }
    }
    return graphs;
  };
  const std::vector<MoleculeGraph> gen = decode_all(generated, "generated");
  const std::vector<MoleculeGraph> ref = decode_all(reference, "reference");

  EvalNumbers out;
  out.n_generated = static_cast<int>(gen.size());
  out.n_reference = static_cast<int>(ref.size());
  out.validity = validity(gen);
  out.uniqueness = uniqueness(gen);
  out.novelty = novelty(gen, ref);
  out.fcd = fcd(gen, ref);

  double lev = 0.0, morg = 0.0, keys = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    const std::size_t r = i % ref.size();
    lev += levenshtein_similarity(token_texts(generated[i]), token_texts(reference[r]));
    morg += tanimoto(morgan_fingerprint(gen[i]), morgan_fingerprint(ref[r]));
    keys += tanimoto(keys_fingerprint(gen[i]), keys_fingerprint(ref[r]));
  }
  const double n = static_cast<double>(gen.size());
  out.levenshtein = lev / n;
  out.morgan = morg / n;
  out.maccs = keys / n;
  return out;
}

inline double paired_corpus_bleu(const std::vector<std::string>& generated,
                                 const std::vector<std::string>& reference) {
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> pairs;
  pairs.reserve(generated.size());
  for (std::size_t i = 0; i < generated.size(); ++i)
    pairs.emplace_back(token_texts(generated[i]), token_texts(reference[i % reference.size()]));
  return corpus_bleu(pairs);
}

inline const std::string kEvalCsvHeader = "Validity,Uniqueness,Novelty,Levenshtein,FCD,Morgan,MACCS";

inline std::vector<std::string> eval_csv_row(const EvalNumbers& ev) {
  return {fmt(100.0 * ev.validity, 3), fmt(100.0 * ev.uniqueness, 3), fmt(100.0 * ev.novelty, 3),
          fmt(ev.levenshtein), fmt(ev.fcd), fmt(ev.morgan), fmt(ev.maccs)};
}

inline void write_eval_json(const std::string& path, const EvalNumbers& ev) {
  nlohmann::ordered_json j;
  j["n_generated"] = ev.n_generated;
  j["n_reference"] = ev.n_reference;
  j["validity"] = ev.validity;
  j["uniqueness"] = ev.uniqueness;
  j["novelty"] = ev.novelty;
  j["levenshtein"] = ev.levenshtein;
  j["fcd"] = ev.fcd;
  j["morgan"] = ev.morgan;
  j["maccs"] = ev.maccs;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Stage: hit accounting
// ---------------------------------------------------------------------------

// Extract the functional groups a description asks for. Returns no value when
// the text names nothing recognizable, and an empty list when it explicitly
// says no listed functional groups are present.
inline std::optional<std::vector<std::string>> parse_listed_groups(const std::string& description) {
  if (description.find("no listed functional groups") != std::string::npos)
    return std::vector<std::string>{};
  std::vector<std::string> found;
  for (const char* name : kFunctionalGroupNames)
    if (description.find(name) != std::string::npos) found.emplace_back(name);
  if (found.empty()) return std::nullopt;
  return found;
}

inline bool molecule_matches_groups(const MoleculeGraph& g,
                                    const std::optional<std::vector<std::string>>& target) {
  if (!target) return false;
  if (target->empty()) {
    for (const char* name : kFunctionalGroupNames)
      if (functional_group_match(g, name)) return false;
    return true;
  }
  for (const auto& name : *target)
    if (!functional_group_match(g, name)) return false;
  return true;
}

struct HitStageResult {
  int count = 0;
  double delta = 0.0;
  double hit_ratio = 0.0;
  double group_match_rate = 0.0;
};

inline HitStageResult stage_hit_ratio(const std::string& generated_path,
                                      std::optional<double> delta_override,
                                      const std::string& out_json, const std::string& out_csv) {
  std::ifstream f(generated_path);
  if (!f) throw IoError("cannot open generated file " + generated_path);
  std::vector<HitRecord> records;
  std::string line;
  int line_no = 0;
  int matches = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      throw ParseError(generated_path + " line " + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) fail("not valid JSON");
    if (!j.is_object() || !j.contains("selfies") || !j.at("selfies").is_string())
      fail("needs a selfies string field");
    if (!j.contains("noise_error") || !j.at("noise_error").is_number())
      fail("needs a numeric noise_error field");
    HitRecord rec;
    rec.noise_error = j.at("noise_error").get<double>();
    if (j.contains("description") && j.at("description").is_string()) {
      MoleculeGraph g;
      try {
        g = decode_selfies(j.at("selfies").get<std::string>());
      } catch (const Error&) {
        fail("not a readable molecule string");
      }
      rec.group_match =
          molecule_matches_groups(g, parse_listed_groups(j.at("description").get<std::string>()));
    }
    matches += rec.group_match ? 1 : 0;
    records.push_back(rec);
  }
  if (records.empty()) throw ContractError("generated file " + generated_path + " is empty");

  const HitRatioReport report = hit_ratio_report(records, delta_override);
  HitStageResult out;
  out.count = static_cast<int>(records.size());
  out.delta = report.delta;
  out.hit_ratio = report.ratio;
  out.group_match_rate = static_cast<double>(matches) / static_cast<double>(records.size());

  if (!out_json.empty()) {
    nlohmann::ordered_json j;
    j["count"] = out.count;
    j["delta"] = out.delta;
    j["hit_ratio"] = out.hit_ratio;
    j["group_match_rate"] = out.group_match_rate;
    std::ofstream jf(out_json, std::ios::trunc);
    if (!jf) throw IoError("cannot write " + out_json);
    jf << j.dump(2) << "\n";
  }
  if (!out_csv.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < records.size(); ++i)
      rows.push_back({std::to_string(i + 1), records[i].group_match ? "1" : "0",
                      fmt(records[i].noise_error), report.hits[i] ? "1" : "0"});
    write_csv(out_csv, "index,group_match,noise_error,hit", rows);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Composite stages: pipeline, weight sweep, conditioning ablations
// ---------------------------------------------------------------------------

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

// First `count` corpus rows become a conditions file (description + profile).
inline void write_conditions_from_corpus(const std::string& corpus_path, int count,
                                         const std::string& out_path) {
  const LoadedCorpus corpus = load_corpus(corpus_path);
  if (count < 1) throw ContractError("condition count must be at least 1");
  if (count > static_cast<int>(corpus.records.size()))
    throw ContractError("asked for " + std::to_string(count) + " conditions, corpus has " +
                        std::to_string(corpus.records.size()));
  std::ofstream f(out_path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + out_path);
  for (int i = 0; i < count; ++i) {
    const auto& r = corpus.records[static_cast<std::size_t>(i)];
    nlohmann::ordered_json j;
    j["description"] = r.description;
    j["omics"] = r.omics;
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("failed writing " + out_path);
}

struct PipelinePaths {
  std::string corpus, omics_ckpt, text_ckpt, diffusion_ckpt, conditions, generated, metrics_csv,
      metrics_json, hits_json;
};

inline PipelinePaths pipeline_paths(const std::string& workdir) {
  PipelinePaths p;
  p.corpus = join_path(workdir, "corpus.jsonl");
  p.omics_ckpt = join_path(workdir, "omics.ckpt");
  p.text_ckpt = join_path(workdir, "text.ckpt");
  p.diffusion_ckpt = join_path(workdir, "diffusion.ckpt");
  p.conditions = join_path(workdir, "conditions.jsonl");
  p.generated = join_path(workdir, "generated.jsonl");
  p.metrics_csv = join_path(workdir, "metrics.csv");
  p.metrics_json = join_path(workdir, "metrics.json");
  p.hits_json = join_path(workdir, "hits.json");
  return p;
}

inline EvalNumbers stage_pipeline(const RunConfig& rc, const std::string& workdir, int samples,
                                  std::ostream& log) {
  std::filesystem::create_directories(workdir);
  const PipelinePaths p = pipeline_paths(workdir);
  const CorpusStats stats = stage_datagen(rc, p.corpus);
  log << "corpus: " << p.corpus << " (" << stats.count << " records)\n";
  const bool no_text = rc.ablation == "no-text";
  const bool no_omics = rc.ablation == "no-omics";
  if (!no_omics) {
    const double loss = stage_train_omics(rc, p.corpus, p.omics_ckpt);
    log << "profile encoder: " << p.omics_ckpt << " (final loss " << fmt(loss, 4) << ")\n";
  }
  if (!no_text) {
    const double loss = stage_train_text(rc, p.corpus, p.text_ckpt);
    log << "text encoder: " << p.text_ckpt << " (final loss " << fmt(loss, 4) << ")\n";
  }
  const DiffusionStageResult d =
      stage_train_diffusion(rc, p.corpus, no_omics ? "" : p.omics_ckpt,
                            no_text ? "" : p.text_ckpt, p.diffusion_ckpt);
  log << "denoiser: " << p.diffusion_ckpt << " (final loss " << fmt(d.final_total, 4) << ")\n";
  write_conditions_from_corpus(p.corpus, samples, p.conditions);
  stage_generate(rc, p.diffusion_ckpt, no_omics ? "" : p.omics_ckpt, no_text ? "" : p.text_ckpt,
                 p.conditions, 1, p.generated);
  log << "samples: " << p.generated << " (" << samples << ")\n";
  const EvalNumbers ev = evaluate_sets(load_selfies_column(p.generated),
                                       load_selfies_column(p.corpus));
  write_csv(p.metrics_csv, kEvalCsvHeader, {eval_csv_row(ev)});
  write_eval_json(p.metrics_json, ev);
  stage_hit_ratio(p.generated, std::nullopt, p.hits_json, "");
  log << "metrics: " << p.metrics_csv << "\n";
  return ev;
}

inline const std::vector<float> kSweepWeights = {0.0f, 0.1f, 0.3f, 0.5f, 0.7f, 0.9f, 1.0f};

inline const std::string kSweepCsvHeader =
    "Lambda,Validity,Uniqueness,Novelty,BLEU,FCD,Levenshtein,MACCS,Morgan";

inline void stage_lambda_sweep(const RunConfig& rc, const std::string& workdir,
                               const std::string& out_csv, int samples, std::ostream& log) {
  if (rc.ablation != "full")
    throw ConfigError("the alignment-weight sweep trains fully conditioned models");
  std::filesystem::create_directories(workdir);
  const std::string corpus = join_path(workdir, "corpus.jsonl");
  const std::string omics_ckpt = join_path(workdir, "omics.ckpt");
  const std::string text_ckpt = join_path(workdir, "text.ckpt");
  const std::string conditions = join_path(workdir, "conditions.jsonl");

  const CorpusStats stats = stage_datagen(rc, corpus);
  log << "corpus: " << corpus << " (" << stats.count << " records)\n";
  stage_train_omics(rc, corpus, omics_ckpt);
  stage_train_text(rc, corpus, text_ckpt);
  write_conditions_from_corpus(corpus, samples, conditions);
  const std::vector<std::string> reference = load_selfies_column(corpus);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < kSweepWeights.size(); ++k) {
    RunConfig rck = rc;
    rck.lambda = kSweepWeights[k];
    const std::string tag = "l" + std::to_string(k);
    const std::string ckpt = join_path(workdir, "diffusion_" + tag + ".ckpt");
    const std::string generated = join_path(workdir, "generated_" + tag + ".jsonl");
    stage_train_diffusion(rck, corpus, omics_ckpt, text_ckpt, ckpt);
    stage_generate(rck, ckpt, omics_ckpt, text_ckpt, conditions, 1, generated);
    const std::vector<std::string> gen = load_selfies_column(generated);
    const EvalNumbers ev = evaluate_sets(gen, reference);
    const double bleu_score = paired_corpus_bleu(gen, reference);
    rows.push_back({fmt(rck.lambda, 1), fmt(100.0 * ev.validity, 3), fmt(100.0 * ev.uniqueness, 3),
                    fmt(100.0 * ev.novelty, 3), fmt(bleu_score), fmt(ev.fcd), fmt(ev.levenshtein),
                    fmt(ev.maccs), fmt(ev.morgan)});
    log << "weight " << fmt(rck.lambda, 1) << ": validity " << fmt(100.0 * ev.validity, 1)
        << "%, circular-fingerprint overlap " << fmt(ev.morgan, 3) << "\n";
  }
  write_csv(out_csv, kSweepCsvHeader, rows);
  log << "sweep grid: " << out_csv << "\n";
}

inline const std::vector<std::string> kAblationSettings = {"full", "no-text", "no-omics"};

inline const std::string kAblateCsvHeader =
    "Setting,Validity,Uniqueness,Novelty,Levenshtein,FCD,Morgan,MACCS";

inline void stage_ablate(const RunConfig& rc, const std::string& workdir,
                         const std::string& out_csv, int samples, std::ostream& log) {
  std::filesystem::create_directories(workdir);
  const std::string corpus = join_path(workdir, "corpus.jsonl");
  const std::string omics_ckpt = join_path(workdir, "omics.ckpt");
  const std::string text_ckpt = join_path(workdir, "text.ckpt");
  const std::string conditions = join_path(workdir, "conditions.jsonl");

  const CorpusStats stats = stage_datagen(rc, corpus);
  log << "corpus: " << corpus << " (" << stats.count << " records)\n";
  stage_train_omics(rc, corpus, omics_ckpt);
  stage_train_text(rc, corpus, text_ckpt);
  write_conditions_from_corpus(corpus, samples, conditions);
  const std::vector<std::string> reference = load_selfies_column(corpus);

  std::vector<std::vector<std::string>> rows;
  nlohmann::ordered_json hits;
  for (const std::string& setting : kAblationSettings) {
    RunConfig rcs = rc;
    rcs.ablation = setting;
    const bool no_text = setting == "no-text";
    const bool no_omics = setting == "no-omics";
    const std::string ckpt = join_path(workdir, "diffusion_" + setting + ".ckpt");
    const std::string generated = join_path(workdir, "generated_" + setting + ".jsonl");
    stage_train_diffusion(rcs, corpus, no_omics ? "" : omics_ckpt, no_text ? "" : text_ckpt, ckpt);
    stage_generate(rcs, ckpt, no_omics ? "" : omics_ckpt, no_text ? "" : text_ckpt, conditions, 1,
                   generated);
    const std::vector<std::string> gen = load_selfies_column(generated);
    const EvalNumbers ev = evaluate_sets(gen, reference);
    std::vector<std::string> row = {setting};
    for (auto& cell : eval_csv_row(ev)) row.push_back(std::move(cell));
    rows.push_back(std::move(row));
    const HitStageResult hr = stage_hit_ratio(generated, std::nullopt, "", "");
    hits[setting] = {{"count", hr.count},
                     {"delta", hr.delta},
                     {"hit_ratio", hr.hit_ratio},
                     {"group_match_rate", hr.group_match_rate}};
    log << setting << ": validity " << fmt(100.0 * ev.validity, 1) << "%, hit ratio "
        << fmt(hr.hit_ratio, 3) << "\n";
  }
  write_csv(out_csv, kAblateCsvHeader, rows);
  std::ofstream jf(out_csv + ".hits.json", std::ios::trunc);
  if (!jf) throw IoError("cannot write " + out_csv + ".hits.json");
  jf << hits.dump(2) << "\n";
  log << "ablation grid: " << out_csv << "\n";
}

// ---------------------------------------------------------------------------
// Stage: latent-reconstruction scatter export
// ---------------------------------------------------------------------------

inline void stage_pca_export(const RunConfig& rc, const std::string& corpus_path,
                             const std::string& omics_ckpt, const std::string& out_csv,
                             int components, int limit) {
  const LoadedCorpus corpus = load_corpus(corpus_path);
  if (corpus.omics_dim != rc.K)
    throw ContractError("corpus profile width " + std::to_string(corpus.omics_dim) +
                        " does not match configured K " + std::to_string(rc.K));
  const OmicsVae vae = load_omics_vae(rc, omics_ckpt);
  std::vector<std::vector<double>> original, reconstructed;
  const std::size_t count = limit > 0
                                ? std::min<std::size_t>(corpus.records.size(),
                                                        static_cast<std::size_t>(limit))
                                : corpus.records.size();
  for (std::size_t i = 0; i < count; ++i) {
    const auto& profile = corpus.records[i].omics;
    const std::vector<float> recon = vae.reconstruct(profile);
    original.emplace_back(profile.begin(), profile.end());
    reconstructed.emplace_back(recon.begin(), recon.end());
  }
  pca_export_csv(out_csv, original, reconstructed, components);
}

// ---------------------------------------------------------------------------
// Argument parsing and dispatch
// ---------------------------------------------------------------------------

namespace detail {

struct CommonOpts {
  std::string config_path;
  std::optional<int> seed, epochs, n, stride, batch_size;
  std::optional<float> lambda_v;
  std::optional<std::string> ablation;
};

inline void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "JSON run configuration");
  cmd->add_option("--seed", o.seed, "override the run seed");
  cmd->add_option("--epochs", o.epochs, "override the epoch count");
  cmd->add_option("--n", o.n, "override the record count");
  cmd->add_option("--stride", o.stride, "override the sampling stride");
  cmd->add_option("--batch-size", o.batch_size, "override the batch size");
  cmd->add_option("--lambda", o.lambda_v, "override the alignment weight");
  cmd->add_option("--ablation", o.ablation, "full, no-text, or no-omics");
}

inline RunConfig resolve(const CommonOpts& o) {
  RunConfig rc = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.seed) rc.seed = *o.seed;
  if (o.epochs) rc.epochs = *o.epochs;
  if (o.n) rc.n = *o.n;
  if (o.stride) rc.skip_stride = *o.stride;
  if (o.batch_size) rc.batch_size = *o.batch_size;
  if (o.lambda_v) rc.lambda = *o.lambda_v;
  if (o.ablation) rc.ablation = *o.ablation;
  validate_run_config(rc);
  return rc;
}

}  // namespace detail

inline int dispatch(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conditioned molecular generation: synthetic corpora, encoder and denoiser "
               "training, sampling, and evaluation"};
  app.require_subcommand(1);

  // datagen
  auto* datagen = app.add_subcommand("datagen", "synthesize a paired text+profile corpus");
  detail::CommonOpts dg_opts;
  detail::add_common(datagen, dg_opts);
  std::string dg_out = "corpus.jsonl";
  datagen->add_option("--out", dg_out, "corpus path (JSONL)");
  datagen->callback([&] {
    const RunConfig rc = detail::resolve(dg_opts);
    const CorpusStats s = stage_datagen(rc, dg_out);
    out << "wrote " << dg_out << ": " << s.count << " records, profile width " << s.omics_dim
        << ", mean molecular tokens " << fmt(s.selfies_length_mean, 2) << ", mean text words "
        << fmt(s.text_length_mean, 2) << "\n";
  });

  // train-omics
  auto* tro = app.add_subcommand("train-omics", "train the expression-profile encoder");
  detail::CommonOpts tro_opts;
  detail::add_common(tro, tro_opts);
  std::string tro_corpus, tro_out;
  tro->add_option("--corpus", tro_corpus, "training corpus (JSONL)")->required();
  tro->add_option("--out", tro_out, "checkpoint path")->required();
  tro->callback([&] {
    const RunConfig rc = detail::resolve(tro_opts);
    const double loss = stage_train_omics(rc, tro_corpus, tro_out);
    out << "wrote " << tro_out << " (final loss " << fmt(loss, 4) << ")\n";
  });

  // train-text
  auto* trt = app.add_subcommand("train-text", "train the masked-token text encoder");
  detail::CommonOpts trt_opts;
  detail::add_common(trt, trt_opts);
  std::string trt_corpus, trt_out;
  trt->add_option("--corpus", trt_corpus, "training corpus (JSONL)")->required();
  trt->add_option("--out", trt_out, "checkpoint path")->required();
  trt->callback([&] {
    const RunConfig rc = detail::resolve(trt_opts);
    const double loss = stage_train_text(rc, trt_corpus, trt_out);
    out << "wrote " << trt_out << " (final loss " << fmt(loss, 4) << ")\n";
  });

  // train-diffusion
  auto* trd = app.add_subcommand("train-diffusion", "train the conditioned denoiser");
  detail::CommonOpts trd_opts;
  detail::add_common(trd, trd_opts);
  std::string trd_corpus, trd_out, trd_omics, trd_text;
  bool trd_raw_cos = false;
  trd->add_option("--corpus", trd_corpus, "training corpus (JSONL)")->required();
  trd->add_option("--out", trd_out, "checkpoint path")->required();
  trd->add_option("--omics-ckpt", trd_omics, "trained profile encoder");
  trd->add_option("--text-ckpt", trd_text, "trained text encoder");
  trd->add_flag("--raw-cosine-align", trd_raw_cos,
                "alignment term is the raw cosine instead of the cosine distance");
  trd->callback([&] {
    const RunConfig rc = detail::resolve(trd_opts);
    const DiffusionStageResult r =
        stage_train_diffusion(rc, trd_corpus, trd_omics, trd_text, trd_out, trd_raw_cos);
    out << "wrote " << trd_out << " (final loss " << fmt(r.final_total, 4) << ")\n";
  });

  // generate
  auto* gen = app.add_subcommand("generate", "sample molecules for each condition row");
  detail::CommonOpts gen_opts;
  detail::add_common(gen, gen_opts);
  std::string gen_ckpt, gen_omics, gen_text, gen_conditions, gen_out;
  int gen_samples = 1;
  gen->add_option("--ckpt", gen_ckpt, "trained denoiser checkpoint")->required();
  gen->add_option("--omics-ckpt", gen_omics, "trained profile encoder");
  gen->add_option("--text-ckpt", gen_text, "trained text encoder");
  gen->add_option("--conditions", gen_conditions, "condition rows (JSONL)")->required();
  gen->add_option("--samples", gen_samples, "samples per condition");
  gen->add_option("--out", gen_out, "generated molecules (JSONL)")->required();
  gen->callback([&] {
    const RunConfig rc = detail::resolve(gen_opts);
    const auto rows =
        stage_generate(rc, gen_ckpt, gen_omics, gen_text, gen_conditions, gen_samples, gen_out);
    out << "wrote " << gen_out << ": " << rows.size() << " samples\n";
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score a generated set against a reference set");
  std::string ev_gen, ev_ref, ev_csv, ev_json;
  ev->add_option("--generated", ev_gen, "generated molecules (JSONL)")->required();
  ev->add_option("--reference", ev_ref, "reference molecules (JSONL)")->required();
  ev->add_option("--out-csv", ev_csv, "metric table path");
  ev->add_option("--out-json", ev_json, "metric report path");
  ev->callback([&] {
    const EvalNumbers numbers =
        evaluate_sets(load_selfies_column(ev_gen), load_selfies_column(ev_ref));
    if (!ev_csv.empty()) write_csv(ev_csv, kEvalCsvHeader, {eval_csv_row(numbers)});
    if (!ev_json.empty()) write_eval_json(ev_json, numbers);
    out << "validity " << fmt(100.0 * numbers.validity, 3) << "%, uniqueness "
        << fmt(100.0 * numbers.uniqueness, 3) << "%, novelty " << fmt(100.0 * numbers.novelty, 3)
        << "%, levenshtein " << fmt(numbers.levenshtein) << ", fcd " << fmt(numbers.fcd)
        << ", morgan " << fmt(numbers.morgan) << ", maccs " << fmt(numbers.maccs) << "\n";
  });

  // hit-ratio
  auto* hr = app.add_subcommand("hit-ratio", "score generated samples against their conditions");
  std::string hr_gen, hr_json, hr_csv;
  std::optional<double> hr_delta;
  hr->add_option("--generated", hr_gen, "generated molecules (JSONL)")->required();
  hr->add_option("--delta", hr_delta, "noise-error threshold (default: run mean)");
  hr->add_option("--out-json", hr_json, "summary path");
  hr->add_option("--out-csv", hr_csv, "per-sample table path");
  hr->callback([&] {
    const HitStageResult r = stage_hit_ratio(hr_gen, hr_delta, hr_json, hr_csv);
    out << "hit ratio " << fmt(r.hit_ratio, 4) << " over " << r.count << " samples (threshold "
        << fmt(r.delta, 4) << ", group match rate " << fmt(r.group_match_rate, 4) << ")\n";
  });

  // lambda-sweep
  auto* sw = app.add_subcommand("lambda-sweep", "metric grid over alignment weights");
  detail::CommonOpts sw_opts;
  detail::add_common(sw, sw_opts);
  std::string sw_workdir, sw_out;
  int sw_samples = 80;
  sw->add_option("--workdir", sw_workdir, "artifact directory")->required();
  sw->add_option("--out", sw_out, "grid CSV path (default <workdir>/lambda_metrics.csv)");
  sw->add_option("--samples", sw_samples, "generated samples per weight");
  sw->callback([&] {
    const RunConfig rc = detail::resolve(sw_opts);
    const std::string csv = sw_out.empty() ? join_path(sw_workdir, "lambda_metrics.csv") : sw_out;
    stage_lambda_sweep(rc, sw_workdir, csv, sw_samples, out);
  });

  // ablate
  auto* ab = app.add_subcommand("ablate", "metric grid over conditioning ablations");
  detail::CommonOpts ab_opts;
  detail::add_common(ab, ab_opts);
  std::string ab_workdir, ab_out;
  int ab_samples = 80;
  ab->add_option("--workdir", ab_workdir, "artifact directory")->required();
  ab->add_option("--out", ab_out, "grid CSV path (default <workdir>/ablation_metrics.csv)");
  ab->add_option("--samples", ab_samples, "generated samples per setting");
  ab->callback([&] {
    const RunConfig rc = detail::resolve(ab_opts);
    const std::string csv = ab_out.empty() ? join_path(ab_workdir, "ablation_metrics.csv") : ab_out;
    stage_ablate(rc, ab_workdir, csv, ab_samples, out);
  });

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "corpus through metrics in one run");
  detail::CommonOpts pl_opts;
  detail::add_common(pl, pl_opts);
  std::string pl_workdir;
  int pl_samples = 80;
  pl->add_option("--workdir", pl_workdir, "artifact directory")->required();
  pl->add_option("--samples", pl_samples, "generated sample count");
  pl->callback([&] {
    const RunConfig rc = detail::resolve(pl_opts);
    stage_pipeline(rc, pl_workdir, pl_samples, out);
  });

  // pca-export
  auto* pc = app.add_subcommand("pca-export", "project profiles and their reconstructions");
  detail::CommonOpts pc_opts;
  detail::add_common(pc, pc_opts);
  std::string pc_corpus, pc_ckpt, pc_out;
  int pc_components = 3, pc_limit = 0;
  pc->add_option("--corpus", pc_corpus, "profile corpus (JSONL)")->required();
  pc->add_option("--omics-ckpt", pc_ckpt, "trained profile encoder")->required();
  pc->add_option("--out", pc_out, "scatter CSV path")->required();
  pc->add_option("--components", pc_components, "projection dimensions");
  pc->add_option("--limit", pc_limit, "use only the first rows (0 = all)");
  pc->callback([&] {
    const RunConfig rc = detail::resolve(pc_opts);
    stage_pca_export(rc, pc_corpus, pc_ckpt, pc_out, pc_components, pc_limit);
    out << "wrote " << pc_out << "\n";
  });

  std::vector<std::string> argv_strings;
  argv_strings.push_back("todi");
  for (auto& a : args) argv_strings.push_back(std::move(a));
  std::vector<const char*> argv;
  argv.reserve(argv_strings.size());
  for (const auto& s : argv_strings) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? 0 : 2;
  }
  return 0;
}

// Exit codes: 0 success, 2 configuration or input-text problems, 3 file
// system problems, 4 contract violations, 5 numeric failures, 1 anything else.
inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(std::move(args), out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const todi::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return 4;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return 4;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return 5;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

inline int run_cli(std::vector<std::string> args) {
  return run_cli(std::move(args), std::cout, std::cerr);
}

}  // namespace cli
}  // namespace todi
