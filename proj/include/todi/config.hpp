#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "todi/errors.hpp"

namespace todi {

// One flat bundle of run settings shared by every subcommand. A JSON config
// file may override any subset; unknown keys are rejected so typos fail loudly.
struct RunConfig {
  int seed = 1;
  int K = 978;           // expression profile width
  int L_max = 258;       // molecular token positions per example
  int L_d = 64;          // text token positions per description
  int H = 64;            // denoiser width
  int d_emb = 32;        // molecular token embedding size
  int d_o = 128;         // profile latent size
  int T = 2000;          // forward-noising steps
  int skip_stride = 100; // reverse-time stride when sampling
  float lambda = 0.3f;   // weight of the profile-alignment loss term
  float beta = 1.0f;     // weight of the profile-encoder KL term
  float lr = 1e-4f;
  float dropout_omics = 0.2f;
  float dropout_diff = 0.1f;
  int epochs = 30;
  int batch_size = 32;
  std::string ablation = "full";  // full | no-text | no-omics
  int n = 2000;          // records to synthesize
  int max_atoms = 16;
  float noise_sigma = 0.3f;
  int merges = 64;       // learned molecular-token merges
  int h_text = 64;       // text encoder width
  int heads = 4;
  int blocks = 2;
  float mask_ratio = 0.15f;
};

inline void validate_run_config(const RunConfig& c) {
  auto positive = [](int v, const char* what) {
    if (v < 1) throw ConfigError(std::string(what) + " must be at least 1");
  };
  positive(c.K, "K");
  positive(c.L_max, "L_max");
  positive(c.L_d, "L_d");
  positive(c.H, "H");
  positive(c.d_emb, "d_emb");
  positive(c.d_o, "d_o");
  positive(c.epochs, "epochs");
  positive(c.batch_size, "batch_size");
  positive(c.n, "n");
  positive(c.max_atoms, "max_atoms");
  positive(c.h_text, "h_text");
  positive(c.heads, "heads");
  positive(c.blocks, "blocks");
  if (c.merges < 0) throw ConfigError("merges must be non-negative");
  if (c.T < 2) throw ConfigError("T must be at least 2");
  if (c.skip_stride < 1 || c.skip_stride > c.T)
    throw ConfigError("skip_stride must lie in [1, T]");
  if (c.lambda < 0.0f) throw ConfigError("lambda must be non-negative");
  if (c.beta < 0.0f) throw ConfigError("beta must be non-negative");
  if (!(c.lr > 0.0f)) throw ConfigError("lr must be positive");
  if (c.dropout_omics < 0.0f || c.dropout_omics >= 1.0f)
    throw ConfigError("dropout_omics must lie in [0, 1)");
  if (c.dropout_diff < 0.0f || c.dropout_diff >= 1.0f)
    throw ConfigError("dropout_diff must lie in [0, 1)");
  if (c.noise_sigma < 0.0f) throw ConfigError("noise_sigma must be non-negative");
  if (!(c.mask_ratio > 0.0f && c.mask_ratio < 1.0f))
    throw ConfigError("mask_ratio must lie in (0, 1)");
  if (c.H % c.heads != 0) throw ConfigError("heads must divide H");
  if (c.h_text % c.heads != 0) throw ConfigError("heads must divide h_text");
  if (c.ablation != "full" && c.ablation != "no-text" && c.ablation != "no-omics")
    throw ConfigError("ablation must be one of full, no-text, no-omics (got '" + c.ablation +
                      "')");
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  RunConfig c;
  auto geti = [&](const char* key, int& slot) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_number_integer())
      throw ConfigError(std::string("config key ") + key + " must be an integer");
    slot = j.at(key).get<int>();
  };
  auto getf = [&](const char* key, float& slot) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_number())
      throw ConfigError(std::string("config key ") + key + " must be a number");
    slot = j.at(key).get<float>();
  };
  static const std::set<std::string> known = {
      "seed",       "K",          "L_max",        "L_d",        "H",
      "d_emb",      "d_o",        "T",            "skip_stride", "lambda",
      "beta",       "lr",         "dropout_omics", "dropout_diff", "epochs",
      "batch_size", "ablation",   "n",            "max_atoms",  "noise_sigma",
      "merges",     "h_text",     "heads",        "blocks",     "mask_ratio"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) throw ConfigError("unknown config key: " + key);
  }
  geti("seed", c.seed);
  geti("K", c.K);
  geti("L_max", c.L_max);
  geti("L_d", c.L_d);
  geti("H", c.H);
  geti("d_emb", c.d_emb);
  geti("d_o", c.d_o);
  geti("T", c.T);
  geti("skip_stride", c.skip_stride);
  getf("lambda", c.lambda);
  getf("beta", c.beta);
  getf("lr", c.lr);
  getf("dropout_omics", c.dropout_omics);
  getf("dropout_diff", c.dropout_diff);
  geti("epochs", c.epochs);
  geti("batch_size", c.batch_size);
  geti("n", c.n);
  geti("max_atoms", c.max_atoms);
  getf("noise_sigma", c.noise_sigma);
  geti("merges", c.merges);
  geti("h_text", c.h_text);
  geti("heads", c.heads);
  geti("blocks", c.blocks);
  getf("mask_ratio", c.mask_ratio);
  if (j.contains("ablation")) {
    if (!j.at("ablation").is_string())
      throw ConfigError("config key ablation must be a string");
    c.ablation = j.at("ablation").get<std::string>();
  }
  validate_run_config(c);
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace todi
