#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "todi/errors.hpp"
#include "todi/metrics.hpp"
#include "todi/molecule.hpp"
#include "todi/rng.hpp"
#include "todi/selfies.hpp"
#include "todi/textenc.hpp"

namespace todi {

// One corpus entry: a molecule, its templated description, and its planted
// expression profile, bound one-to-one under a unique id.
struct TextOmicsRecord {
  std::string id;
  std::string selfies;
  std::string description;
  std::vector<float> omics;
};

// ---------------------------------------------------------------------------
// Random molecules
// ---------------------------------------------------------------------------

namespace detail {

struct WalkPiece {
  std::vector<const char*> tokens;
  int atoms;  // atoms the decoder will materialize from this piece
  int weight;
};

// Single-token continuations. Halogens terminate the chain at top level
// (valence 1), so they stay rare here and mostly enter through branches.
inline const std::vector<WalkPiece>& walk_atoms() {
  static const std::vector<WalkPiece> v = {
      {{"[C]"}, 1, 30}, {{"[=C]"}, 1, 8}, {{"[N]"}, 1, 7}, {{"[O]"}, 1, 10},
      {{"[=N]"}, 1, 2}, {{"[=O]"}, 1, 2}, {{"[S]"}, 1, 3}, {{"[P]"}, 1, 1},
      {{"[B]"}, 1, 1},  {{"[F]"}, 1, 1},  {{"[Cl]"}, 1, 1},
  };
  return v;
}

// Multi-token fragments that plant each listed functional group (and rings)
// at a controllable rate. Each is a complete directive+payload unit, so the
// stream stays well-formed no matter how pieces interleave.
inline const std::vector<WalkPiece>& walk_motifs() {
  static const std::vector<WalkPiece> v = {
      {{"[C]", "[=Branch1]", "[C]", "[=O]", "[O]"}, 3, 3},                      // acid tail
      {{"[C]", "[=Branch1]", "[C]", "[=O]", "[O]", "[C]"}, 4, 3},               // ester link
      {{"[C]", "[=Branch1]", "[C]", "[=O]", "[N]"}, 3, 3},                      // amide
      {{"[C]", "[Branch1]", "[C]", "[N]"}, 2, 3},                               // amine arm
      {{"[C]", "[Branch1]", "[C]", "[O]"}, 2, 3},                               // hydroxy arm
      {{"[C]", "[Branch1]", "[C]", "[F]"}, 2, 2},                               // fluoride arm
      {{"[C]", "[Branch1]", "[C]", "[Cl]"}, 2, 2},                              // chloride arm
      {{"[C]", "[=C]", "[C]", "[=C]", "[C]", "[=C]", "[Ring1]", "[=Branch1]"},  // benzene
       6,
       4},
      {{"[C]", "[C]", "[C]", "[C]", "[C]", "[Ring1]", "[Branch1]"}, 5, 2},      // plain ring
  };
  return v;
}

inline const WalkPiece& pick_weighted(const std::vector<WalkPiece>& pool, Rng& rng) {
  int total = 0;
  for (const auto& p : pool) total += p.weight;
  int roll = rng.below_int(total);
  for (const auto& p : pool) {
    roll -= p.weight;
    if (roll < 0) return p;
  }
  return pool.back();
}

}  // namespace detail

// Random token walk, then the total decode. Validity is inherited from the
// decoder; the walk only shapes the distribution.
inline MoleculeGraph random_molecule(Rng& rng, int max_atoms) {
  if (max_atoms < 1) throw ContractError("random molecule needs max_atoms >= 1");
  std::vector<SelfiesToken> tokens;
  int atoms = 1;
  tokens.push_back({rng.uniform() < 0.8 ? "[C]" : "[N]", TokenKind::Atom});
  const int target = 3 + rng.below_int(2 * max_atoms + 1);
  while (static_cast<int>(tokens.size()) < target && atoms < max_atoms) {
    const double roll = rng.uniform();
    if (roll < 0.30) {
      const auto& motif = detail::pick_weighted(detail::walk_motifs(), rng);
      if (atoms + motif.atoms <= max_atoms) {
        for (const char* t : motif.tokens) tokens.push_back({t, TokenKind::Atom});
        atoms += motif.atoms;
        continue;
      }
    }
    if (roll < 0.38 && atoms >= 3) {
      // Free-standing ring closure with a short reach.
      tokens.push_back({"[Ring1]", TokenKind::Ring});
      tokens.push_back({detail::index_alphabet()[static_cast<std::size_t>(
                            2 + rng.below_int(4))],
                        TokenKind::Index});
      continue;
    }
    const auto& piece = detail::pick_weighted(detail::walk_atoms(), rng);
    tokens.push_back({piece.tokens[0], TokenKind::Atom});
    atoms += piece.atoms;
  }
  MoleculeGraph g = decode_to_graph(tokens);
  if (g.atom_count() == 0) {
    MoleculeGraph fallback;
    fallback.add_atom(Element::C);
    return fallback;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Descriptions
// ---------------------------------------------------------------------------

// Deterministic template naming exactly the listed groups that are present,
// in their canonical order, plus the ring counts.
inline std::string describe(const MoleculeGraph& g) {
  if (!is_valid_molecule(g)) throw ContractError("cannot describe an invalid molecule");
  std::string out = "The molecule contains ";
  bool any = false;
  for (const char* name : kFunctionalGroupNames) {
    if (functional_group_match(g, name)) {
      if (any) out += ", ";
      out += name;
      any = true;
    }
  }
  if (!any) out += "no listed functional groups";
  const Descriptors d = descriptors(g);
  out += ". It has " + std::to_string(d.n_ring) + " rings and " + std::to_string(d.n_aromatic) +
         " aromatic rings.";
  return out;
}

// ---------------------------------------------------------------------------
// Planted expression profiles
// ---------------------------------------------------------------------------

// Linear map from structural features to genes. The first 8x8 genes form
// one designated block per functional group (unit loading on that group's
// indicator only); the remaining genes carry random loadings on the folded
// fingerprint features. Every column norm stays <= 3.
struct PlantedMap {
  static constexpr int kGroupFeatures = 8;
  static constexpr int kBlockGenes = 8;
  static constexpr int kFingerprintFeatures = 64;
  static constexpr int kFeatureCount = kGroupFeatures + kFingerprintFeatures;

  int genes = 0;
  float noise_sigma = 0.0f;
  std::uint64_t seed = 0;
  std::vector<float> W;  // genes x kFeatureCount, row-major

  static PlantedMap build(int genes, float noise_sigma, std::uint64_t seed) {
    constexpr int kMinGenes = kGroupFeatures * kBlockGenes + kBlockGenes;
    if (genes < kMinGenes)
      throw ContractError("planted map needs at least " + std::to_string(kMinGenes) + " genes");
    if (noise_sigma < 0.0f) throw ContractError("noise level must be nonnegative");
    PlantedMap m;
    m.genes = genes;
    m.noise_sigma = noise_sigma;
    m.seed = seed;
    m.W.assign(static_cast<std::size_t>(genes) * kFeatureCount, 0.0f);
    for (int g = 0; g < kGroupFeatures * kBlockGenes; ++g)
      m.W[static_cast<std::size_t>(g) * kFeatureCount +
          static_cast<std::size_t>(g / kBlockGenes)] = 1.0f;
    Rng rng(mix64(seed ^ 0x8f5c2a1db34e96c7ULL));
    for (int g = kGroupFeatures * kBlockGenes; g < genes; ++g)
      for (int f = 0; f < kFingerprintFeatures; ++f)
        m.W[static_cast<std::size_t>(g) * kFeatureCount + kGroupFeatures +
            static_cast<std::size_t>(f)] = rng.gaussf();
    // Rescale each fingerprint column under the norm bound.
    for (int f = 0; f < kFingerprintFeatures; ++f) {
      double sq = 0.0;
      for (int g = 0; g < genes; ++g) {
        const double v = m.W[static_cast<std::size_t>(g) * kFeatureCount + kGroupFeatures +
                             static_cast<std::size_t>(f)];
        sq += v * v;
      }
      const double norm = std::sqrt(sq);
      const float s = norm > 1e-12 ? static_cast<float>(2.5 / norm) : 0.0f;
      for (int g = 0; g < genes; ++g)
        m.W[static_cast<std::size_t>(g) * kFeatureCount + kGroupFeatures +
            static_cast<std::size_t>(f)] *= s;
    }
    return m;
  }
};

// Indicator-plus-fingerprint feature vector driving the planted profiles.
inline std::vector<float> planted_features(const MoleculeGraph& g) {
  std::vector<float> f(PlantedMap::kFeatureCount, 0.0f);
  for (int i = 0; i < PlantedMap::kGroupFeatures; ++i)
    if (functional_group_match(g, kFunctionalGroupNames[static_cast<std::size_t>(i)]))
      f[static_cast<std::size_t>(i)] = 1.0f;
  const Fingerprint fp = morgan_fingerprint(g);
  for (int b = 0; b < fp.width; ++b)
    if (fp.test(b))
      f[static_cast<std::size_t>(PlantedMap::kGroupFeatures +
                                 b % PlantedMap::kFingerprintFeatures)] = 1.0f;
  return f;
}

// Raw profile E = W * features + sigma * noise. Standardization is applied
// corpus-wide by the generator, not here.
inline std::vector<float> plant_omics(const MoleculeGraph& g, const PlantedMap& map, Rng& rng) {
  const std::vector<float> f = planted_features(g);
  std::vector<float> e(static_cast<std::size_t>(map.genes), 0.0f);
  for (int gene = 0; gene < map.genes; ++gene) {
    double acc = 0.0;
    const float* row = map.W.data() + static_cast<std::size_t>(gene) * PlantedMap::kFeatureCount;
    for (int j = 0; j < PlantedMap::kFeatureCount; ++j)
      acc += static_cast<double>(row[j]) * f[static_cast<std::size_t>(j)];
    e[static_cast<std::size_t>(gene)] = static_cast<float>(acc) + map.noise_sigma * rng.gaussf();
  }
  return e;
}

// ---------------------------------------------------------------------------
// Corpus generation and I/O
// ---------------------------------------------------------------------------

struct DatagenConfig {
  int n = 2000;
  std::uint64_t seed = 7;
  int genes = 978;
  int max_atoms = 16;
  float noise_sigma = 0.3f;
  int merges = 64;
  std::string out_path;
};

struct CorpusStats {
  int count = 0;
  double selfies_length_mean = 0.0;
  int omics_dim = 0;
  double omics_variance_mean = 0.0;
  double text_length_mean = 0.0;
  double mol_weight_mean = 0.0;
  double ring_count_mean = 0.0;
  double aromatic_count_mean = 0.0;
};

// Records only; file emission is layered on top. Per-record derived rng
// streams keep the output independent of generation order.
inline std::vector<TextOmicsRecord> generate_records(const DatagenConfig& cfg) {
  if (cfg.n < 1) throw ContractError("corpus needs at least one record");
  const PlantedMap map = PlantedMap::build(cfg.genes, cfg.noise_sigma, cfg.seed);
  std::vector<TextOmicsRecord> records;
  records.reserve(static_cast<std::size_t>(cfg.n));
  for (int i = 0; i < cfg.n; ++i) {
    Rng rng(mix64(cfg.seed ^ mix64(0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(i + 1))));
    const MoleculeGraph g = random_molecule(rng, cfg.max_atoms);
    TextOmicsRecord rec;
    char id[32];
    std::snprintf(id, sizeof(id), "rec-%06d", i);
    rec.id = id;
    rec.selfies = selfies_string(graph_to_selfies(g));
    rec.description = describe(g);
    rec.omics = plant_omics(g, map, rng);
    records.push_back(std::move(rec));
  }
  // Corpus-level per-gene standardization.
  const std::size_t K = static_cast<std::size_t>(cfg.genes);
  std::vector<double> mean(K, 0.0), sq(K, 0.0);
  for (const auto& r : records)
    for (std::size_t k = 0; k < K; ++k) {
      mean[k] += r.omics[k];
      sq[k] += static_cast<double>(r.omics[k]) * r.omics[k];
    }
  for (std::size_t k = 0; k < K; ++k) {
    mean[k] /= records.size();
    sq[k] = sq[k] / records.size() - mean[k] * mean[k];
  }
  for (auto& r : records)
    for (std::size_t k = 0; k < K; ++k) {
      const double sd = std::sqrt(std::max(0.0, sq[k]));
      r.omics[k] = sd > 1e-8 ? static_cast<float>((r.omics[k] - mean[k]) / sd) : 0.0f;
    }
  return records;
}

inline CorpusStats corpus_stats(const std::vector<TextOmicsRecord>& records) {
  if (records.empty()) throw ContractError("stats over an empty corpus");
  CorpusStats s;
  s.count = static_cast<int>(records.size());
  s.omics_dim = static_cast<int>(records.front().omics.size());
  const std::size_t K = records.front().omics.size();
  std::vector<double> mean(K, 0.0), sq(K, 0.0);
  for (const auto& r : records) {
    s.selfies_length_mean += static_cast<double>(tokenize(r.selfies).size());
    s.text_length_mean += static_cast<double>(normalize_text(r.description).size());
    const MoleculeGraph g = decode_selfies(r.selfies);
    const Descriptors d = descriptors(g);
    s.mol_weight_mean += d.mol_weight;
    s.ring_count_mean += d.n_ring;
    s.aromatic_count_mean += d.n_aromatic;
    for (std::size_t k = 0; k < K; ++k) {
      mean[k] += r.omics[k];
      sq[k] += static_cast<double>(r.omics[k]) * r.omics[k];
    }
  }
  const double n = static_cast<double>(records.size());
  s.selfies_length_mean /= n;
  s.text_length_mean /= n;
  s.mol_weight_mean /= n;
  s.ring_count_mean /= n;
  s.aromatic_count_mean /= n;
  double var_sum = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double m = mean[k] / n;
    var_sum += sq[k] / n - m * m;
  }
  s.omics_variance_mean = K > 0 ? var_sum / static_cast<double>(K) : 0.0;
  return s;
}

inline void write_corpus(const std::string& path, const std::vector<TextOmicsRecord>& records) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write corpus file " + path);
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["selfies"] = r.selfies;
    j["description"] = r.description;
    j["omics"] = r.omics;
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("failed writing corpus file " + path);
}

inline void write_stats(const std::string& path, const CorpusStats& s) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["count"] = s.count;
  j["selfies_length_mean"] = s.selfies_length_mean;
  j["omics_dim"] = s.omics_dim;
  j["omics_variance_mean"] = s.omics_variance_mean;
  j["text_length_mean"] = s.text_length_mean;
  j["mol_weight_mean"] = s.mol_weight_mean;
  j["ring_count_mean"] = s.ring_count_mean;
  j["aromatic_count_mean"] = s.aromatic_count_mean;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write stats file " + path);
  f << j.dump(2) << "\n";
  if (!f) throw IoError("failed writing stats file " + path);
}

// Emits the corpus, a stats sidecar, and both vocabulary files next to it.
inline CorpusStats generate_corpus(const DatagenConfig& cfg) {
  if (cfg.out_path.empty()) throw ContractError("corpus generation needs an output path");
  const std::vector<TextOmicsRecord> records = generate_records(cfg);
  write_corpus(cfg.out_path, records);
  const CorpusStats stats = corpus_stats(records);
  write_stats(cfg.out_path + ".stats.json", stats);
  std::vector<std::string> selfies, texts;
  for (const auto& r : records) {
    selfies.push_back(r.selfies);
    texts.push_back(r.description);
  }
  SelfiesVocabulary::learn(selfies, cfg.merges).save(cfg.out_path + ".selfies_vocab.txt");
  TextVocabulary::build(texts).save(cfg.out_path + ".text_vocab.txt");
  return stats;
}

struct LoadedCorpus {
  std::vector<TextOmicsRecord> records;
  int omics_dim = 0;
};

// Strict line-by-line ingestion; every defect is reported with its line
// number. Accepts externally produced files in the same schema.
inline LoadedCorpus load_corpus(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open corpus file " + path);
  LoadedCorpus out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fail = [&](const std::string& why) {
      throw ParseError("corpus line " + std::to_string(line_no) + ": " + why, line_no);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      fail(std::string("bad JSON (") + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("selfies") ||
        !j.contains("description") || !j.contains("omics"))
      fail("record must carry id, selfies, description, omics");
    if (!j["id"].is_string() || !j["selfies"].is_string() || !j["description"].is_string() ||
        !j["omics"].is_array())
      fail("field has the wrong type");
    TextOmicsRecord rec;
    rec.id = j["id"].get<std::string>();
    rec.selfies = j["selfies"].get<std::string>();
    rec.description = j["description"].get<std::string>();
    for (const auto& v : j["omics"]) {
      if (!v.is_number()) fail("omics entries must be numbers");
      rec.omics.push_back(v.get<float>());
    }
    if (rec.description.empty()) fail("empty description");
    if (!ids.insert(rec.id).second) fail("duplicate id " + rec.id);
    if (out.records.empty()) {
      out.omics_dim = static_cast<int>(rec.omics.size());
    } else if (static_cast<int>(rec.omics.size()) != out.omics_dim) {
      fail("omics width " + std::to_string(rec.omics.size()) + " != " +
           std::to_string(out.omics_dim));
    }
    try {
      const MoleculeGraph g = decode_selfies(rec.selfies);
      if (!is_valid_molecule(g)) fail("molecule string decodes to an invalid graph");
    } catch (const ParseError& e) {
      fail(std::string("unreadable molecule string (") + e.what() + ")");
    }
    out.records.push_back(std::move(rec));
  }
  if (out.records.empty()) throw ContractError("corpus file " + path + " holds no records");
  return out;
}

}  // namespace todi
