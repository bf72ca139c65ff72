#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "todi/canonical.hpp"
#include "todi/errors.hpp"
#include "todi/molecule.hpp"
#include "todi/rng.hpp"

namespace todi {

// ---------------------------------------------------------------------------
// Ring and aromaticity analysis
// ---------------------------------------------------------------------------

// Count distinct simple cycles of length 5 or 6 that pass the aromaticity
// heuristic: every ring atom is C/N/O/S, and either carries a double bond
// somewhere or is a lone-pair donor (N/O/S).
namespace detail {

inline bool atom_aromatic_capable(const MoleculeGraph& g, int v) {
  const Element e = g.atom(v).element;
  if (e != Element::C && e != Element::N && e != Element::O && e != Element::S) return false;
  if (e != Element::C) return true;  // N/O/S contribute a lone pair
  for (const auto& nb : g.neighbors(v))
    if (nb.order == 2) return true;
  return false;
}

// Enumerate distinct simple cycles with length in [5, 6]. Each cycle is
// visited once: the start is its smallest atom id and the walk direction is
// fixed by requiring the second atom id to be below the last.
template <typename Fn>
inline void for_each_small_cycle(const MoleculeGraph& g, Fn&& fn) {
  const int n = g.atom_count();
  std::vector<int> path;
  std::vector<char> on_path(static_cast<std::size_t>(n), 0);
  auto dfs = [&](auto&& self, int start, int v) -> void {
    if (static_cast<int>(path.size()) > 6) return;
    for (const auto& nb : g.neighbors(v)) {
      if (nb.atom == start && path.size() >= 5) {
        if (path[1] < path.back()) fn(path);
        continue;
      }
      if (nb.atom <= start || on_path[static_cast<std::size_t>(nb.atom)]) continue;
      if (path.size() == 6) continue;
      path.push_back(nb.atom);
      on_path[static_cast<std::size_t>(nb.atom)] = 1;
      self(self, start, nb.atom);
      on_path[static_cast<std::size_t>(nb.atom)] = 0;
      path.pop_back();
    }
  };
  for (int s = 0; s < n; ++s) {
    path.assign(1, s);
    on_path.assign(static_cast<std::size_t>(n), 0);
    on_path[static_cast<std::size_t>(s)] = 1;
    dfs(dfs, s, s);
  }
}

}  // namespace detail

inline int aromatic_cycle_count(const MoleculeGraph& g) {
  int count = 0;
  detail::for_each_small_cycle(g, [&](const std::vector<int>& cycle) {
    for (int v : cycle)
      if (!detail::atom_aromatic_capable(g, v)) return;
    ++count;
  });
  return count;
}

// ---------------------------------------------------------------------------
// Functional groups
// ---------------------------------------------------------------------------

inline constexpr std::array<const char*, 8> kFunctionalGroupNames = {
    "ether", "carboxylic-acid", "ester", "amide", "amine", "hydroxy", "halide", "aromatic-ring"};

namespace detail {

// C double-bonded to a terminal O.
inline bool is_carbonyl_carbon(const MoleculeGraph& g, int v) {
  if (g.atom(v).element != Element::C) return false;
  for (const auto& nb : g.neighbors(v))
    if (nb.order == 2 && g.atom(nb.atom).element == Element::O && g.degree(nb.atom) == 1)
      return true;
  return false;
}

inline bool has_ether(const MoleculeGraph& g) {
  for (int v = 0; v < g.atom_count(); ++v) {
    if (g.atom(v).element != Element::O || g.degree(v) != 2) continue;
    bool ok = true;
    for (const auto& nb : g.neighbors(v)) {
      if (nb.order != 1 || g.atom(nb.atom).element != Element::C ||
          is_carbonyl_carbon(g, nb.atom))
        ok = false;
    }
    if (ok) return true;
  }
  return false;
}

inline bool has_carboxylic_acid(const MoleculeGraph& g) {
  for (int v = 0; v < g.atom_count(); ++v) {
    if (!is_carbonyl_carbon(g, v)) continue;
    for (const auto& nb : g.neighbors(v))
      if (nb.order == 1 && g.atom(nb.atom).element == Element::O && g.degree(nb.atom) == 1)
        return true;
  }
  return false;
}

inline bool has_ester(const MoleculeGraph& g) {
  for (int v = 0; v < g.atom_count(); ++v) {
    if (!is_carbonyl_carbon(g, v)) continue;
    for (const auto& nb : g.neighbors(v)) {
      if (nb.order != 1 || g.atom(nb.atom).element != Element::O || g.degree(nb.atom) != 2)
        continue;
      for (const auto& far : g.neighbors(nb.atom))
        if (far.atom != v && g.atom(far.atom).element == Element::C && far.order == 1) return true;
    }
  }
  return false;
}

inline bool has_amide(const MoleculeGraph& g) {
  for (int v = 0; v < g.atom_count(); ++v) {
    if (!is_carbonyl_carbon(g, v)) continue;
    for (const auto& nb : g.neighbors(v))
      if (nb.order == 1 && g.atom(nb.atom).element == Element::N) return true;
  }
  return false;
}

inline bool has_amine(const MoleculeGraph& g) {
  for (int v = 0; v < g.atom_count(); ++v) {
    if (g.atom(v).element != Element::N) continue;
    bool ok = true;
    for (const auto& nb : g.neighbors(v)) {
      if (nb.order != 1) ok = false;                       // imine/nitrile excluded
      if (is_carbonyl_carbon(g, nb.atom)) ok = false;      // amide nitrogen excluded
    }
    if (ok) return true;
  }
  return false;
}

inline bool has_hydroxy(const MoleculeGraph& g) {
  for (int v = 0; v < g.atom_count(); ++v) {
    if (g.atom(v).element != Element::O || g.degree(v) != 1) continue;
    const auto& nb = g.neighbors(v)[0];
    if (nb.order == 1 && g.atom(nb.atom).element == Element::C &&
        !is_carbonyl_carbon(g, nb.atom))
      return true;
  }
  return false;
}

inline bool has_halide(const MoleculeGraph& g) {
  for (int v = 0; v < g.atom_count(); ++v) {
    const Element e = g.atom(v).element;
    if (e != Element::F && e != Element::Cl && e != Element::Br && e != Element::I) continue;
    for (const auto& nb : g.neighbors(v))
      if (g.atom(nb.atom).element == Element::C) return true;
  }
  return false;
}

}  // namespace detail

inline bool functional_group_match(const MoleculeGraph& g, const std::string& group) {
  if (group == "ether") return detail::has_ether(g);
  if (group == "carboxylic-acid") return detail::has_carboxylic_acid(g);
  if (group == "ester") return detail::has_ester(g);
  if (group == "amide") return detail::has_amide(g);
  if (group == "amine") return detail::has_amine(g);
  if (group == "hydroxy") return detail::has_hydroxy(g);
  if (group == "halide") return detail::has_halide(g);
  if (group == "aromatic-ring") return aromatic_cycle_count(g) >= 1;
  throw ContractError("unknown functional group: " + group);
}

// ---------------------------------------------------------------------------
// Descriptors
// ---------------------------------------------------------------------------

struct Descriptors {
  double mol_weight = 0.0;
  int n_ring = 0;
  int n_aromatic = 0;
};

inline Descriptors descriptors(const MoleculeGraph& g) {
  return {g.molecular_weight(), g.ring_count(), aromatic_cycle_count(g)};
}

// ---------------------------------------------------------------------------
// Fingerprints
// ---------------------------------------------------------------------------

enum class FingerprintKind : std::uint8_t { Morgan, Keys };

struct Fingerprint {
  FingerprintKind kind = FingerprintKind::Morgan;
  int width = 0;
  std::vector<std::uint64_t> words;

  void set(int bit) { words[static_cast<std::size_t>(bit / 64)] |= 1ull << (bit % 64); }
  bool test(int bit) const {
    return (words[static_cast<std::size_t>(bit / 64)] >> (bit % 64)) & 1ull;
  }
  int popcount() const {
    int c = 0;
    for (const auto w : words) c += std::popcount(w);
    return c;
  }
  bool operator==(const Fingerprint& o) const {
    return kind == o.kind && width == o.width && words == o.words;
  }
};

inline Fingerprint make_fingerprint(FingerprintKind kind) {
  Fingerprint f;
  f.kind = kind;
  f.width = kind == FingerprintKind::Morgan ? 2048 : 32;
  f.words.assign(static_cast<std::size_t>((f.width + 63) / 64), 0);
  return f;
}

// Circular environments of radius 0..2. Per-atom start identifier packs
// (element, degree, charge, implicit H); each round mixes in the sorted
// (bond order, neighbor id) list. Every round's id lights one of 2048 bits.
inline Fingerprint morgan_fingerprint(const MoleculeGraph& g) {
  if (g.atom_count() == 0) throw ContractError("cannot fingerprint an empty molecule");
  Fingerprint f = make_fingerprint(FingerprintKind::Morgan);
  const int n = g.atom_count();
  std::vector<std::uint64_t> ids(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) {
    const std::uint64_t packed = (static_cast<std::uint64_t>(g.atom(v).element) << 24) |
                                 (static_cast<std::uint64_t>(g.degree(v)) << 16) |
                                 (static_cast<std::uint64_t>(g.atom(v).charge + 8) << 8) |
                                 static_cast<std::uint64_t>(g.implicit_hydrogens(v));
    ids[static_cast<std::size_t>(v)] = mix64(packed ^ 0x517cc1b727220a95ull);
    f.set(static_cast<int>(ids[static_cast<std::size_t>(v)] % 2048));
  }
  for (int round = 1; round <= 2; ++round) {
    std::vector<std::uint64_t> next(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) {
      std::vector<std::uint64_t> env;
      env.reserve(g.neighbors(v).size());
      for (const auto& nb : g.neighbors(v))
        env.push_back(mix64(static_cast<std::uint64_t>(nb.order) * 0x100000001b3ull ^
                            ids[static_cast<std::size_t>(nb.atom)]));
      std::sort(env.begin(), env.end());
      std::uint64_t h = mix64(ids[static_cast<std::size_t>(v)] + static_cast<std::uint64_t>(round));
      for (const auto e : env) h = mix64(h ^ e);
      next[static_cast<std::size_t>(v)] = h;
      f.set(static_cast<int>(h % 2048));
    }
    ids.swap(next);
  }
  return f;
}

// 32 hand-picked structural keys; see the bit layout in the implementation.
inline Fingerprint keys_fingerprint(const MoleculeGraph& g) {
  if (g.atom_count() == 0) throw ContractError("cannot fingerprint an empty molecule");
  Fingerprint f = make_fingerprint(FingerprintKind::Keys);
  // 0-9: element presence in enum order.
  for (int v = 0; v < g.atom_count(); ++v) f.set(static_cast<int>(g.atom(v).element));
  // 10-15: some bond's shortest cycle has size 3..8.
  for (const auto& b : g.bonds()) {
    const int s = shortest_cycle_through_bond(g, b.a, b.b);
    if (s >= 3 && s <= 8) f.set(10 + (s - 3));
  }
  // 16, 17: any double / any triple bond.
  for (const auto& b : g.bonds()) {
    if (b.order == 2) f.set(16);
    if (b.order == 3) f.set(17);
  }
  // 18-25: functional groups in canonical order.
  for (int i = 0; i < 8; ++i)
    if (functional_group_match(g, kFunctionalGroupNames[static_cast<std::size_t>(i)]))
      f.set(18 + i);
  // 26-29: heavy atom count buckets 1-5, 6-12, 13-25, >=26.
  const int n = g.atom_count();
  f.set(n <= 5 ? 26 : (n <= 12 ? 27 : (n <= 25 ? 28 : 29)));
  // 30, 31: aromatic cycle presence / multiplicity >= 2.
  const int arom = aromatic_cycle_count(g);
  if (arom >= 1) f.set(30);
  if (arom >= 2) f.set(31);
  return f;
}

inline double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  if (a.kind != b.kind || a.width != b.width)
    throw ContractError("tanimoto between different fingerprint kinds");
  int inter = 0, uni = 0;
  for (std::size_t w = 0; w < a.words.size(); ++w) {
    inter += std::popcount(a.words[w] & b.words[w]);
    uni += std::popcount(a.words[w] | b.words[w]);
  }
  if (uni == 0) {
    std::fprintf(stderr, "warning: tanimoto of two empty fingerprints, returning 0\n");
    return 0.0;
  }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// Set-level statistics
// ---------------------------------------------------------------------------

// A molecule counts as chemically sound when it is non-empty, respects
// valence limits, and is a single connected fragment.
inline bool is_valid_molecule(const MoleculeGraph& g) {
  return g.atom_count() > 0 && g.valences_ok() && g.connected();
}

inline double validity(const std::vector<MoleculeGraph>& generated) {
  if (generated.empty()) throw ContractError("validity of an empty set");
  int valid = 0;
  for (const auto& g : generated) valid += is_valid_molecule(g) ? 1 : 0;
  return static_cast<double>(valid) / static_cast<double>(generated.size());
}

// Distinct canonical keys among the valid subset, over the valid count.
inline double uniqueness(const std::vector<MoleculeGraph>& generated) {
  if (generated.empty()) throw ContractError("uniqueness of an empty set");
  std::unordered_set<std::string> keys;
  int valid = 0;
  for (const auto& g : generated) {
    if (!is_valid_molecule(g)) continue;
    ++valid;
    keys.insert(canonical_key(g));
  }
  if (valid == 0) return 0.0;
  return static_cast<double>(keys.size()) / static_cast<double>(valid);
}

// Fraction of all generated molecules whose key is absent from the training
// set.
inline double novelty(const std::vector<MoleculeGraph>& generated,
                      const std::vector<MoleculeGraph>& train) {
  if (generated.empty()) throw ContractError("novelty of an empty set");
  std::unordered_set<std::string> train_keys;
  for (const auto& g : train) train_keys.insert(canonical_key(g));
  int fresh = 0;
  for (const auto& g : generated) fresh += train_keys.count(canonical_key(g)) ? 0 : 1;
  return static_cast<double>(fresh) / static_cast<double>(generated.size());
}

// ---------------------------------------------------------------------------
// Sequence similarity
// ---------------------------------------------------------------------------

template <typename Seq>
inline int levenshtein_distance(const Seq& a, const Seq& b) {
  const std::size_t m = a.size(), n = b.size();
  std::vector<int> row(n + 1);
  for (std::size_t j = 0; j <= n; ++j) row[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= m; ++i) {
    int diag = row[0];
    row[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= n; ++j) {
      const int up = row[j];
      const int sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row[n];
}

template <typename Seq>
inline double levenshtein_similarity(const Seq& a, const Seq& b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein_distance(a, b)) / static_cast<double>(longest);
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

// Corpus BLEU over token sequences: modified n-gram precisions aggregated
// over all pairs, geometric mean, brevity penalty. Orders that neither side
// can form (all sequences shorter than n) are skipped, so short streams are
// scored by the orders they support.
inline double corpus_bleu(
    const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& pairs) {
  if (pairs.empty()) throw ContractError("BLEU of an empty corpus");
  for (const auto& [cand, ref] : pairs) {
    (void)cand;
    if (ref.empty()) throw ContractError("BLEU reference must be nonempty");
  }
  long cand_len = 0, ref_len = 0;
  bool any_candidate = false;
  for (const auto& [cand, ref] : pairs) {
    cand_len += static_cast<long>(cand.size());
    ref_len += static_cast<long>(ref.size());
    if (!cand.empty()) any_candidate = true;
  }
  if (!any_candidate) return 0.0;

  double log_sum = 0.0;
  int orders_used = 0;
  for (int n = 1; n <= 4; ++n) {
    long matched = 0, total = 0;
    bool ref_has_any = false;
    for (const auto& [cand, ref] : pairs) {
      if (static_cast<int>(ref.size()) >= n) ref_has_any = true;
      if (static_cast<int>(cand.size()) < n) continue;
      std::map<std::vector<std::string>, long> ref_counts;
      for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= ref.size(); ++i)
        ++ref_counts[std::vector<std::string>(ref.begin() + static_cast<long>(i),
                                              ref.begin() + static_cast<long>(i) + n)];
      std::map<std::vector<std::string>, long> cand_counts;
      for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= cand.size(); ++i)
        ++cand_counts[std::vector<std::string>(cand.begin() + static_cast<long>(i),
                                               cand.begin() + static_cast<long>(i) + n)];
      for (const auto& [gram, count] : cand_counts) {
        total += count;
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched += std::min(count, it->second);
      }
    }
    if (total == 0 || !ref_has_any) continue;  // order unsupported by the corpus
    if (matched == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
    ++orders_used;
  }
  if (orders_used == 0) return 0.0;
  const double geo = std::exp(log_sum / orders_used);
  const double bp =
      cand_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return geo * bp;
}

inline double bleu(const std::vector<std::string>& candidate,
                   const std::vector<std::string>& reference) {
  return corpus_bleu({{candidate, reference}});
}

// ---------------------------------------------------------------------------
// Hit-ratio bookkeeping
// ---------------------------------------------------------------------------

struct HitRecord {
  bool group_match = false;
  double noise_error = 0.0;
};

struct HitRatioReport {
  std::vector<bool> hits;
  std::vector<double> noise_errors;
  double delta = 0.0;
  double ratio = 0.0;
};

// A sample is a hit when its target group matched or its sampling-time noise
// prediction error is no worse than the threshold (run mean by default).
inline HitRatioReport hit_ratio_report(const std::vector<HitRecord>& records,
                                       std::optional<double> delta_override = std::nullopt) {
  if (records.empty()) throw ContractError("hit ratio of an empty run");
  HitRatioReport report;
  double sum = 0.0;
  for (const auto& r : records) {
    report.noise_errors.push_back(r.noise_error);
    sum += r.noise_error;
  }
  report.delta = delta_override ? *delta_override : sum / static_cast<double>(records.size());
  int hits = 0;
  for (const auto& r : records) {
    const bool hit = r.group_match || r.noise_error <= report.delta;
    report.hits.push_back(hit);
    hits += hit ? 1 : 0;
  }
  report.ratio = static_cast<double>(hits) / static_cast<double>(records.size());
  return report;
}

}  // namespace todi
