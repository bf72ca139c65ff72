#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "todi/errors.hpp"
#include "todi/molecule.hpp"

namespace todi {

enum class TokenKind : std::uint8_t { Pad, Atom, BondAtom, Branch, Ring, Index };

struct SelfiesToken {
  std::string text;
  TokenKind kind = TokenKind::Atom;

  bool operator==(const SelfiesToken& o) const { return text == o.text && kind == o.kind; }
};

inline constexpr const char* kPadToken = "[PAD]";

namespace detail {

struct TokenInfo {
  TokenKind kind;
  int order;         // bond order implied by a =/# prefix (1 when absent)
  Element element;   // atoms only
  int index_tokens;  // payload length for branch/ring directives (1 or 2)
};

// The fixed base alphabet: one pad token, plain and bond-prefixed atoms,
// branch and ring directives in one- and two-digit forms.
inline const std::vector<std::pair<std::string, TokenInfo>>& base_token_table() {
  static const std::vector<std::pair<std::string, TokenInfo>> table = [] {
    std::vector<std::pair<std::string, TokenInfo>> t;
    t.push_back({kPadToken, {TokenKind::Pad, 0, Element::C, 0}});
    for (int i = 0; i < kElementCount; ++i) {
      const auto e = static_cast<Element>(i);
      t.push_back({std::string("[") + element_symbol(e) + "]", {TokenKind::Atom, 1, e, 0}});
    }
    for (int i = 0; i < kElementCount; ++i) {
      const auto e = static_cast<Element>(i);
      if (max_valence(e) >= 2)
        t.push_back({std::string("[=") + element_symbol(e) + "]", {TokenKind::BondAtom, 2, e, 0}});
    }
    for (int i = 0; i < kElementCount; ++i) {
      const auto e = static_cast<Element>(i);
      if (max_valence(e) >= 3)
        t.push_back({std::string("[#") + element_symbol(e) + "]", {TokenKind::BondAtom, 3, e, 0}});
    }
    const char* prefixes[3] = {"[", "[=", "[#"};
    for (int o = 1; o <= 3; ++o)
      t.push_back({std::string(prefixes[o - 1]) + "Branch1]", {TokenKind::Branch, o, Element::C, 1}});
    for (int o = 1; o <= 3; ++o)
      t.push_back({std::string(prefixes[o - 1]) + "Branch2]", {TokenKind::Branch, o, Element::C, 2}});
    for (int o = 1; o <= 3; ++o)
      t.push_back({std::string(prefixes[o - 1]) + "Ring1]", {TokenKind::Ring, o, Element::C, 1}});
    for (int o = 1; o <= 3; ++o)
      t.push_back({std::string(prefixes[o - 1]) + "Ring2]", {TokenKind::Ring, o, Element::C, 2}});
    return t;
  }();
  return table;
}

inline const TokenInfo* lookup_token(const std::string& text) {
  static const std::unordered_map<std::string, TokenInfo> map = [] {
    std::unordered_map<std::string, TokenInfo> m;
    for (const auto& [text, info] : base_token_table()) m.emplace(text, info);
    return m;
  }();
  const auto it = map.find(text);
  return it == map.end() ? nullptr : &it->second;
}

// Directive payload digits are read through this fixed 16-entry alphabet;
// any token outside it counts as 0.
inline const std::array<const char*, 16>& index_alphabet() {
  static const std::array<const char*, 16> a = {
      "[C]",        "[Ring1]",    "[Ring2]",    "[Branch1]", "[=Branch1]", "[#Branch1]",
      "[Branch2]",  "[=Branch2]", "[#Branch2]", "[O]",       "[N]",        "[=N]",
      "[=C]",       "[#C]",       "[S]",        "[P]"};
  return a;
}

inline int index_value(const std::string& text) {
  const auto& a = index_alphabet();
  for (int i = 0; i < 16; ++i)
    if (text == a[i]) return i;
  return 0;
}

}  // namespace detail

// Split bracketed text into tokens. The payload positions after branch/ring
// directives are tagged as Index; everything else keeps its lexical kind.
inline std::vector<SelfiesToken> tokenize(const std::string& s) {
  std::vector<SelfiesToken> out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] != '[')
      throw ParseError(std::string("unbracketed character '") + s[i] + "'", i);
    const std::size_t close = s.find(']', i);
    if (close == std::string::npos) throw ParseError("unterminated token", i);
    const std::string text = s.substr(i, close - i + 1);
    const detail::TokenInfo* info = detail::lookup_token(text);
    if (info == nullptr) throw ParseError("unknown symbol " + text, i);
    out.push_back({text, info->kind});
    i = close + 1;
  }
  std::size_t k = 0;
  while (k < out.size()) {
    const detail::TokenInfo* info = detail::lookup_token(out[k].text);
    if (info->index_tokens > 0) {
      for (int t = 1; t <= info->index_tokens && k + static_cast<std::size_t>(t) < out.size(); ++t)
        out[k + static_cast<std::size_t>(t)].kind = TokenKind::Index;
      k += 1 + static_cast<std::size_t>(info->index_tokens);
    } else {
      ++k;
    }
  }
  return out;
}

inline std::string selfies_string(const std::vector<SelfiesToken>& tokens) {
  std::string s;
  for (const auto& t : tokens) s += t.text;
  return s;
}

namespace detail {

class SelfiesDecoder {
 public:
  explicit SelfiesDecoder(const std::vector<SelfiesToken>& tokens) {
    // Flatten to base tokens so merged vocabulary entries decode like the
    // stream they stand for; anything unrecognizable is dropped (the decode
    // must accept every sequence).
    for (const auto& t : tokens) {
      if (lookup_token(t.text) != nullptr) {
        texts_.push_back(t.text);
      } else {
        try {
          for (const auto& part : tokenize(t.text)) texts_.push_back(part.text);
        } catch (const ParseError&) {
          // unrecognized: skip
        }
      }
    }
  }

  MoleculeGraph run() {
    derive(0, texts_.size(), -1, 0);
    return std::move(g_);
  }

 private:
  int remaining(int atom) const { return g_.implicit_hydrogens(atom); }

  static int min3(int a, int b, int c) { return std::min(a, std::min(b, c)); }

  // Derivation over texts_[pos, end). `prev` is the attachment atom (-1 at
  // the very start); `init` caps the first bond order inside a branch body.
  void derive(std::size_t pos, std::size_t end, int prev, int init) {
    int cur = prev;
    bool first_pending = prev >= 0 && init > 0;
    std::size_t i = pos;
    while (i < end) {
      const TokenInfo& info = *lookup_token(texts_[i]);
      switch (info.kind) {
        case TokenKind::Pad:
          ++i;
          break;
        case TokenKind::Atom:
        case TokenKind::BondAtom: {
          if (cur < 0) {
            cur = g_.add_atom(info.element);
            ++i;
            break;
          }
          // Capacity is read at bond time: a ring directive earlier in a
          // branch body may already have spent some of the attachment
          // atom's valence.
          const int cap = remaining(cur);
          if (cap == 0) return;  // saturated attachment: this level is done
          int order;
          if (first_pending) {
            order = min3(std::min(init, cap), info.order, max_valence(info.element));
            first_pending = false;
          } else {
            order = min3(info.order, cap, max_valence(info.element));
          }
          const int added = g_.add_atom(info.element);
          g_.add_bond(cur, added, order);
          cur = added;
          ++i;
          break;
        }
        case TokenKind::Branch: {
          int q = 0;
          for (int t = 0; t < info.index_tokens; ++t) {
            const std::size_t at = i + 1 + static_cast<std::size_t>(t);
            q = q * 16 + (at < end ? index_value(texts_[at]) : 0);
          }
          i = std::min(end, i + 1 + static_cast<std::size_t>(info.index_tokens));
          // A branch needs an attachment atom with at least two spare
          // valences (one for the branch, one to keep the chain alive);
          // otherwise only the directive is consumed and the would-be body
          // continues the current chain.
          if (cur >= 0 && remaining(cur) >= 2) {
            const std::size_t body_end = std::min(end, i + static_cast<std::size_t>(q) + 1);
            derive(i, body_end, cur, std::min(info.order, remaining(cur) - 1));
            i = body_end;
          }
          break;
        }
        case TokenKind::Ring: {
          int q = 0;
          for (int t = 0; t < info.index_tokens; ++t) {
            const std::size_t at = i + 1 + static_cast<std::size_t>(t);
            q = q * 16 + (at < end ? index_value(texts_[at]) : 0);
          }
          i = std::min(end, i + 1 + static_cast<std::size_t>(info.index_tokens));
          // Close a cycle back to the atom placed q+1 positions earlier.
          // Out-of-range targets, already-bonded pairs, and saturated ends
          // are ignored rather than rejected.
          if (cur >= 0) {
            const int target = cur - (q + 1);
            if (target >= 0 && g_.bond_between(cur, target) == 0) {
              const int order = min3(info.order, remaining(cur), remaining(target));
              if (order >= 1) g_.add_bond(cur, target, order);
            }
          }
          break;
        }
        case TokenKind::Index:
          // Index kind only appears as payload, which the directive cases
          // consume; a stray one (hand-built stream) acts as its base token.
          ++i;
          break;
      }
    }
  }

  std::vector<std::string> texts_;
  MoleculeGraph g_;
};

}  // namespace detail

// Total on any token sequence: caps bond orders at the remaining valence,
// drops unusable directives, and never throws. Every returned graph satisfies
// the valence limits and is connected.
inline MoleculeGraph decode_to_graph(const std::vector<SelfiesToken>& tokens) {
  detail::SelfiesDecoder dec(tokens);
  return dec.run();
}

inline MoleculeGraph decode_selfies(const std::string& s) { return decode_to_graph(tokenize(s)); }

namespace detail {

inline SelfiesToken atom_token(Element e, int order) {
  const char* prefix = order == 2 ? "[=" : (order == 3 ? "[#" : "[");
  return {std::string(prefix) + element_symbol(e) + "]",
          order >= 2 ? TokenKind::BondAtom : TokenKind::Atom};
}

inline void append_directive(std::vector<SelfiesToken>& out, const char* stem, int order, int q,
                             TokenKind kind) {
  const char* prefix = order == 2 ? "[=" : (order == 3 ? "[#" : "[");
  if (q <= 15) {
    out.push_back({std::string(prefix) + stem + "1]", kind});
    out.push_back({index_alphabet()[static_cast<std::size_t>(q)], TokenKind::Index});
  } else if (q <= 255) {
    out.push_back({std::string(prefix) + stem + "2]", kind});
    out.push_back({index_alphabet()[static_cast<std::size_t>(q / 16)], TokenKind::Index});
    out.push_back({index_alphabet()[static_cast<std::size_t>(q % 16)], TokenKind::Index});
  } else {
    throw ContractError(std::string(stem) + " span " + std::to_string(q) +
                        " exceeds the directive range");
  }
}

class SelfiesEncoder {
 public:
  explicit SelfiesEncoder(const MoleculeGraph& g) : g_(g) {
    place_.assign(static_cast<std::size_t>(g.atom_count()), -1);
  }

  std::vector<SelfiesToken> run() { return emit(0, -1, 0); }

 private:
  // Serialize the subtree rooted at v, reached over a bond of `incoming`
  // order (0 for the root). Ring closures are written right after the atom;
  // every child but the last becomes a branch, the last continues the chain.
  std::vector<SelfiesToken> emit(int v, int parent, int incoming) {
    std::vector<SelfiesToken> out;
    out.push_back(atom_token(g_.atom(v).element, incoming));
    place_[static_cast<std::size_t>(v)] = counter_++;
    std::vector<std::pair<int, int>> back;  // (place[u], order)
    for (const auto& nb : g_.neighbors(v))
      if (nb.atom != parent && place_[static_cast<std::size_t>(nb.atom)] >= 0)
        back.push_back({place_[static_cast<std::size_t>(nb.atom)], nb.order});
    std::sort(back.begin(), back.end());
    for (const auto& [pu, order] : back)
      append_directive(out, "Ring", order, place_[static_cast<std::size_t>(v)] - pu - 1,
                       TokenKind::Ring);
    while (true) {
      const MoleculeGraph::Neighbor* next = nullptr;
      for (const auto& nb : g_.neighbors(v))
        if (place_[static_cast<std::size_t>(nb.atom)] < 0) {
          next = &nb;
          break;
        }
      if (next == nullptr) break;
      std::vector<SelfiesToken> body = emit(next->atom, v, next->order);
      bool more = false;
      for (const auto& nb : g_.neighbors(v))
        if (place_[static_cast<std::size_t>(nb.atom)] < 0) more = true;
      if (more) {
        append_directive(out, "Branch", next->order, static_cast<int>(body.size()) - 1,
                         TokenKind::Branch);
        out.insert(out.end(), body.begin(), body.end());
      } else {
        out.insert(out.end(), body.begin(), body.end());
        break;
      }
    }
    return out;
  }

  const MoleculeGraph& g_;
  std::vector<int> place_;
  int counter_ = 0;
};

}  // namespace detail

// Serialize a connected, valence-respecting graph so that decoding gives an
// isomorphic molecule back.
inline std::vector<SelfiesToken> graph_to_selfies(const MoleculeGraph& g) {
  if (g.atom_count() == 0) return {};
  for (int i = 0; i < g.atom_count(); ++i)
    if (g.atom(i).charge != 0)
      throw UnsupportedFeatureError("formal charge on atom " + std::to_string(i));
  if (const auto violation = g.invariant_violation())
    throw ContractError("cannot serialize: " + *violation);
  if (!g.connected()) throw ContractError("cannot serialize a disconnected graph");
  detail::SelfiesEncoder enc(g);
  return enc.run();
}

// Token list plus learned bigram merges. Index 0 is always the pad token.
class SelfiesVocabulary {
 public:
  static constexpr int kPadIndex = 0;
  static constexpr int kMaxSize = 512;

  static SelfiesVocabulary base() {
    SelfiesVocabulary v;
    for (const auto& [text, info] : detail::base_token_table()) v.push(text);
    return v;
  }

  // Greedy bigram merging over the tokenized corpus: repeatedly fuse the
  // most frequent adjacent pair (lexicographic tie-break) until no pair
  // repeats, the merge budget runs out, or the vocabulary is full.
  static SelfiesVocabulary learn(const std::vector<std::string>& corpus, int max_merges) {
    SelfiesVocabulary v = base();
    std::vector<std::vector<std::string>> seqs;
    seqs.reserve(corpus.size());
    for (const auto& s : corpus) {
      std::vector<std::string> texts;
      for (const auto& t : tokenize(s)) texts.push_back(t.text);
      if (!texts.empty()) seqs.push_back(std::move(texts));
    }
    for (int m = 0; m < max_merges && v.size() < kMaxSize; ++m) {
      std::map<std::pair<std::string, std::string>, int> counts;
      for (const auto& seq : seqs)
        for (std::size_t i = 0; i + 1 < seq.size(); ++i) ++counts[{seq[i], seq[i + 1]}];
      const std::pair<std::string, std::string>* best = nullptr;
      int best_count = 1;  // merging a once-seen pair gains nothing
      for (const auto& [pair, count] : counts)
        if (count > best_count) {
          best = &pair;
          best_count = count;
        }
      if (best == nullptr) break;
      const auto merge = *best;
      v.merges_.push_back(merge);
      v.push(merge.first + merge.second);
      for (auto& seq : seqs) apply_merge(seq, merge);
    }
    return v;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int i) const { return tokens_[static_cast<std::size_t>(i)]; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

  int index_of(const std::string& text) const {
    const auto it = index_.find(text);
    if (it == index_.end()) throw ContractError("token not in vocabulary: " + text);
    return it->second;
  }

  bool contains(const std::string& text) const { return index_.count(text) > 0; }

  // Apply the merge list, then map to indices. Never longer than the input.
  std::vector<int> encode_indices(const std::vector<SelfiesToken>& tokens) const {
    std::vector<std::string> texts;
    texts.reserve(tokens.size());
    for (const auto& t : tokens) texts.push_back(t.text);
    for (const auto& merge : merges_) apply_merge(texts, merge);
    std::vector<int> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(index_of(t));
    return out;
  }

  // Expand indices back to the base token stream (merges are concatenative,
  // so expansion is exact).
  std::vector<SelfiesToken> decode_indices(const std::vector<int>& indices) const {
    std::string flat;
    for (const int idx : indices) {
      if (idx < 0 || idx >= size())
        throw ContractError("corrupt token index " + std::to_string(idx) + " (vocabulary size " +
                            std::to_string(size()) + ")");
      flat += tokens_[static_cast<std::size_t>(idx)];
    }
    return tokenize(flat);
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write vocabulary file " + path);
    for (const auto& t : tokens_) f << t << "\n";
    f << "#MERGES\n";
    for (const auto& [a, b] : merges_) f << a << "\t" << b << "\n";
    if (!f) throw IoError("failed writing vocabulary file " + path);
  }

  static SelfiesVocabulary load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open vocabulary file " + path);
    SelfiesVocabulary v;
    std::string line;
    bool in_merges = false;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      if (line == "#MERGES") {
        in_merges = true;
        continue;
      }
      if (!in_merges) {
        if (v.index_.count(line)) throw IoError("duplicate vocabulary token " + line);
        v.push(line);
      } else {
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) throw IoError("malformed merge line: " + line);
        v.merges_.push_back({line.substr(0, tab), line.substr(tab + 1)});
      }
    }
    if (v.size() == 0 || v.token(0) != kPadToken)
      throw IoError("vocabulary file must start with " + std::string(kPadToken));
    if (v.size() > kMaxSize) throw IoError("vocabulary exceeds the size limit");
    for (const auto& [a, b] : v.merges_) {
      if (!v.contains(a) || !v.contains(b) || !v.contains(a + b))
        throw IoError("merge references unknown tokens: " + a + " + " + b);
    }
    return v;
  }

 private:
  void push(const std::string& text) {
    index_.emplace(text, static_cast<int>(tokens_.size()));
    tokens_.push_back(text);
  }

  // One left-to-right pass of non-overlapping pair replacement.
  static void apply_merge(std::vector<std::string>& seq,
                          const std::pair<std::string, std::string>& merge) {
    std::vector<std::string> out;
    out.reserve(seq.size());
    std::size_t i = 0;
    while (i < seq.size()) {
      if (i + 1 < seq.size() && seq[i] == merge.first && seq[i + 1] == merge.second) {
        out.push_back(merge.first + merge.second);
        i += 2;
      } else {
        out.push_back(seq[i]);
        ++i;
      }
    }
    seq.swap(out);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::pair<std::string, std::string>> merges_;
};

// Right-pad with the pad index up to `length`.
inline std::vector<int> pad_indices(std::vector<int> indices, int length) {
  if (static_cast<int>(indices.size()) > length)
    throw ContractError("sequence of length " + std::to_string(indices.size()) +
                        " does not fit in " + std::to_string(length));
  indices.resize(static_cast<std::size_t>(length), SelfiesVocabulary::kPadIndex);
  return indices;
}

}  // namespace todi
