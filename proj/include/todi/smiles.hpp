#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <utility>
#include <vector>

#include "todi/errors.hpp"
#include "todi/molecule.hpp"

namespace todi {

// Kekulé-subset SMILES reader: uppercase organic atoms, = and # bonds,
// parenthesized branches, single-digit ring closures. Aromatic lowercase,
// bracket atoms, stereo marks, dots, and %-closures are named rejections.
inline MoleculeGraph smiles_to_graph(const std::string& s) {
  MoleculeGraph g;
  int prev = -1;
  int pending = 0;  // bond order awaiting the next atom/ring digit; 0 = none
  std::vector<int> stack;
  struct OpenRing {
    int atom = -1;
    int order = 0;
  };
  std::array<OpenRing, 10> rings;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (c == '(') {
      if (prev < 0) throw ParseError("branch before any atom", i);
      if (pending != 0) throw ParseError("bond symbol before a branch open", i);
      stack.push_back(prev);
      ++i;
      continue;
    }
    if (c == ')') {
      if (stack.empty()) throw ParseError("unmatched ')'", i);
      if (pending != 0) throw ParseError("dangling bond symbol", i);
      prev = stack.back();
      stack.pop_back();
      ++i;
      continue;
    }
    if (c == '=' || c == '#') {
      if (pending != 0) throw ParseError("doubled bond symbol", i);
      pending = c == '=' ? 2 : 3;
      ++i;
      continue;
    }
    if (c >= '0' && c <= '9') {
      if (prev < 0) throw ParseError("ring closure before any atom", i);
      auto& slot = rings[static_cast<std::size_t>(c - '0')];
      if (slot.atom < 0) {
        slot.atom = prev;
        slot.order = pending;
      } else {
        if (slot.atom == prev) throw ParseError("ring closure to the same atom", i);
        if (slot.order != 0 && pending != 0 && slot.order != pending)
          throw ParseError("conflicting ring bond orders", i);
        const int order = slot.order != 0 ? slot.order : (pending != 0 ? pending : 1);
        if (g.bond_between(prev, slot.atom) != 0)
          throw ParseError("ring closure duplicates an existing bond", i);
        g.add_bond(prev, slot.atom, order);
        slot = OpenRing{};
      }
      pending = 0;
      ++i;
      continue;
    }
    if (c == '.') throw UnsupportedFeatureError("disconnection '.' is not supported");
    if (c == '%') throw UnsupportedFeatureError("multi-digit ring closure '%' is not supported");
    if (c == '/' || c == '\\' || c == '@')
      throw UnsupportedFeatureError(std::string("stereochemistry mark '") + c +
                                    "' is not supported");
    if (c == '[') throw UnsupportedFeatureError("bracket atoms are not supported");
    if (c >= 'a' && c <= 'z')
      throw UnsupportedFeatureError(std::string("aromatic atom '") + c +
                                    "' is not supported (Kekulé form only)");
    // Element: try two letters first (Cl, Br).
    std::optional<Element> elem;
    std::size_t consumed = 0;
    if (i + 1 < s.size()) {
      elem = element_from_symbol(s.substr(i, 2));
      if (elem) consumed = 2;
    }
    if (!elem) {
      elem = element_from_symbol(s.substr(i, 1));
      if (elem) consumed = 1;
    }
    if (!elem) throw ParseError(std::string("unexpected character '") + c + "'", i);
    const int atom = g.add_atom(*elem);
    if (prev >= 0) {
      g.add_bond(prev, atom, pending != 0 ? pending : 1);
    } else if (pending != 0) {
      throw ParseError("bond symbol before any atom", i);
    }
    pending = 0;
    prev = atom;
    i += consumed;
  }
  if (pending != 0) throw ParseError("dangling bond symbol at end", s.size());
  if (!stack.empty()) throw ParseError("unclosed branch", s.size());
  for (int d = 0; d < 10; ++d)
    if (rings[static_cast<std::size_t>(d)].atom >= 0)
      throw ParseError("unclosed ring bond " + std::to_string(d), s.size());
  if (const auto violation = g.invariant_violation()) throw ParseError(*violation);
  return g;
}

namespace detail {

class SmilesWriter {
 public:
  explicit SmilesWriter(const MoleculeGraph& g) : g_(g) {
    place_.assign(static_cast<std::size_t>(g.atom_count()), -1);
    children_.resize(static_cast<std::size_t>(g.atom_count()));
  }

  std::string run() {
    // Pass 1: fix the traversal (preorder, tree children, back edges).
    walk(0, -1);
    assign_digits();
    // Pass 2: emit along the recorded tree.
    std::string out;
    emit(0, 0, out);
    return out;
  }

 private:
  struct Child {
    int atom;
    int order;
  };
  struct BackEdge {
    int from, to, order;  // from = later endpoint
    int digit = -1;
  };

  void walk(int v, int parent) {
    place_[static_cast<std::size_t>(v)] = counter_++;
    for (const auto& nb : g_.neighbors(v))
      if (nb.atom != parent && place_[static_cast<std::size_t>(nb.atom)] >= 0)
        back_.push_back({v, nb.atom, nb.order});
    while (true) {
      const MoleculeGraph::Neighbor* next = nullptr;
      for (const auto& nb : g_.neighbors(v))
        if (place_[static_cast<std::size_t>(nb.atom)] < 0) {
          next = &nb;
          break;
        }
      if (next == nullptr) break;
      children_[static_cast<std::size_t>(v)].push_back({next->atom, next->order});
      walk(next->atom, v);
    }
  }

  // Greedy interval coloring of ring digits 1..9 over placement spans.
  void assign_digits() {
    std::sort(back_.begin(), back_.end(), [&](const BackEdge& a, const BackEdge& b) {
      return std::pair(place_[static_cast<std::size_t>(a.to)],
                       place_[static_cast<std::size_t>(a.from)]) <
             std::pair(place_[static_cast<std::size_t>(b.to)],
                       place_[static_cast<std::size_t>(b.from)]);
    });
    for (auto& e : back_) {
      const int lo = place_[static_cast<std::size_t>(e.to)];
      const int hi = place_[static_cast<std::size_t>(e.from)];
      for (int d = 1; d <= 9 && e.digit < 0; ++d) {
        bool free_digit = true;
        for (const auto& other : back_) {
          if (other.digit != d) continue;
          const int olo = place_[static_cast<std::size_t>(other.to)];
          const int ohi = place_[static_cast<std::size_t>(other.from)];
          if (!(hi < olo || ohi < lo)) free_digit = false;
        }
        if (free_digit) e.digit = d;
      }
      if (e.digit < 0)
        throw ContractError("more than nine rings open at once; cannot write this molecule");
    }
  }

  static const char* bond_symbol(int order) { return order == 2 ? "=" : (order == 3 ? "#" : ""); }

  void emit(int v, int incoming, std::string& out) {
    out += bond_symbol(incoming);
    out += element_symbol(g_.atom(v).element);
    // Closures first, then openings, each in digit order.
    std::vector<std::pair<int, int>> closes, opens;  // (digit, order)
    for (const auto& e : back_) {
      if (e.from == v) closes.push_back({e.digit, e.order});
      if (e.to == v) opens.push_back({e.digit, e.order});
    }
    std::sort(closes.begin(), closes.end());
    std::sort(opens.begin(), opens.end());
    for (const auto& [digit, order] : closes) {
      out += bond_symbol(order);
      out += static_cast<char>('0' + digit);
    }
    for (const auto& [digit, order] : opens) {
      out += bond_symbol(order);
      out += static_cast<char>('0' + digit);
    }
    const auto& kids = children_[static_cast<std::size_t>(v)];
    for (std::size_t k = 0; k < kids.size(); ++k) {
      if (k + 1 < kids.size()) {
        out += '(';
        emit(kids[k].atom, kids[k].order, out);
        out += ')';
      } else {
        emit(kids[k].atom, kids[k].order, out);
      }
    }
  }

  const MoleculeGraph& g_;
  std::vector<int> place_;
  std::vector<std::vector<Child>> children_;
  std::vector<BackEdge> back_;
  int counter_ = 0;
};

}  // namespace detail

// Kekulé-subset SMILES writer; inverse of smiles_to_graph up to isomorphism.
inline std::string graph_to_smiles(const MoleculeGraph& g) {
  if (g.atom_count() == 0) return "";
  for (int i = 0; i < g.atom_count(); ++i)
    if (g.atom(i).charge != 0)
      throw UnsupportedFeatureError("formal charge on atom " + std::to_string(i));
  if (const auto violation = g.invariant_violation())
    throw ContractError("cannot serialize: " + *violation);
  if (!g.connected()) throw ContractError("cannot serialize a disconnected graph");
  detail::SmilesWriter writer(g);
  return writer.run();
}

}  // namespace todi
