#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <utility>
#include <vector>

#include "todi/molecule.hpp"

namespace todi {
namespace detail {

// Iterative neighborhood refinement. Starts from (element, charge, degree,
// bond-order-sum) and repeatedly folds in the sorted multiset of
// (bond order, neighbor color), re-ranking after every round so colors stay
// label-independent. Eight rounds is past the stable point for any molecule
// small enough to canonicalize here.
inline std::vector<int> refine_colors(const MoleculeGraph& g) {
  const int n = g.atom_count();
  std::vector<int> colors(static_cast<std::size_t>(n), 0);
  {
    std::vector<std::array<int, 4>> init(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      init[static_cast<std::size_t>(i)] = {static_cast<int>(g.atom(i).element), g.atom(i).charge,
                                           g.degree(i), g.bond_order_sum(i)};
    std::vector<std::array<int, 4>> uniq = init;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (int i = 0; i < n; ++i)
      colors[static_cast<std::size_t>(i)] = static_cast<int>(
          std::lower_bound(uniq.begin(), uniq.end(), init[static_cast<std::size_t>(i)]) -
          uniq.begin());
  }
  for (int round = 0; round < 8; ++round) {
    std::vector<std::pair<int, std::vector<std::pair<int, int>>>> sig(
        static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      auto& s = sig[static_cast<std::size_t>(i)];
      s.first = colors[static_cast<std::size_t>(i)];
      for (const auto& nb : g.neighbors(i))
        s.second.push_back({nb.order, colors[static_cast<std::size_t>(nb.atom)]});
      std::sort(s.second.begin(), s.second.end());
    }
    auto uniq = sig;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (int i = 0; i < n; ++i)
      colors[static_cast<std::size_t>(i)] = static_cast<int>(
          std::lower_bound(uniq.begin(), uniq.end(), sig[static_cast<std::size_t>(i)]) -
          uniq.begin());
  }
  return colors;
}

inline char bond_char(int order) { return order == 1 ? '-' : (order == 2 ? '=' : '#'); }

// One in-progress DFS serialization. Branching on ties copies the whole
// state, which is cheap at molecule scale and avoids undo bookkeeping.
struct SerializationState {
  std::string out;
  std::vector<int> place;
  std::vector<int> work;  // stack of open atoms whose children are pending
  int counter = 0;
};

class CanonicalSerializer {
 public:
  CanonicalSerializer(const MoleculeGraph& g, const std::vector<int>& colors)
      : g_(g), colors_(colors) {}

  // Lexicographically minimal serialization over start atoms and tie orders,
  // within a step budget. Past the budget the first deterministic ordering
  // stands in, so keys stay reproducible even for pathological symmetry.
  std::string minimal(const std::vector<int>& members) {
    best_.clear();
    have_best_ = false;
    budget_ = 200000;
    for (int start : members) {
      SerializationState st;
      st.place.assign(static_cast<std::size_t>(g_.atom_count()), -1);
      enter(st, start, 0);
      run(st);
    }
    return best_;
  }

 private:
  void enter(SerializationState& st, int v, int incoming_order) {
    if (incoming_order > 0) {
      st.out += '(';
      st.out += bond_char(incoming_order);
    }
    st.place[static_cast<std::size_t>(v)] = st.counter++;
    st.out += element_symbol(g_.atom(v).element);
    const int q = g_.atom(v).charge;
    if (q != 0) st.out += (q > 0 ? "+" : "") + std::to_string(q);
    // Ring closures to already-placed atoms, nearest placement first.
    std::vector<std::pair<int, int>> back;  // (place[u], order)
    for (const auto& nb : g_.neighbors(v)) {
      const int pu = st.place[static_cast<std::size_t>(nb.atom)];
      const bool is_tree_parent = !st.work.empty() && nb.atom == st.work.back();
      if (pu >= 0 && !is_tree_parent) back.push_back({pu, nb.order});
    }
    std::sort(back.begin(), back.end());
    for (const auto& [pu, order] : back) {
      st.out += '&';
      st.out += bond_char(order);
      st.out += std::to_string(pu);
    }
    st.work.push_back(v);
  }

  // True when this candidate can still beat (or equal) the current best.
  bool viable(const SerializationState& st) const {
    if (!have_best_) return true;
    const std::size_t n = std::min(st.out.size(), best_.size());
    const int c = st.out.compare(0, n, best_, 0, n);
    if (c != 0) return c < 0;
    // Identical prefix: shorter-so-far can still extend below best.
    return true;
  }

  void run(SerializationState st) {
    while (true) {
      if (!viable(st)) return;
      if (st.work.empty()) {
        if (!have_best_ || st.out < best_) {
          best_ = st.out;
          have_best_ = true;
        }
        return;
      }
      const int v = st.work.back();
      std::vector<const MoleculeGraph::Neighbor*> unvisited;
      for (const auto& nb : g_.neighbors(v))
        if (st.place[static_cast<std::size_t>(nb.atom)] < 0) unvisited.push_back(&nb);
      if (unvisited.empty()) {
        st.work.pop_back();
        if (!st.work.empty()) st.out += ')';
        continue;
      }
      auto key = [&](const MoleculeGraph::Neighbor* nb) {
        return std::pair<int, int>(nb->order, colors_[static_cast<std::size_t>(nb->atom)]);
      };
      const MoleculeGraph::Neighbor* first = unvisited[0];
      for (const auto* nb : unvisited)
        if (key(nb) < key(first)) first = nb;
      std::vector<const MoleculeGraph::Neighbor*> tied;
      for (const auto* nb : unvisited)
        if (key(nb) == key(first)) tied.push_back(nb);
      if (tied.size() == 1 || budget_ <= 0) {
        --budget_;
        enter(st, tied[0]->atom, tied[0]->order);
        continue;
      }
      budget_ -= static_cast<long>(tied.size());
      for (const auto* nb : tied) {
        SerializationState branch = st;
        enter(branch, nb->atom, nb->order);
        run(std::move(branch));
      }
      return;
    }
  }

  const MoleculeGraph& g_;
  const std::vector<int>& colors_;
  std::string best_;
  bool have_best_ = false;
  long budget_ = 0;
};

}  // namespace detail

// Label-independent structural key: isomorphic graphs (element, charge, and
// bond-order preserving) map to the same string. Refinement colors order the
// DFS; remaining ties are searched exhaustively under a step budget.
// Components are keyed independently and joined sorted, so the key is also
// well defined for disconnected graphs.
inline std::string canonical_key(const MoleculeGraph& g) {
  if (g.atom_count() == 0) return "";
  const auto colors = detail::refine_colors(g);
  const int n = g.atom_count();
  std::vector<int> component(static_cast<std::size_t>(n), -1);
  int comps = 0;
  std::vector<int> stack;
  for (int s = 0; s < n; ++s) {
    if (component[static_cast<std::size_t>(s)] >= 0) continue;
    const int c = comps++;
    stack.assign(1, s);
    component[static_cast<std::size_t>(s)] = c;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (const auto& nb : g.neighbors(v)) {
        if (component[static_cast<std::size_t>(nb.atom)] < 0) {
          component[static_cast<std::size_t>(nb.atom)] = c;
          stack.push_back(nb.atom);
        }
      }
    }
  }
  std::vector<std::string> keys;
  keys.reserve(static_cast<std::size_t>(comps));
  for (int c = 0; c < comps; ++c) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i)
      if (component[static_cast<std::size_t>(i)] == c) members.push_back(i);
    detail::CanonicalSerializer ser(g, colors);
    keys.push_back(ser.minimal(members));
  }
  std::sort(keys.begin(), keys.end());
  std::string out;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (i) out += '.';
    out += keys[i];
  }
  return out;
}

}  // namespace todi
