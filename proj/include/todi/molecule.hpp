#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "todi/errors.hpp"

namespace todi {

// Supported heavy-atom elements. Hydrogens are implicit: whatever valence a
// heavy atom does not spend on explicit bonds is filled with H.
enum class Element : std::uint8_t { B, C, N, O, S, P, F, Cl, Br, I };

inline constexpr int kElementCount = 10;

inline constexpr std::array<const char*, kElementCount> kElementSymbols = {
    "B", "C", "N", "O", "S", "P", "F", "Cl", "Br", "I"};

inline constexpr std::array<int, kElementCount> kMaxValence = {3, 4, 3, 2, 6, 5, 1, 1, 1, 1};

inline constexpr std::array<double, kElementCount> kAtomicMass = {
    10.81, 12.011, 14.007, 15.999, 32.06, 30.974, 18.998, 35.45, 79.904, 126.904};

inline constexpr double kHydrogenMass = 1.008;

inline const char* element_symbol(Element e) { return kElementSymbols[static_cast<int>(e)]; }
inline int max_valence(Element e) { return kMaxValence[static_cast<int>(e)]; }
inline double atomic_mass(Element e) { return kAtomicMass[static_cast<int>(e)]; }

inline std::optional<Element> element_from_symbol(const std::string& s) {
  for (int i = 0; i < kElementCount; ++i)
    if (s == kElementSymbols[i]) return static_cast<Element>(i);
  return std::nullopt;
}

struct Atom {
  Element element = Element::C;
  int charge = 0;
};

struct Bond {
  int a = 0;
  int b = 0;
  int order = 1;  // 1, 2, or 3
};

// Undirected labeled multigraph-free molecular graph. Construction enforces
// the structural rules (no self bonds, one bond per pair, order in 1..3);
// valence is checked separately so partially built or deliberately broken
// graphs can still be inspected.
class MoleculeGraph {
 public:
  int add_atom(Element e, int charge = 0) {
    atoms_.push_back(Atom{e, charge});
    adj_.emplace_back();
    return static_cast<int>(atoms_.size()) - 1;
  }

  void add_bond(int a, int b, int order) {
    if (a < 0 || b < 0 || a >= atom_count() || b >= atom_count())
      throw ContractError("bond endpoint out of range");
    if (a == b) throw ContractError("self bond on atom " + std::to_string(a));
    if (order < 1 || order > 3) throw ContractError("bond order must be 1, 2, or 3");
    if (bond_between(a, b) != 0)
      throw ContractError("duplicate bond " + std::to_string(a) + "-" + std::to_string(b));
    const int id = static_cast<int>(bonds_.size());
    bonds_.push_back(Bond{a, b, order});
    adj_[static_cast<std::size_t>(a)].push_back({b, order, id});
    adj_[static_cast<std::size_t>(b)].push_back({a, order, id});
  }

  int atom_count() const { return static_cast<int>(atoms_.size()); }
  int bond_count() const { return static_cast<int>(bonds_.size()); }
  const Atom& atom(int i) const { return atoms_[static_cast<std::size_t>(i)]; }
  const std::vector<Bond>& bonds() const { return bonds_; }

  struct Neighbor {
    int atom;
    int order;
    int bond_id;
  };
  const std::vector<Neighbor>& neighbors(int i) const { return adj_[static_cast<std::size_t>(i)]; }

  int degree(int i) const { return static_cast<int>(adj_[static_cast<std::size_t>(i)].size()); }

  // 0 when the atoms are not bonded.
  int bond_between(int a, int b) const {
    for (const auto& n : adj_[static_cast<std::size_t>(a)])
      if (n.atom == b) return n.order;
    return 0;
  }

  int bond_order_sum(int i) const {
    int s = 0;
    for (const auto& n : adj_[static_cast<std::size_t>(i)]) s += n.order;
    return s;
  }

  // May be negative on an over-bonded atom; the validity check catches that.
  int implicit_hydrogens(int i) const {
    return max_valence(atoms_[static_cast<std::size_t>(i)].element) - bond_order_sum(i);
  }

  bool valences_ok() const {
    for (int i = 0; i < atom_count(); ++i)
      if (implicit_hydrogens(i) < 0) return false;
    return true;
  }

  int component_count() const {
    const int n = atom_count();
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    int comps = 0;
    std::vector<int> stack;
    for (int s = 0; s < n; ++s) {
      if (seen[static_cast<std::size_t>(s)]) continue;
      ++comps;
      stack.assign(1, s);
      seen[static_cast<std::size_t>(s)] = 1;
      while (!stack.empty()) {
        const int v = stack.back();
        stack.pop_back();
        for (const auto& nb : adj_[static_cast<std::size_t>(v)]) {
          if (!seen[static_cast<std::size_t>(nb.atom)]) {
            seen[static_cast<std::size_t>(nb.atom)] = 1;
            stack.push_back(nb.atom);
          }
        }
      }
    }
    return comps;
  }

  bool connected() const { return atom_count() == 0 || component_count() == 1; }

  // Description of the first violated structural/valence rule, if any.
  std::optional<std::string> invariant_violation() const {
    for (int i = 0; i < atom_count(); ++i) {
      if (implicit_hydrogens(i) < 0)
        return "atom " + std::to_string(i) + " (" + element_symbol(atom(i).element) +
               ") exceeds max valence: bond order sum " + std::to_string(bond_order_sum(i));
    }
    return std::nullopt;
  }

  double molecular_weight() const {
    double w = 0.0;
    for (int i = 0; i < atom_count(); ++i) {
      w += atomic_mass(atoms_[static_cast<std::size_t>(i)].element);
      const int h = implicit_hydrogens(i);
      if (h > 0) w += kHydrogenMass * h;
    }
    return w;
  }

  // Independent cycles (cyclomatic number) across all components.
  int ring_count() const { return bond_count() - atom_count() + component_count(); }

 private:
  std::vector<Atom> atoms_;
  std::vector<Bond> bonds_;
  std::vector<std::vector<Neighbor>> adj_;
};

// Length of the shortest cycle containing bond a-b, or 0 when the bond is not
// in any cycle. BFS for the shortest a..b path that avoids the bond itself.
inline int shortest_cycle_through_bond(const MoleculeGraph& g, int a, int b) {
  if (g.bond_between(a, b) == 0) throw ContractError("no bond between the given atoms");
  const int n = g.atom_count();
  std::vector<int> dist(static_cast<std::size_t>(n), -1);
  std::deque<int> queue;
  dist[static_cast<std::size_t>(a)] = 0;
  queue.push_back(a);
  while (!queue.empty()) {
    const int v = queue.front();
    queue.pop_front();
    if (v == b) return dist[static_cast<std::size_t>(b)] + 1;
    for (const auto& nb : g.neighbors(v)) {
      if (v == a && nb.atom == b) continue;  // skip the bond whose cycle we seek
      if (dist[static_cast<std::size_t>(nb.atom)] < 0) {
        dist[static_cast<std::size_t>(nb.atom)] = dist[static_cast<std::size_t>(v)] + 1;
        queue.push_back(nb.atom);
      }
    }
  }
  return 0;
}

namespace detail {

// Cheap isomorphism rejections: per-element degree/valence profiles must agree.
inline bool same_invariant_profile(const MoleculeGraph& a, const MoleculeGraph& b) {
  if (a.atom_count() != b.atom_count() || a.bond_count() != b.bond_count()) return false;
  auto profile = [](const MoleculeGraph& g) {
    std::vector<std::uint64_t> p;
    p.reserve(static_cast<std::size_t>(g.atom_count()));
    for (int i = 0; i < g.atom_count(); ++i) {
      const std::uint64_t e = static_cast<std::uint64_t>(g.atom(i).element);
      const std::uint64_t c = static_cast<std::uint64_t>(g.atom(i).charge + 8);
      const std::uint64_t d = static_cast<std::uint64_t>(g.degree(i));
      const std::uint64_t s = static_cast<std::uint64_t>(g.bond_order_sum(i));
      p.push_back((e << 24) | (c << 16) | (d << 8) | s);
    }
    std::sort(p.begin(), p.end());
    return p;
  };
  std::vector<std::uint64_t> bo_a, bo_b;
  for (const auto& bd : a.bonds()) bo_a.push_back(static_cast<std::uint64_t>(bd.order));
  for (const auto& bd : b.bonds()) bo_b.push_back(static_cast<std::uint64_t>(bd.order));
  std::sort(bo_a.begin(), bo_a.end());
  std::sort(bo_b.begin(), bo_b.end());
  return bo_a == bo_b && profile(a) == profile(b);
}

class IsomorphismSearch {
 public:
  IsomorphismSearch(const MoleculeGraph& a, const MoleculeGraph& b) : a_(a), b_(b) {}

  bool run() {
    const int n = a_.atom_count();
    map_ab_.assign(static_cast<std::size_t>(n), -1);
    map_ba_.assign(static_cast<std::size_t>(n), -1);
    return extend(0);
  }

 private:
  bool compatible(int va, int vb) const {
    const Atom& pa = a_.atom(va);
    const Atom& pb = b_.atom(vb);
    if (pa.element != pb.element || pa.charge != pb.charge) return false;
    if (a_.degree(va) != b_.degree(vb)) return false;
    // Every already-mapped neighbor of va must be bonded to vb identically,
    // and vb must not be bonded to any mapped atom va is not bonded to.
    for (const auto& nb : a_.neighbors(va)) {
      const int img = map_ab_[static_cast<std::size_t>(nb.atom)];
      if (img >= 0 && b_.bond_between(vb, img) != nb.order) return false;
    }
    for (const auto& nb : b_.neighbors(vb)) {
      const int pre = map_ba_[static_cast<std::size_t>(nb.atom)];
      if (pre >= 0 && a_.bond_between(va, pre) != nb.order) return false;
    }
    return true;
  }

  // Map atoms of a_ in index order; connectivity pruning comes from
  // `compatible` consulting everything mapped so far.
  bool extend(int va) {
    const int n = a_.atom_count();
    if (va == n) return true;
    for (int vb = 0; vb < n; ++vb) {
      if (map_ba_[static_cast<std::size_t>(vb)] >= 0) continue;
      if (!compatible(va, vb)) continue;
      map_ab_[static_cast<std::size_t>(va)] = vb;
      map_ba_[static_cast<std::size_t>(vb)] = va;
      if (extend(va + 1)) return true;
      map_ab_[static_cast<std::size_t>(va)] = -1;
      map_ba_[static_cast<std::size_t>(vb)] = -1;
    }
    return false;
  }

  const MoleculeGraph& a_;
  const MoleculeGraph& b_;
  std::vector<int> map_ab_;
  std::vector<int> map_ba_;
};

}  // namespace detail

// Exact element/charge/bond-order preserving isomorphism test. Backtracking
// with degree and partial-adjacency pruning; intended for graphs up to a few
// dozen atoms (test oracles, round-trip verification).
inline bool are_isomorphic(const MoleculeGraph& a, const MoleculeGraph& b) {
  if (!detail::same_invariant_profile(a, b)) return false;
  if (a.atom_count() == 0) return true;
  detail::IsomorphismSearch search(a, b);
  return search.run();
}

}  // namespace todi
