#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "mol_testutil.hpp"
#include "todi/canonical.hpp"
#include "todi/molecule.hpp"
#include "todi/rng.hpp"
#include "todi/selfies.hpp"

using todi::decode_selfies;
using todi::Element;
using todi::graph_to_selfies;
using todi::MoleculeGraph;
using todi::SelfiesToken;
using todi::SelfiesVocabulary;
using todi::TokenKind;
using todi::tokenize;

namespace {

struct BondSpec {
  int a, b, order;
};

// Decoded graph must have exactly these atoms and bonds (by construction id).
void expect_graph(const MoleculeGraph& g, const std::vector<Element>& atoms,
                  const std::vector<BondSpec>& bonds) {
  REQUIRE(g.atom_count() == static_cast<int>(atoms.size()));
  for (std::size_t i = 0; i < atoms.size(); ++i)
    REQUIRE(g.atom(static_cast<int>(i)).element == atoms[i]);
  REQUIRE(g.bond_count() == static_cast<int>(bonds.size()));
  for (const auto& b : bonds) REQUIRE(g.bond_between(b.a, b.b) == b.order);
}

MoleculeGraph benzene_fixture() {
  MoleculeGraph g;
  for (int i = 0; i < 6; ++i) g.add_atom(Element::C);
  const int orders[6] = {2, 1, 2, 1, 2, 1};
  for (int i = 0; i < 6; ++i) g.add_bond(i, (i + 1) % 6, orders[i]);
  return g;
}

std::vector<SelfiesToken> random_token_sequence(todi::Rng& rng, int max_len) {
  const auto& table = todi::detail::base_token_table();
  const int len = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len + 1)));
  std::vector<SelfiesToken> out;
  out.reserve(static_cast<std::size_t>(len));
  for (int i = 0; i < len; ++i) {
    const auto& [text, info] = table[rng.below(table.size())];
    out.push_back({text, info.kind});
  }
  return out;
}

}  // namespace

TEST_CASE("tokenize splits bracketed symbols losslessly") {
  const auto toks = tokenize("[C][C][O]");
  REQUIRE(toks.size() == 3);
  REQUIRE(toks[0].text == "[C]");
  REQUIRE(toks[2].text == "[O]");
  for (const auto& t : toks) REQUIRE(t.kind == TokenKind::Atom);
  REQUIRE(todi::selfies_string(toks) == "[C][C][O]");

  REQUIRE(tokenize("").empty());

  const auto mixed = tokenize("[C][=C][Branch1][C][F][O]");
  REQUIRE(mixed.size() == 6);
  REQUIRE(mixed[0].kind == TokenKind::Atom);
  REQUIRE(mixed[1].kind == TokenKind::BondAtom);
  REQUIRE(mixed[2].kind == TokenKind::Branch);
  REQUIRE(mixed[3].kind == TokenKind::Index);
  REQUIRE(mixed[4].kind == TokenKind::Atom);
  REQUIRE(mixed[5].kind == TokenKind::Atom);
  REQUIRE(todi::selfies_string(mixed) == "[C][=C][Branch1][C][F][O]");

  const auto ring = tokenize("[C][C][C][Ring2][C][Ring1]");
  REQUIRE(ring[3].kind == TokenKind::Ring);
  REQUIRE(ring[4].kind == TokenKind::Index);
  REQUIRE(ring[5].kind == TokenKind::Index);

  const auto pad = tokenize("[PAD][C]");
  REQUIRE(pad[0].kind == TokenKind::Pad);
}

TEST_CASE("tokenize reports errors with byte offsets") {
  try {
    tokenize("x[C]");
    FAIL("expected a parse error");
  } catch (const todi::ParseError& e) {
    REQUIRE(e.offset() == 0);
  }
  try {
    tokenize("[C]x[O]");
    FAIL("expected a parse error");
  } catch (const todi::ParseError& e) {
    REQUIRE(e.offset() == 3);
  }
  try {
    tokenize("[C][Xq]");
    FAIL("expected a parse error");
  } catch (const todi::ParseError& e) {
    REQUIRE(e.offset() == 3);
    REQUIRE(std::string(e.what()).find("[Xq]") != std::string::npos);
  }
  try {
    tokenize("[C][C");
    FAIL("expected a parse error");
  } catch (const todi::ParseError& e) {
    REQUIRE(e.offset() == 3);
  }
}

TEST_CASE("decoding hand-checked strings: chains and bond orders") {
  expect_graph(decode_selfies("[C]"), {Element::C}, {});
  REQUIRE(decode_selfies("[C]").implicit_hydrogens(0) == 4);

  expect_graph(decode_selfies("[C][C][O]"), {Element::C, Element::C, Element::O},
               {{0, 1, 1}, {1, 2, 1}});
  expect_graph(decode_selfies("[O][=C]"), {Element::O, Element::C}, {{0, 1, 2}});
  expect_graph(decode_selfies("[C][#C]"), {Element::C, Element::C}, {{0, 1, 3}});

  // Orders cap at the smaller side's remaining valence.
  expect_graph(decode_selfies("[F][=C]"), {Element::F, Element::C}, {{0, 1, 1}});
  expect_graph(decode_selfies("[O][#C]"), {Element::O, Element::C}, {{0, 1, 2}});

  // A leading bond prefix has nothing to bond to and is dropped.
  expect_graph(decode_selfies("[=C][C]"), {Element::C, Element::C}, {{0, 1, 1}});
  expect_graph(decode_selfies("[=O][=C]"), {Element::O, Element::C}, {{0, 1, 2}});

  // Saturated chain head stops the walk.
  expect_graph(decode_selfies("[C][F][C][C]"), {Element::C, Element::F}, {{0, 1, 1}});

  // Pad tokens are inert wherever they appear.
  expect_graph(decode_selfies("[C][PAD][PAD][C]"), {Element::C, Element::C}, {{0, 1, 1}});
  expect_graph(decode_selfies("[PAD][PAD]"), {}, {});
  expect_graph(decode_selfies(""), {}, {});
}

TEST_CASE("decoding hand-checked strings: branches") {
  expect_graph(decode_selfies("[C][=C][Branch1][C][F][O]"),
               {Element::C, Element::C, Element::F, Element::O},
               {{0, 1, 2}, {1, 2, 1}, {1, 3, 1}});

  // Body runs past the end of the string: clamped.
  expect_graph(decode_selfies("[C][Branch1][=Branch1][C]"), {Element::C, Element::C},
               {{0, 1, 1}});

  // Branch bond order comes from both the directive and the first atom.
  expect_graph(decode_selfies("[C][=Branch1][C][=O][O]"),
               {Element::C, Element::O, Element::O}, {{0, 1, 2}, {0, 2, 1}});
  expect_graph(decode_selfies("[C][#Branch1][C][O]"), {Element::C, Element::O}, {{0, 1, 1}});

  // Attachment atom with one spare valence: directive consumed, body joins
  // the chain instead.
  expect_graph(decode_selfies("[C][O][Branch1][C][C]"), {Element::C, Element::O, Element::C},
               {{0, 1, 1}, {1, 2, 1}});

  // Two-digit branch directive.
  expect_graph(decode_selfies("[C][Branch2][C][C][F][C]"),
               {Element::C, Element::F, Element::C}, {{0, 1, 1}, {0, 2, 1}});

  // A ring directive inside the body can spend the attachment atom's
  // valence before its first atom bonds; the bond order shrinks to fit.
  expect_graph(decode_selfies("[C][C][C][=Branch1][Ring2][=Ring1][Ring1][=C]"),
               {Element::C, Element::C, Element::C, Element::C},
               {{0, 1, 1}, {1, 2, 1}, {2, 0, 2}, {2, 3, 1}});

  // Directives before any atom exists are consumed and dropped.
  expect_graph(decode_selfies("[Branch1][C][C]"), {Element::C}, {});
}

TEST_CASE("decoding hand-checked strings: rings") {
  expect_graph(decode_selfies("[C][C][C][Ring1][Ring1]"),
               {Element::C, Element::C, Element::C}, {{0, 1, 1}, {1, 2, 1}, {2, 0, 1}});

  // Two-digit ring directive encoding the same distance.
  expect_graph(decode_selfies("[C][C][C][Ring2][C][Ring1]"),
               {Element::C, Element::C, Element::C}, {{0, 1, 1}, {1, 2, 1}, {2, 0, 1}});

  // Double-bond ring closure.
  expect_graph(decode_selfies("[C][C][C][C][=Ring1][Ring2]"),
               {Element::C, Element::C, Element::C, Element::C},
               {{0, 1, 1}, {1, 2, 1}, {2, 3, 1}, {3, 0, 2}});

  // Duplicate pair: ignored.
  expect_graph(decode_selfies("[C][C][Ring1][C][Ring1][C]"), {Element::C, Element::C},
               {{0, 1, 1}});
  expect_graph(decode_selfies("[C][C][C][Ring1][F]"), {Element::C, Element::C, Element::C},
               {{0, 1, 1}, {1, 2, 1}});

  // Saturated endpoint: ignored.
  expect_graph(decode_selfies("[C][C][F][Ring1][Ring1]"),
               {Element::C, Element::C, Element::F}, {{0, 1, 1}, {1, 2, 1}});

  // Before any atom: ignored.
  expect_graph(decode_selfies("[Ring1][C][C]"), {Element::C}, {});

  const auto benz = decode_selfies("[C][=C][C][=C][C][=C][Ring1][=Branch1]");
  REQUIRE(todi::are_isomorphic(benz, benzene_fixture()));
  REQUIRE(benz.valences_ok());
}

TEST_CASE("random sequences always decode to valid connected graphs") {
  todi::Rng rng(4242);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto seq = random_token_sequence(rng, 258);
    MoleculeGraph g;
    REQUIRE_NOTHROW(g = todi::decode_to_graph(seq));
    REQUIRE(g.valences_ok());
    REQUIRE(g.connected());
  }
}

TEST_CASE("decoding is deterministic") {
  todi::Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const auto seq = random_token_sequence(rng, 64);
    const auto g1 = todi::decode_to_graph(seq);
    const auto g2 = todi::decode_to_graph(seq);
    REQUIRE(g1.atom_count() == g2.atom_count());
    REQUIRE(g1.bond_count() == g2.bond_count());
    REQUIRE(todi::canonical_key(g1) == todi::canonical_key(g2));
  }
}

TEST_CASE("encoding emits the expected strings for known molecules") {
  MoleculeGraph methane;
  methane.add_atom(Element::C);
  REQUIRE(todi::selfies_string(graph_to_selfies(methane)) == "[C]");

  MoleculeGraph ethanol;
  ethanol.add_atom(Element::C);
  ethanol.add_atom(Element::C);
  ethanol.add_atom(Element::O);
  ethanol.add_bond(0, 1, 1);
  ethanol.add_bond(1, 2, 1);
  REQUIRE(todi::selfies_string(graph_to_selfies(ethanol)) == "[C][C][O]");

  REQUIRE(todi::selfies_string(graph_to_selfies(benzene_fixture())) ==
          "[C][=C][C][=C][C][=C][Ring1][=Branch1]");

  MoleculeGraph formic;
  formic.add_atom(Element::C);
  formic.add_atom(Element::O);
  formic.add_atom(Element::O);
  formic.add_bond(0, 1, 2);
  formic.add_bond(0, 2, 1);
  REQUIRE(todi::selfies_string(graph_to_selfies(formic)) == "[C][=Branch1][C][=O][O]");

  MoleculeGraph empty;
  REQUIRE(graph_to_selfies(empty).empty());
}

TEST_CASE("encoding rejects graphs outside its contract") {
  MoleculeGraph charged;
  charged.add_atom(Element::N, 1);
  REQUIRE_THROWS_AS(graph_to_selfies(charged), todi::UnsupportedFeatureError);

  MoleculeGraph split;
  split.add_atom(Element::C);
  split.add_atom(Element::C);
  REQUIRE_THROWS_AS(graph_to_selfies(split), todi::ContractError);

  MoleculeGraph overfull;
  overfull.add_atom(Element::O);
  overfull.add_atom(Element::C);
  overfull.add_atom(Element::C);
  overfull.add_bond(0, 1, 2);
  overfull.add_bond(0, 2, 1);
  REQUIRE_THROWS_AS(graph_to_selfies(overfull), todi::ContractError);
}

TEST_CASE("graph to tokens to graph round-trips up to isomorphism") {
  todi::Rng rng(31337);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto g = testutil::random_molecule(rng, 20);
    const auto tokens = graph_to_selfies(g);
    const auto back = todi::decode_to_graph(tokens);
    REQUIRE(back.atom_count() == g.atom_count());
    REQUIRE(back.bond_count() == g.bond_count());
    REQUIRE(todi::are_isomorphic(g, back));
  }
}

TEST_CASE("vocabulary learning merges the most frequent bigram") {
  const std::vector<std::string> corpus = {"[C][C][O]", "[C][C]", "[C][C][C]"};
  const auto vocab = SelfiesVocabulary::learn(corpus, 10);
  REQUIRE(vocab.merges().size() == 1);
  REQUIRE(vocab.merges()[0].first == "[C]");
  REQUIRE(vocab.merges()[0].second == "[C]");
  REQUIRE(vocab.contains("[C][C]"));

  const auto encoded = vocab.encode_indices(tokenize("[C][C][O]"));
  REQUIRE(encoded.size() == 2);
  REQUIRE(vocab.token(encoded[0]) == "[C][C]");
  REQUIRE(vocab.token(encoded[1]) == "[O]");

  const auto base = SelfiesVocabulary::base();
  REQUIRE(base.token(0) == std::string(todi::kPadToken));
  REQUIRE(base.size() == 34);
  REQUIRE(base.encode_indices(tokenize("[C][C][O]")).size() == 3);
}

TEST_CASE("index round-trip is the identity on token streams") {
  todi::Rng rng(555);
  std::vector<std::string> corpus;
  for (int i = 0; i < 150; ++i)
    corpus.push_back(todi::selfies_string(graph_to_selfies(testutil::random_molecule(rng, 16))));
  const auto vocab = SelfiesVocabulary::learn(corpus, 50);
  REQUIRE(vocab.size() <= SelfiesVocabulary::kMaxSize);

  double raw_total = 0.0, remapped_total = 0.0;
  for (const auto& s : corpus) {
    const auto toks = tokenize(s);
    const auto idx = vocab.encode_indices(toks);
    REQUIRE(idx.size() <= toks.size());
    const auto back = vocab.decode_indices(idx);
    REQUIRE(back.size() == toks.size());
    for (std::size_t i = 0; i < toks.size(); ++i) {
      REQUIRE(back[i].text == toks[i].text);
      REQUIRE(back[i].kind == toks[i].kind);
    }
    raw_total += static_cast<double>(toks.size());
    remapped_total += static_cast<double>(idx.size());
  }
  REQUIRE(vocab.merges().size() >= 10);
  REQUIRE(remapped_total < raw_total);  // the merges actually compress

  REQUIRE_THROWS_AS(vocab.decode_indices({vocab.size()}), todi::ContractError);
  REQUIRE_THROWS_AS(vocab.decode_indices({-1}), todi::ContractError);
}

TEST_CASE("merged vocabulary entries decode like their expansion") {
  const std::vector<std::string> corpus = {"[C][C][O]", "[C][C]", "[C][C][C]"};
  const auto vocab = SelfiesVocabulary::learn(corpus, 10);
  const auto idx = vocab.encode_indices(tokenize("[C][C]"));
  REQUIRE(idx.size() == 1);
  // Feed the merged token directly into the decoder.
  const std::vector<SelfiesToken> merged = {{vocab.token(idx[0]), TokenKind::Atom}};
  const auto g = todi::decode_to_graph(merged);
  REQUIRE(g.atom_count() == 2);
  REQUIRE(g.bond_between(0, 1) == 1);

  // Alien text is dropped rather than rejected.
  const std::vector<SelfiesToken> alien = {{"<junk>", TokenKind::Atom}, {"[C]", TokenKind::Atom}};
  REQUIRE(todi::decode_to_graph(alien).atom_count() == 1);
}

TEST_CASE("vocabulary files round-trip") {
  todi::Rng rng(808);
  std::vector<std::string> corpus;
  for (int i = 0; i < 60; ++i)
    corpus.push_back(todi::selfies_string(graph_to_selfies(testutil::random_molecule(rng, 12))));
  const auto vocab = SelfiesVocabulary::learn(corpus, 20);
  const std::string path = "vocab_roundtrip_test.txt";
  vocab.save(path);
  const auto loaded = SelfiesVocabulary::load(path);
  REQUIRE(loaded.size() == vocab.size());
  for (int i = 0; i < vocab.size(); ++i) REQUIRE(loaded.token(i) == vocab.token(i));
  REQUIRE(loaded.merges() == vocab.merges());
  const auto toks = tokenize(corpus[0]);
  REQUIRE(loaded.encode_indices(toks) == vocab.encode_indices(toks));
  std::remove(path.c_str());

  REQUIRE_THROWS_AS(SelfiesVocabulary::load("does_not_exist_anywhere.txt"), todi::IoError);
}

TEST_CASE("padding helper fills with the pad index") {
  const auto padded = todi::pad_indices({5, 7}, 4);
  REQUIRE(padded == std::vector<int>{5, 7, 0, 0});
  REQUIRE_THROWS_AS(todi::pad_indices({1, 2, 3}, 2), todi::ContractError);
}

TEST_CASE("canonical keys are invariant under relabeling") {
  todi::Rng rng(2024);
  MoleculeGraph ethanol;
  ethanol.add_atom(Element::C);
  ethanol.add_atom(Element::C);
  ethanol.add_atom(Element::O);
  ethanol.add_bond(0, 1, 1);
  ethanol.add_bond(1, 2, 1);

  MoleculeGraph ether;
  ether.add_atom(Element::C);
  ether.add_atom(Element::O);
  ether.add_atom(Element::C);
  ether.add_bond(0, 1, 1);
  ether.add_bond(1, 2, 1);

  REQUIRE(todi::canonical_key(ethanol) != todi::canonical_key(ether));
  REQUIRE(todi::canonical_key(ethanol) == todi::canonical_key(testutil::permuted_graph(ethanol, rng)));

  for (int trial = 0; trial < 500; ++trial) {
    const auto g = testutil::random_molecule(rng, 14);
    const auto key = todi::canonical_key(g);
    REQUIRE_FALSE(key.empty());
    for (int p = 0; p < 5; ++p)
      REQUIRE(todi::canonical_key(testutil::permuted_graph(g, rng)) == key);
  }

  MoleculeGraph empty;
  REQUIRE(todi::canonical_key(empty).empty());
}

TEST_CASE("canonical keys agree with exact isomorphism on a small-graph suite") {
  todi::Rng rng(616);
  std::vector<MoleculeGraph> pool;

  // Confusable hand-picked structures.
  auto ring6 = [](std::vector<int> orders) {
    MoleculeGraph g;
    for (int i = 0; i < 6; ++i) g.add_atom(Element::C);
    for (int i = 0; i < 6; ++i) g.add_bond(i, (i + 1) % 6, orders[static_cast<std::size_t>(i)]);
    return g;
  };
  pool.push_back(ring6({2, 1, 2, 1, 2, 1}));
  pool.push_back(ring6({1, 2, 1, 2, 1, 2}));
  pool.push_back(ring6({2, 2, 1, 2, 1, 1}));
  pool.push_back(ring6({1, 1, 1, 1, 1, 1}));
  for (int second : {1, 2, 3}) {
    auto g = ring6({1, 1, 1, 1, 1, 1});
    g.add_atom(Element::F);
    g.add_atom(Element::F);
    g.add_bond(0, 6, 1);
    g.add_bond(second, 7, 1);
    pool.push_back(g);
  }
  while (pool.size() < 90) pool.push_back(testutil::random_molecule(rng, 12));

  std::vector<std::string> keys;
  keys.reserve(pool.size());
  for (const auto& g : pool) keys.push_back(todi::canonical_key(g));
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (std::size_t j = i + 1; j < pool.size(); ++j)
      REQUIRE((keys[i] == keys[j]) == todi::are_isomorphic(pool[i], pool[j]));
}
