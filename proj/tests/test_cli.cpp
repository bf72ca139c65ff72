#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "todi/cli_app.hpp"

using namespace todi;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run_cli(std::move(args), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

// One shared scratch area: a tiny corpus plus trained checkpoints, built once
// through the command line itself and reused by every case below.
struct WorkArea {
  std::string dir = "cli_scratch";
  std::string config = dir + "/tiny.json";
  std::string corpus = dir + "/corpus.jsonl";
  std::string omics_ckpt = dir + "/omics.ckpt";
  std::string text_ckpt = dir + "/text.ckpt";
  std::string diff_ckpt = dir + "/diffusion.ckpt";
  std::string generated = dir + "/generated.jsonl";

  WorkArea() {
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream f(config);
    f << R"({
      "seed": 11, "K": 80, "L_max": 48, "L_d": 16, "H": 32, "d_emb": 8, "d_o": 16,
      "T": 40, "skip_stride": 10, "lambda": 0.3, "beta": 1.0, "lr": 0.001,
      "dropout_omics": 0.1, "dropout_diff": 0.0, "epochs": 2, "batch_size": 8,
      "ablation": "full", "n": 80, "max_atoms": 8, "noise_sigma": 0.3,
      "merges": 8, "h_text": 32, "heads": 2, "blocks": 1, "mask_ratio": 0.15
    })";
    f.close();
    REQUIRE(run({"datagen", "--config", config, "--out", corpus}).code == 0);
    REQUIRE(run({"train-omics", "--config", config, "--corpus", corpus, "--out", omics_ckpt})
                .code == 0);
    REQUIRE(run({"train-text", "--config", config, "--corpus", corpus, "--out", text_ckpt})
                .code == 0);
    REQUIRE(run({"train-diffusion", "--config", config, "--corpus", corpus, "--omics-ckpt",
                 omics_ckpt, "--text-ckpt", text_ckpt, "--out", diff_ckpt})
                .code == 0);
    REQUIRE(run({"generate", "--config", config, "--ckpt", diff_ckpt, "--omics-ckpt", omics_ckpt,
                 "--text-ckpt", text_ckpt, "--conditions", corpus, "--samples", "1", "--out",
                 generated})
                .code == 0);
  }
};

WorkArea& area() {
  static WorkArea a;
  return a;
}

}  // namespace

TEST_CASE("cli usage errors exit with code 2") {
  REQUIRE(run({"--help"}).code == 0);
  REQUIRE(run({}).code == 2);
  REQUIRE(run({"no-such-command"}).code == 2);
  REQUIRE(run({"train-omics", "--corpus", "x.jsonl"}).code == 2);  // --out missing
  const CliResult bad_flag = run({"datagen", "--wat"});
  REQUIRE(bad_flag.code == 2);
}

TEST_CASE("cli rejects bad configs with named keys") {
  WorkArea& a = area();
  const std::string bad = a.dir + "/bad.json";
  {
    std::ofstream f(bad);
    f << "{\"lamda\": 0.5}";
  }
  const CliResult r = run({"datagen", "--config", bad, "--out", a.dir + "/x.jsonl"});
  REQUIRE(r.code == 2);
  REQUIRE_THAT(r.err, ContainsSubstring("unknown config key: lamda"));
  REQUIRE(run({"datagen", "--config", a.config, "--ablation", "bogus",
               "--out", a.dir + "/x.jsonl"})
              .code == 2);
  REQUIRE(run({"datagen", "--config", a.dir + "/absent.json", "--out", a.dir + "/x.jsonl"})
              .code == 3);
}

TEST_CASE("cli datagen writes the corpus family deterministically") {
  WorkArea& a = area();
  REQUIRE(fs::exists(a.corpus));
  REQUIRE(fs::exists(a.corpus + ".stats.json"));
  REQUIRE(fs::exists(a.corpus + ".selfies_vocab.txt"));
  REQUIRE(fs::exists(a.corpus + ".text_vocab.txt"));
  const CliResult again =
      run({"datagen", "--config", a.config, "--out", a.dir + "/corpus_again.jsonl"});
  REQUIRE(again.code == 0);
  REQUIRE_THAT(again.out, ContainsSubstring("80 records"));
  REQUIRE(slurp(a.dir + "/corpus_again.jsonl") == slurp(a.corpus));
}

TEST_CASE("cli training stages leave checkpoints and loss logs") {
  WorkArea& a = area();
  SECTION("profile encoder artifacts") {
    const Checkpoint ck = load_checkpoint(a.omics_ckpt);
    REQUIRE(ck.module == "omics");
    const auto log = lines_of(slurp(a.omics_ckpt + ".loss.csv"));
    REQUIRE(log.size() == 3);  // header + one row per epoch
    REQUIRE(log[0] == "epoch,total,recon,kl");
    REQUIRE_THAT(log[1], ContainsSubstring("1,"));
  }
  SECTION("text encoder artifacts") {
    const Checkpoint ck = load_checkpoint(a.text_ckpt);
    REQUIRE(ck.module == "text");
    REQUIRE(fs::exists(a.text_ckpt + ".vocab.txt"));
    const auto log = lines_of(slurp(a.text_ckpt + ".loss.csv"));
    REQUIRE(log.size() == 3);
    REQUIRE(log[0] == "epoch,loss");
  }
  SECTION("denoiser artifacts carry the conditioning mode") {
    const Checkpoint ck = load_checkpoint(a.diff_ckpt);
    REQUIRE(ck.module == "diffusion:full");
    REQUIRE(fs::exists(a.diff_ckpt + ".selfies_vocab.txt"));
    const auto log = lines_of(slurp(a.diff_ckpt + ".loss.csv"));
    REQUIRE(log.size() == 3);
    REQUIRE(log[0] == "epoch,total,mse,nll,align");
  }
  SECTION("profile width mismatches are refused") {
    const std::string narrow = a.dir + "/narrow.json";
    {
      std::ofstream f(narrow);
      f << R"({"K": 78, "epochs": 1, "d_o": 16})";
    }
    const CliResult r =
        run({"train-omics", "--config", narrow, "--corpus", a.corpus, "--out", a.dir + "/x.ckpt"});
    REQUIRE(r.code == 4);
    REQUIRE_THAT(r.err, ContainsSubstring("profile width"));
  }
  SECTION("denoiser training requires the upstream checkpoints") {
    const CliResult r = run(
        {"train-diffusion", "--config", a.config, "--corpus", a.corpus, "--out", a.dir + "/x.ckpt"});
    REQUIRE(r.code == 2);
    REQUIRE_THAT(r.err, ContainsSubstring("--omics-ckpt"));
  }
}

TEST_CASE("cli generate emits decodable samples deterministically") {
  WorkArea& a = area();
  const auto rows = lines_of(slurp(a.generated));
  REQUIRE(rows.size() == 80);  // one sample per corpus-row condition
  int finite_errors = 0;
  for (const auto& line : rows) {
    const auto j = nlohmann::json::parse(line);
    REQUIRE(j.contains("condition"));
    REQUIRE(j.contains("selfies"));
    REQUIRE(j.contains("smiles"));
    REQUIRE(j.contains("noise_error"));
    const MoleculeGraph g = decode_selfies(j.at("selfies").get<std::string>());
    REQUIRE(is_valid_molecule(g));
    if (std::isfinite(j.at("noise_error").get<double>())) ++finite_errors;
  }
  REQUIRE(finite_errors == 80);

  SECTION("reruns are byte-identical; sample counts multiply") {
    const std::string again = a.dir + "/generated_again.jsonl";
    REQUIRE(run({"generate", "--config", a.config, "--ckpt", a.diff_ckpt, "--omics-ckpt",
                 a.omics_ckpt, "--text-ckpt", a.text_ckpt, "--conditions", a.corpus, "--samples",
                 "1", "--out", again})
                .code == 0);
    REQUIRE(slurp(again) == slurp(a.generated));
  }
  SECTION("conditioning mode must match the checkpoint") {
    const CliResult r =
        run({"generate", "--config", a.config, "--ablation", "no-omics", "--ckpt", a.diff_ckpt,
             "--text-ckpt", a.text_ckpt, "--conditions", a.corpus, "--out", a.dir + "/x.jsonl"});
    REQUIRE(r.code == 4);
    REQUIRE_THAT(r.err, ContainsSubstring("diffusion:full"));
  }
  SECTION("conditions must satisfy the conditioning mode") {
    const std::string text_only = a.dir + "/text_only.jsonl";
    {
      std::ofstream f(text_only);
      f << R"({"description": "The molecule contains amide."})" << "\n";
    }
    const CliResult r =
        run({"generate", "--config", a.config, "--ckpt", a.diff_ckpt, "--omics-ckpt", a.omics_ckpt,
             "--text-ckpt", a.text_ckpt, "--conditions", text_only, "--out", a.dir + "/x.jsonl"});
    REQUIRE(r.code == 2);
    REQUIRE_THAT(r.err, ContainsSubstring("conditions line 1"));
  }
}

TEST_CASE("cli evaluate scores a set against itself as the identity") {
  WorkArea& a = area();
  const std::string csv_path = a.dir + "/self_eval.csv";
  const std::string json_path = a.dir + "/self_eval.json";
  const CliResult r = run({"evaluate", "--generated", a.generated, "--reference", a.generated,
                           "--out-csv", csv_path, "--out-json", json_path});
  REQUIRE(r.code == 0);
  const auto csv = lines_of(slurp(csv_path));
  REQUIRE(csv.size() == 2);
  REQUIRE(csv[0] == "Validity,Uniqueness,Novelty,Levenshtein,FCD,Morgan,MACCS");

  const auto j = nlohmann::json::parse(slurp(json_path));
  REQUIRE(j.at("validity").get<double>() == 1.0);
  REQUIRE(j.at("novelty").get<double>() == 0.0);  // nothing beyond its own reference
  REQUIRE(j.at("levenshtein").get<double>() == Catch::Approx(1.0));
  REQUIRE(j.at("fcd").get<double>() <= 1e-6);
  REQUIRE(j.at("morgan").get<double>() == Catch::Approx(1.0));
  REQUIRE(j.at("maccs").get<double>() == Catch::Approx(1.0));

  SECTION("against the corpus all metrics stay in range") {
    const std::string vs = a.dir + "/vs_corpus.json";
    REQUIRE(run({"evaluate", "--generated", a.generated, "--reference", a.corpus, "--out-json",
                 vs})
                .code == 0);
    const auto m = nlohmann::json::parse(slurp(vs));
    for (const char* key : {"validity", "uniqueness", "novelty", "levenshtein", "morgan", "maccs"}) {
      const double v = m.at(key).get<double>();
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
    REQUIRE(m.at("fcd").get<double>() >= 0.0);
  }
  SECTION("missing molecule files exit 3") {
    REQUIRE(run({"evaluate", "--generated", a.dir + "/nope.jsonl", "--reference", a.corpus})
                .code == 3);
  }
}

TEST_CASE("cli hit-ratio thresholds behave as documented") {
  WorkArea& a = area();
  const std::string json_path = a.dir + "/hits.json";
  REQUIRE(run({"hit-ratio", "--generated", a.generated, "--out-json", json_path}).code == 0);
  const auto j = nlohmann::json::parse(slurp(json_path));
  REQUIRE(j.at("count").get<int>() == 80);
  const double default_ratio = j.at("hit_ratio").get<double>();
  REQUIRE(default_ratio >= 0.0);
  REQUIRE(default_ratio <= 1.0);
  const double match_rate = j.at("group_match_rate").get<double>();

  // A huge threshold admits everything; a negative one leaves group matches only.
  const CliResult all = run({"hit-ratio", "--generated", a.generated, "--delta", "1e18"});
  REQUIRE_THAT(all.out, ContainsSubstring("hit ratio 1.0000"));
  const std::string only_match = a.dir + "/hits_match.json";
  REQUIRE(run({"hit-ratio", "--generated", a.generated, "--delta", "-1", "--out-json", only_match})
              .code == 0);
  const auto jm = nlohmann::json::parse(slurp(only_match));
  REQUIRE(jm.at("hit_ratio").get<double>() == Catch::Approx(match_rate));

  SECTION("per-sample table lines up with the summary") {
    const std::string csv_path = a.dir + "/hits.csv";
    REQUIRE(run({"hit-ratio", "--generated", a.generated, "--out-csv", csv_path}).code == 0);
    const auto rows = lines_of(slurp(csv_path));
    REQUIRE(rows.size() == 81);
    REQUIRE(rows[0] == "index,group_match,noise_error,hit");
  }
}

TEST_CASE("cli pca-export writes a labelled scatter") {
  WorkArea& a = area();
  const std::string csv_path = a.dir + "/scatter.csv";
  REQUIRE(run({"pca-export", "--config", a.config, "--corpus", a.corpus, "--omics-ckpt",
               a.omics_ckpt, "--out", csv_path, "--components", "2", "--limit", "10"})
              .code == 0);
  const auto rows = lines_of(slurp(csv_path));
  REQUIRE(rows.size() == 21);  // header + 10 originals + 10 reconstructions
  REQUIRE(rows[0] == "pc1,pc2,kind");
  REQUIRE_THAT(rows[1], ContainsSubstring("original"));
  REQUIRE_THAT(rows[20], ContainsSubstring("reconstructed"));
}

TEST_CASE("cli pipeline produces the full artifact family") {
  WorkArea& a = area();
  const std::string wd = a.dir + "/pipe";
  const CliResult r =
      run({"pipeline", "--config", a.config, "--workdir", wd, "--samples", "70"});
  REQUIRE(r.code == 0);
  for (const char* name : {"corpus.jsonl", "omics.ckpt", "text.ckpt", "diffusion.ckpt",
                           "conditions.jsonl", "generated.jsonl", "metrics.csv", "metrics.json",
                           "hits.json"})
    REQUIRE(fs::exists(wd + "/" + name));
  const auto metrics = lines_of(slurp(wd + "/metrics.csv"));
  REQUIRE(metrics.size() == 2);
  REQUIRE(metrics[0] == "Validity,Uniqueness,Novelty,Levenshtein,FCD,Morgan,MACCS");
}

TEST_CASE("cli lambda-sweep emits one row per weight") {
  WorkArea& a = area();
  const std::string wd = a.dir + "/sweep";
  const CliResult r =
      run({"lambda-sweep", "--config", a.config, "--workdir", wd, "--samples", "66"});
  REQUIRE(r.code == 0);
  const auto rows = lines_of(slurp(wd + "/lambda_metrics.csv"));
  REQUIRE(rows.size() == 8);
  REQUIRE(rows[0] == "Lambda,Validity,Uniqueness,Novelty,BLEU,FCD,Levenshtein,MACCS,Morgan");
  const std::vector<std::string> weights = {"0.0", "0.1", "0.3", "0.5", "0.7", "0.9", "1.0"};
  for (std::size_t i = 0; i < weights.size(); ++i) {
    REQUIRE_THAT(rows[i + 1], ContainsSubstring(weights[i] + ","));
    REQUIRE(std::count(rows[i + 1].begin(), rows[i + 1].end(), ',') == 8);
  }
  SECTION("sweeping an ablated run is refused") {
    REQUIRE(run({"lambda-sweep", "--config", a.config, "--ablation", "no-text", "--workdir", wd})
                .code == 2);
  }
}

TEST_CASE("cli ablate compares the three conditioning modes") {
  WorkArea& a = area();
  const std::string wd = a.dir + "/abl";
  const CliResult r = run({"ablate", "--config", a.config, "--workdir", wd, "--samples", "66"});
  REQUIRE(r.code == 0);
  const auto rows = lines_of(slurp(wd + "/ablation_metrics.csv"));
  REQUIRE(rows.size() == 4);
  REQUIRE(rows[0] == "Setting,Validity,Uniqueness,Novelty,Levenshtein,FCD,Morgan,MACCS");
  REQUIRE_THAT(rows[1], ContainsSubstring("full,"));
  REQUIRE_THAT(rows[2], ContainsSubstring("no-text,"));
  REQUIRE_THAT(rows[3], ContainsSubstring("no-omics,"));

  const auto hits = nlohmann::json::parse(slurp(wd + "/ablation_metrics.csv.hits.json"));
  for (const char* setting : {"full", "no-text", "no-omics"}) {
    REQUIRE(hits.contains(setting));
    const double ratio = hits.at(setting).at("hit_ratio").get<double>();
    REQUIRE(ratio >= 0.0);
    REQUIRE(ratio <= 1.0);
  }
}

TEST_CASE("condition parsing names the offending line") {
  WorkArea& a = area();
  const std::string bad = a.dir + "/bad_conditions.jsonl";
  {
    std::ofstream f(bad);
    f << R"({"description": "The molecule contains amide.", "omics": [1.0]})" << "\n";
    f << "{broken" << "\n";
  }
  REQUIRE_THROWS_WITH(cli::load_conditions(bad), ContainsSubstring("line 2"));
  {
    std::ofstream f(bad, std::ios::trunc);
    f << R"({"id": "x"})" << "\n";
  }
  REQUIRE_THROWS_WITH(cli::load_conditions(bad),
                      ContainsSubstring("description or an expression profile"));
}

TEST_CASE("listed-group parsing reads the description format") {
  using cli::parse_listed_groups;
  const auto both = parse_listed_groups(
      "The molecule contains carboxylic-acid, aromatic-ring. It has 1 rings and 1 aromatic rings.");
  REQUIRE(both.has_value());
  REQUIRE(both->size() == 2);
  REQUIRE((*both)[0] == std::string("carboxylic-acid"));

  const auto none = parse_listed_groups(
      "The molecule contains no listed functional groups. It has 0 rings and 0 aromatic rings.");
  REQUIRE(none.has_value());
  REQUIRE(none->empty());

  REQUIRE_FALSE(parse_listed_groups("A short unrelated sentence.").has_value());

  const MoleculeGraph ethanol = decode_selfies("[C][C][O]");
  REQUIRE(cli::molecule_matches_groups(ethanol, std::vector<std::string>{"hydroxy"}));
  REQUIRE_FALSE(cli::molecule_matches_groups(ethanol, std::vector<std::string>{"amide"}));
  REQUIRE_FALSE(cli::molecule_matches_groups(ethanol, std::vector<std::string>{}));
  const MoleculeGraph methane = decode_selfies("[C]");
  REQUIRE(cli::molecule_matches_groups(methane, std::vector<std::string>{}));
  REQUIRE_FALSE(cli::molecule_matches_groups(methane, std::nullopt));
}
