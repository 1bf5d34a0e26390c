#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "kafa/feature_bank.hpp"
#include "kafa/manifest.hpp"
#include "kafa/retrieval.hpp"
#include "test_util.hpp"

using namespace kafa;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run kafa_cli(const std::string& args) {
  const std::string cmd = std::string(KAFA_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, p)) r.output.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  const auto b = io::read_file(p);
  return {b.begin(), b.end()};
}

void write(const fs::path& p, const std::string& s) { io::write_file(p, s); }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

/// Small synthetic dataset written through the CLI itself.
std::string synth_banks(const test::TempDir& t) {
  const auto r = kafa_cli("make-synth --out " + q(t / "data") + " --dim 16 --n-train 80 --n-val 40 --n-test 40 --seed 2");
  EXPECT_EQ(r.code, 0) << r.output;
  const auto d = t / "data";
  return "--image-bank " + q(d / "image.bank") + " --scene-text-bank " + q(d / "scene_text.bank") + " --brand-bank " +
         q(d / "brand.bank") + " --label-bank " + q(d / "label_text.bank") + " --manifest " + q(d / "manifest.jsonl");
}

const char* kRawEntries =
    "{\"name\":\"Everyday\",\"description\":\"Everyday is a store.\"}\n"
    "{\"name\":\"X\",\"description\":\"X is a network.\"}\n"
    "{\"name\":\"KFC\",\"description\":\"KFC is a fast food chain. It was founded in 1952.\",\"source\":\"curated_list\"}\n"
    "{\"name\":\"Mercedes\",\"description\":\"Mercedes makes cars.\"}\n"
    "{\"name\":\"Bolt\",\"industry\":\"energy\"}\n";

}  // namespace

TEST(Cli, IngestCountsAndIsDeterministic) {
  test::TempDir t("cli-ingest");
  write(t / "raw.jsonl", kRawEntries);
  write(t / "words.txt", "everyday\nthe\n");
  const auto a = kafa_cli("ingest --source " + q(t / "raw.jsonl") + " --words " + q(t / "words.txt") + " --out " + q(t / "a.kb"));
  ASSERT_EQ(a.code, 0) << a.output;
  EXPECT_NE(a.output.find("3 entries retained"), std::string::npos) << a.output;
  const auto b = kafa_cli("ingest --source " + q(t / "raw.jsonl") + " --words " + q(t / "words.txt") + " --out " + q(t / "b.kb"));
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(slurp(t / "a.kb"), slurp(t / "b.kb"));
}

TEST(Cli, MissingInputNamesThePath) {
  test::TempDir t("cli-missing");
  const auto missing = (t / "nope.jsonl").string();
  const auto r = kafa_cli("ingest --source " + q(missing) + " --out " + q(t / "a.kb"));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find(missing), std::string::npos) << r.output;
}

TEST(Cli, ZeroLearningRateKeepsZeroShotAccuracy) {
  test::TempDir t("cli-lr0");
  const auto banks = synth_banks(t);
  const auto r = kafa_cli("train " + banks + " --out " + q(t / "run") +
                          " --heads 2 --n-cand 32 --lr 0 --max-epochs 2 --patience 0 --val-k 20");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto csv = slurp(t / "run" / "seed-0" / "history.csv");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,step,loss,reg_term,val_accuracy");
  std::vector<std::string> acc;
  while (std::getline(in, line)) acc.push_back(line.substr(line.rfind(',') + 1));
  ASSERT_EQ(acc.size(), 3u);
  EXPECT_EQ(acc[0], acc[1]);
  EXPECT_EQ(acc[0], acc[2]);
}

TEST(Cli, TrainIsReproducibleAndNegativesReplay) {
  test::TempDir t("cli-train");
  const auto banks = synth_banks(t);
  const std::string opts = " --heads 2 --hnm full --n-cand 64 --lr 1e-3 --max-epochs 2 --val-k 20 --log-negatives --seed 3";
  ASSERT_EQ(kafa_cli("train " + banks + " --out " + q(t / "a") + opts).code, 0);
  ASSERT_EQ(kafa_cli("train " + banks + " --out " + q(t / "b") + opts).code, 0);
  for (const char* f : {"history.csv", "checkpoint.bin", "last.bin", "negatives.jsonl", "run.json"})
    EXPECT_EQ(slurp(t / "a" / "seed-3" / f), slurp(t / "b" / "seed-3" / f)) << f;
  const auto r = kafa_cli("hnm-replay --negatives " + q(t / "a" / "seed-3" / "negatives.jsonl") + " --label-bank " +
                          q(t / "data" / "label_text.bank"));
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find(" 0 mismatches"), std::string::npos) << r.output;
  EXPECT_NE(r.output.rfind("0 selections", 0), 0u);
}

TEST(Cli, ReplayFlagsTamperedSelection) {
  test::TempDir t("cli-tamper");
  const auto banks = synth_banks(t);
  ASSERT_EQ(kafa_cli("train " + banks + " --out " + q(t / "a") +
                     " --heads 2 --n-cand 64 --max-epochs 1 --val-k 20 --log-negatives")
                .code,
            0);
  auto rows = io::read_jsonl(t / "a" / "seed-0" / "negatives.jsonl");
  auto negs = rows[0]["negatives"].get<std::vector<std::string>>();
  std::swap(negs[0], negs[1]);
  rows[0]["negatives"] = negs;
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  write(t / "bad.jsonl", out);
  const auto r = kafa_cli("hnm-replay --negatives " + q(t / "bad.jsonl") + " --label-bank " + q(t / "data" / "label_text.bank"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find(" 1 mismatches"), std::string::npos) << r.output;
}

TEST(Cli, EvalCheckpointModalityMismatch) {
  test::TempDir t("cli-eval");
  const auto banks = synth_banks(t);
  ASSERT_EQ(kafa_cli("train " + banks + " --out " + q(t / "run") + " --heads 2 --n-cand 32 --max-epochs 1 --val-k 20").code, 0);
  const auto ck = q(t / "run" / "seed-0" / "checkpoint.bin");
  const auto bad = kafa_cli("eval " + banks + " --checkpoint " + ck + " --inputs I --protocol k_candidate -K 20 --out " +
                            q(t / "ev"));
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.output.find("checkpoint modality mismatch"), std::string::npos) << bad.output;
  for (const char* out : {"e1", "e2"}) {
    const auto ok =
        kafa_cli("eval " + banks + " --checkpoint " + ck + " --protocol k_candidate -K 20 --per-image --out " + q(t / out));
    ASSERT_EQ(ok.code, 0) << ok.output;
  }
  const auto m1 = slurp(t / "e1" / "seed-0" / "metrics.json"), m2 = slurp(t / "e2" / "seed-0" / "metrics.json");
  const auto j1 = io::json::parse(m1), j2 = io::json::parse(m2);
  EXPECT_EQ(j1["accuracy"], j2["accuracy"]);
  EXPECT_EQ(j1["rank"], j2["rank"]);
  EXPECT_EQ(j1["n_images"], 40);
  EXPECT_EQ(j1["K"], 20);
  EXPECT_TRUE(fs::exists(t / "e1" / "seed-0" / "ranks.csv"));
}

TEST(Cli, OfficialZeroShotOnRandomFeaturesIsNearTwentyPercent) {
  test::TempDir t("cli-official");
  Rng rng(9);
  const std::size_t n = 4000, d = 8;
  BankBuilder img(d, Modality::image), txt(d, Modality::label_text);
  std::vector<ManifestRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = "img" + std::to_string(i);
    img.add(id, test::random_unit(rng, d));
    for (int k = 0; k < 3; ++k) {
      const auto tid = "t" + std::to_string(i) + "_" + std::to_string(k);
      txt.add(tid, test::random_unit(rng, d));
      rows.push_back({id, tid, std::nullopt, std::nullopt, Split::test});
    }
  }
  save_bank(std::move(img).build(), t / "image.bank");
  save_bank(std::move(txt).build(), t / "label.bank");
  save_manifest(rows, t / "manifest.jsonl");
  const std::string banks = "--image-bank " + q(t / "image.bank") + " --label-bank " + q(t / "label.bank") +
                            " --manifest " + q(t / "manifest.jsonl");
  double total = 0;
  const int seeds = 3;
  for (int s = 0; s < seeds; ++s) {
    const auto r = kafa_cli("eval " + banks + " --protocol official --seed " + std::to_string(s) + " --out " + q(t / "ev"));
    ASSERT_EQ(r.code, 0) << r.output;
    const auto j = io::json::parse(slurp(t / "ev" / ("seed-" + std::to_string(s)) / "metrics.json"));
    EXPECT_EQ(j["K"], 15);
    total += j["accuracy"].get<double>();
  }
  // 12000 image draws: one standard error is about 0.37 points.
  EXPECT_NEAR(total / seeds, 20.0, 1.5);
  const auto other = kafa_cli("eval " + banks + " --inputs I+ST --out " + q(t / "ev"));
  EXPECT_EQ(other.code, 1);
}

TEST(Cli, BrandPredictionsOnThreeImages) {
  test::TempDir t("cli-brand");
  write(t / "raw.jsonl", kRawEntries);
  ASSERT_EQ(kafa_cli("ingest --source " + q(t / "raw.jsonl") + " --out " + q(t / "kb.bin")).code, 0);
  // Entries after ingest: Everyday, KFC, Mercedes, Bolt (no word list).
  const std::vector<std::string> names{"Everyday", "KFC", "Mercedes", "Bolt"};
  const std::size_t d = 4;
  BankBuilder pb(d, Modality::brand_prompt);
  for (std::size_t e = 0; e < names.size(); ++e) {
    for (std::size_t k = 0; k < 6; ++k) pb.add(names[e] + "/prompt/" + std::to_string(k), Vec(Vec::Unit(d, e)));
    pb.add(names[e] + "/ad", Vec(Vec::Unit(d, e)));
  }
  save_bank(std::move(pb).build(), t / "prompts.bank");
  BankBuilder rb(d, Modality::region);
  rb.add("ad1/region/0", Vec(Vec::Unit(d, 2)));
  rb.add("ad1/global", Vec(Vec::Unit(d, 2)));
  rb.add("ad2/global", Vec(Vec::Unit(d, 3)));
  rb.add("ad3/region/0", Vec(Vec::Unit(d, 0)));
  rb.add("ad3/global", Vec(Vec::Unit(d, 3)));
  save_bank(std::move(rb).build(), t / "regions.bank");
  write(t / "scene.jsonl",
        "{\"image_id\":\"ad1\",\"text\":\"Visit KFC today\"}\n"
        "{\"image_id\":\"ad3\",\"blocks\":[\"KFC and\",\"MERCEDES\"]}\n");
  const std::string args = "brand --regions " + q(t / "regions.bank") + " --kb " + q(t / "kb.bin") + " --prompts " +
                           q(t / "prompts.bank") + " --scene-texts " + q(t / "scene.jsonl") + " --out ";
  const auto r = kafa_cli(args + q(t / "a"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto lines = io::read_jsonl(t / "a" / "seed-0" / "predictions.jsonl");
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0]["image_id"], "ad1");
  EXPECT_EQ(lines[0]["prediction"], "KFC");
  EXPECT_EQ(lines[0]["path"], "text");
  EXPECT_EQ(lines[1]["prediction"], "Bolt");
  EXPECT_EQ(lines[1]["path"], "vision");
  // KFC and Mercedes match the text; vision picks Bolt, whose ad prompt
  // equals the global feature.
  EXPECT_EQ(lines[2]["path"], "ensemble");
  EXPECT_EQ(lines[2]["prediction"], "Bolt");
  ASSERT_EQ(kafa_cli(args + q(t / "b")).code, 0);
  EXPECT_EQ(slurp(t / "a" / "seed-0" / "predictions.jsonl"), slurp(t / "b" / "seed-0" / "predictions.jsonl"));
}

TEST(Cli, OcrBlocksAndLabelCleaning) {
  test::TempDir t("cli-text");
  write(t / "ocr.jsonl",
        "{\"image_id\":\"a\",\"paragraphs\":[{\"text\":\"Big\",\"font_size\":10,\"confidence\":0.9,\"order_index\":0},"
        "{\"text\":\"sale\",\"font_size\":10.5,\"confidence\":0.9,\"order_index\":1},"
        "{\"text\":\"tiny\",\"font_size\":3,\"confidence\":0.4,\"order_index\":2}]}\n");
  const auto o = kafa_cli("ocr-blocks --input " + q(t / "ocr.jsonl") + " --out " + q(t / "o"));
  ASSERT_EQ(o.code, 0) << o.output;
  const auto blocks = io::read_jsonl(t / "o" / "seed-0" / "blocks.jsonl");
  ASSERT_EQ(blocks.size(), 1u);
  EXPECT_EQ(blocks[0]["blocks"], io::json::parse(R"(["Big sale"])"));

  write(t / "labels.jsonl",
        "{\"image_id\":\"a\",\"texts\":[\"I don't know\",\"I should buy X becasue it is fast\"]}\n"
        "{\"image_id\":\"b\",\"texts\":[\"idk\"]}\n");
  const auto c = kafa_cli("clean-labels --input " + q(t / "labels.jsonl") + " --out " + q(t / "c"));
  ASSERT_EQ(c.code, 0) << c.output;
  const auto rows = io::read_jsonl(t / "c" / "seed-0" / "labels.jsonl");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0]["ground_truth"], "I should buy X because it is fast");
  EXPECT_TRUE(rows[1]["ground_truth"].is_null());
}

TEST(Cli, BadArgumentsExitNonZero) {
  EXPECT_NE(kafa_cli("").code, 0);
  EXPECT_NE(kafa_cli("train --lr x").code, 0);
  test::TempDir t("cli-bad");
  const auto banks = synth_banks(t);
  const auto r = kafa_cli("train " + banks + " --out " + q(t / "r") + " --hnm full --loss-mode symmetric");
  EXPECT_EQ(r.code, 1) << r.output;
  const auto m = kafa_cli("train " + banks + " --out " + q(t / "r") + " --momentum-m 2");
  EXPECT_EQ(m.code, 1) << m.output;
}
