#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "kafa/manifest.hpp"
#include "kafa/retrieval.hpp"
#include "test_util.hpp"

using namespace kafa;

namespace {

/// `n` images with `per` texts each, ids img<i> / t<i>_<k>.
std::vector<ImageRecord> images(std::size_t n, std::size_t per) {
  std::vector<ImageRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    ImageRecord r{"img" + std::to_string(i), {}, std::nullopt, std::nullopt};
    for (std::size_t k = 0; k < per; ++k) r.texts.push_back("t" + std::to_string(i) + "_" + std::to_string(k));
    out.push_back(r);
  }
  return out;
}

std::string owner(const std::string& text) { return "img" + text.substr(1, text.find('_') - 1); }

}  // namespace

TEST(Score, Examples) {
  Vec x(2), y(2);
  x << 0.6, 0.8;
  y << 1, 0;
  const auto s = score(y, std::vector<Vec>{y, x});
  EXPECT_EQ(s[0], 1.0);
  EXPECT_DOUBLE_EQ(s[1], 0.6);
  EXPECT_EQ(score(Vec::Unit(2, 0), std::vector<Vec>{Vec::Unit(2, 1)})[0], 0.0);
  EXPECT_THROW(score(x, std::vector<Vec>{Vec::Unit(3, 0)}), Error);
}

TEST(Metrics, TwoImageFixture) {
  const std::vector<ImageRanks> r{{"a", {1, 3}}, {"b", {2, 4}}};
  const auto m = metrics_from_ranks(r);
  EXPECT_EQ(m.accuracy, 50.0);
  EXPECT_EQ(m.rank, 1.5);
  EXPECT_EQ(m.mean_rank, 2.5);
}

TEST(Metrics, ThroughEvaluateScored) {
  // Ranks {1,3} and {2,4} produced by actual scores.
  std::vector<CandidateSet> sets{{"a", {"p1", "p2"}, {"n1", "n2"}}, {"b", {"q1", "q2"}, {"m1", "m2"}}};
  const std::unordered_map<std::string, double> s{{"p1", 0.9}, {"n1", 0.5}, {"p2", 0.4}, {"n2", 0.1},
                                                  {"m1", 0.9}, {"q1", 0.8}, {"m2", 0.7}, {"q2", 0.6}};
  const auto m = evaluate_scored(sets, [&](std::size_t, const CandidateSet&, const std::string& id) { return s.at(id); });
  EXPECT_EQ(m.accuracy, 50.0);
  EXPECT_EQ(m.rank, 1.5);
  EXPECT_EQ(m.mean_rank, 2.5);
}

TEST(Metrics, PerfectScorer) {
  std::vector<CandidateSet> sets{{"a", {"p1", "p2", "p3"}, {"n1", "n2"}}};
  const auto m = evaluate_scored(sets, [](std::size_t, const CandidateSet& cs, const std::string& id) {
    return std::find(cs.positives.begin(), cs.positives.end(), id) != cs.positives.end() ? 1.0 : 0.0;
  });
  EXPECT_EQ(m.accuracy, 100.0);
  EXPECT_EQ(m.rank, 1.0);
  EXPECT_EQ(m.mean_rank, 2.0);
}

TEST(Metrics, TiesBreakByAscendingId) {
  CandidateSet cs{"a", {"b"}, {"a", "c"}};
  const std::vector<double> s{0.5, 0.5, 0.5};
  EXPECT_EQ(rank_candidates(cs, s).positive_ranks, (std::vector<std::size_t>{2}));
}

TEST(Metrics, RankNeverExceedsMeanRank) {
  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n_img = 1 + rng.index(10), n_pos = 1 + rng.index(3), n_neg = 1 + rng.index(12);
    std::vector<CandidateSet> sets;
    for (std::size_t i = 0; i < n_img; ++i) {
      CandidateSet cs{"i" + std::to_string(i), {}, {}};
      for (std::size_t k = 0; k < n_pos; ++k) cs.positives.push_back("p" + std::to_string(k));
      for (std::size_t k = 0; k < n_neg; ++k) cs.negatives.push_back("n" + std::to_string(k));
      sets.push_back(cs);
    }
    const auto m = evaluate_scored(sets, [&](std::size_t, const CandidateSet&, const std::string&) { return rng.uniform(); });
    EXPECT_LE(m.rank, m.mean_rank);
    EXPECT_GE(m.rank, 1.0);
  }
}

TEST(Metrics, InvariantUnderLogitScaleRescaling) {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    CandidateSet cs{"a", {"p0", "p1", "p2"}, {}};
    for (int k = 0; k < 12; ++k) cs.negatives.push_back("n" + std::to_string(k));
    std::vector<double> s(cs.size());
    for (auto& x : s) x = rng.uniform(-1, 1);
    std::vector<double> scaled = s;
    const double f = std::exp(rng.uniform(0, std::log(100.0)));
    for (auto& x : scaled) x *= f;
    std::vector<std::size_t> a(s.size()), b(s.size());
    std::iota(a.begin(), a.end(), 0);
    std::iota(b.begin(), b.end(), 0);
    std::stable_sort(a.begin(), a.end(), [&](auto i, auto j) { return s[i] > s[j]; });
    std::stable_sort(b.begin(), b.end(), [&](auto i, auto j) { return scaled[i] > scaled[j]; });
    EXPECT_EQ(a, b);
    EXPECT_EQ(rank_candidates(cs, s).positive_ranks, rank_candidates(cs, scaled).positive_ranks);
  }
}

TEST(Candidates, KCandidateSetsHaveKEntries) {
  const auto imgs = images(100, 3);
  const auto sets = build_candidates({ProtocolKind::k_candidate, 20, 5}, imgs);
  ASSERT_EQ(sets.size(), 100u);
  for (const auto& cs : sets) {
    EXPECT_EQ(cs.size(), 20u);
    EXPECT_EQ(cs.positives.size(), 1u);
    EXPECT_EQ(owner(cs.positives[0]), cs.image_id);
    std::unordered_set<std::string> uniq(cs.negatives.begin(), cs.negatives.end());
    EXPECT_EQ(uniq.size(), cs.negatives.size());
  }
}

TEST(Candidates, OfficialSetsHaveThreePositivesAndTwelveNegatives) {
  const auto sets = build_candidates({ProtocolKind::official, 0, 1}, images(30, 4));
  for (const auto& cs : sets) {
    EXPECT_EQ(cs.positives.size(), 3u);
    EXPECT_EQ(cs.negatives.size(), 12u);
    for (const auto& p : cs.positives) EXPECT_EQ(owner(p), cs.image_id);
  }
}

TEST(Candidates, SeededAndReproducible) {
  const auto imgs = images(50, 3);
  const auto a = build_candidates({ProtocolKind::k_candidate, 20, 9}, imgs);
  const auto b = build_candidates({ProtocolKind::k_candidate, 20, 9}, imgs);
  const auto c = build_candidates({ProtocolKind::k_candidate, 20, 10}, imgs);
  auto same = [](const auto& x, const auto& y) {
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i].positives != y[i].positives || x[i].negatives != y[i].negatives) return false;
    return true;
  };
  EXPECT_TRUE(same(a, b));
  EXPECT_FALSE(same(a, c));
}

TEST(Candidates, NegativesNeverFromTheSameImage) {
  const auto imgs = images(200, 3);
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; checked < 10000; ++seed) {
    for (const auto& cs : build_candidates({ProtocolKind::k_candidate, 20, seed}, imgs)) {
      for (const auto& n : cs.negatives) ASSERT_NE(owner(n), cs.image_id);
      ++checked;
    }
  }
}

TEST(Candidates, SharedTextIsNeverANegativeForItsOwners) {
  auto imgs = images(30, 2);
  imgs[0].texts.push_back("shared");
  imgs[1].texts.push_back("shared");
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto sets = build_candidates({ProtocolKind::k_candidate, 40, seed}, imgs);
    for (int i = 0; i < 2; ++i)
      EXPECT_EQ(std::count(sets[i].negatives.begin(), sets[i].negatives.end(), "shared"), 0);
  }
}

TEST(Candidates, InsufficientData) {
  EXPECT_THROW(build_candidates({ProtocolKind::official, 0, 0}, images(10, 2)), Error);
  EXPECT_THROW(build_candidates({ProtocolKind::k_candidate, 100, 0}, images(10, 2)), Error);
  EXPECT_THROW(build_candidates({ProtocolKind::k_candidate, 1, 0}, images(10, 2)), Error);
}

TEST(Candidates, RandomScorerOnOfficialProtocolNearTwentyPercent) {
  const auto imgs = images(2000, 3);
  Rng rng(77);
  double hits = 0, n = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto sets = build_candidates({ProtocolKind::official, 0, seed}, imgs);
    const auto m = evaluate_scored(sets, [&](std::size_t, const CandidateSet&, const std::string&) { return rng.uniform(); });
    hits += m.accuracy * static_cast<double>(m.n_images);
    n += static_cast<double>(m.n_images);
  }
  EXPECT_NEAR(hits / n, 20.0, 1.0);
}

TEST(Candidates, AccuracyNonIncreasingInK) {
  // Noisy scorer: the positive's score is shifted up by 0.5.
  const auto imgs = images(1000, 1);
  double prev = 101.0;
  for (std::size_t K : {20u, 100u, 500u}) {
    Rng rng(5);
    const auto sets = build_candidates({ProtocolKind::k_candidate, K, 3}, imgs);
    const auto m = evaluate_scored(sets, [&](std::size_t, const CandidateSet& cs, const std::string& id) {
      return rng.normal() + (id == cs.positives[0] ? 1.5 : 0.0);
    });
    EXPECT_LE(m.accuracy, prev);
    prev = m.accuracy;
  }
}

TEST(Protocol, Names) {
  EXPECT_EQ(parse_protocol("official"), ProtocolKind::official);
  EXPECT_EQ(parse_protocol(protocol_name(ProtocolKind::k_candidate)), ProtocolKind::k_candidate);
  EXPECT_THROW(parse_protocol("x"), Error);
}

// ---------------------------------------------------------------------------

TEST(Manifest, RoundTripAndGrouping) {
  test::TempDir t("manifest");
  std::vector<ManifestRow> rows{{"a", "t1", "s1", std::nullopt, Split::train},
                                {"a", "t2", "s1", std::nullopt, Split::train},
                                {"b", "t3", std::nullopt, "k1", Split::val},
                                {"c", "t4", std::nullopt, std::nullopt, Split::train}};
  save_manifest(rows, t / "m.jsonl");
  const auto bytes = io::read_file(t / "m.jsonl");
  EXPECT_EQ(std::string(bytes.begin(), bytes.end()),
            "{\"image_id\":\"a\",\"label_text_id\":\"t1\",\"scene_text_id\":\"s1\",\"split\":\"train\"}\n"
            "{\"image_id\":\"a\",\"label_text_id\":\"t2\",\"scene_text_id\":\"s1\",\"split\":\"train\"}\n"
            "{\"image_id\":\"b\",\"label_text_id\":\"t3\",\"brand_id\":\"k1\",\"split\":\"val\"}\n"
            "{\"image_id\":\"c\",\"label_text_id\":\"t4\",\"split\":\"train\"}\n");
  const auto back = load_manifest(t / "m.jsonl");
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back[2].brand_id, "k1");
  EXPECT_FALSE(back[3].scene_text_id);
  const auto train = images_in_split(back, Split::train);
  ASSERT_EQ(train.size(), 2u);
  EXPECT_EQ(train[0].texts, (std::vector<std::string>{"t1", "t2"}));
  EXPECT_EQ(images_in_split(back, Split::test).size(), 0u);
}

TEST(Manifest, Errors) {
  EXPECT_THROW(parse_manifest_row(io::json::parse(R"({"image_id":"a","split":"train"})")), Error);
  EXPECT_THROW(parse_manifest_row(io::json::parse(R"({"image_id":"a","label_text_id":"t","split":"dev"})")), Error);
  std::vector<ManifestRow> inconsistent{{"a", "t1", "s1", std::nullopt, Split::train},
                                        {"a", "t2", "s2", std::nullopt, Split::train}};
  EXPECT_THROW(images_in_split(inconsistent, Split::train), Error);
}
