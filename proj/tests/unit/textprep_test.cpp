#include <gtest/gtest.h>

#include "kafa/textprep.hpp"

using namespace kafa;

namespace {

std::vector<OcrParagraph> paras(std::initializer_list<std::tuple<const char*, double, double>> ps) {
  std::vector<OcrParagraph> out;
  std::int64_t i = 0;
  for (auto [t, size, conf] : ps) out.push_back({t, size, conf, i++});
  return out;
}

}  // namespace

TEST(OcrBlocks, SimilarFontsMerge) {
  const auto p = paras({{"Big sale", 10, 0.9}, {"today only", 10.5, 0.9}});
  const auto b = group_blocks(p);
  EXPECT_EQ(b, (std::vector<std::string>{"Big sale today only"}));
}

TEST(OcrBlocks, LowConfidenceDropped) {
  EXPECT_TRUE(group_blocks(paras({{"blurry", 12, 0.5}})).empty());
  const auto all = assemble_blocks(paras({{"blurry", 12, 0.5}}));
  ASSERT_EQ(all.size(), 1u);
  EXPECT_FALSE(all[0].kept);
  EXPECT_TRUE(group_blocks(paras({{"edge", 12, 0.7}})).size() == 1);
}

TEST(OcrBlocks, DistantFontsSplit) {
  EXPECT_EQ(group_blocks(paras({{"HEADLINE", 20, 0.9}, {"fine print", 10, 0.9}})),
            (std::vector<std::string>{"HEADLINE", "fine print"}));
  // 20% of the larger size is the limit.
  EXPECT_EQ(group_blocks(paras({{"a", 10, 0.9}, {"b", 12.5, 0.9}})).size(), 1u);
  EXPECT_EQ(group_blocks(paras({{"a", 10, 0.9}, {"b", 12.6, 0.9}})).size(), 2u);
}

TEST(OcrBlocks, ConfidenceIsLengthWeighted) {
  const auto b = assemble_blocks(paras({{"aaaaaaaaa", 10, 0.9}, {"b", 10, 0.1}}));
  ASSERT_EQ(b.size(), 1u);
  EXPECT_NEAR(b[0].confidence, 0.82, 1e-12);
  EXPECT_TRUE(b[0].kept);
  EXPECT_EQ(b[0].first, 0u);
  EXPECT_EQ(b[0].last, 1u);
}

TEST(OcrBlocks, ChainedGroupingAndEmptyInput) {
  EXPECT_EQ(group_blocks(paras({{"a", 10, 0.9}, {"b", 11.5, 0.9}, {"c", 13.2, 0.9}})).size(), 1u);
  EXPECT_TRUE(assemble_blocks(std::vector<OcrParagraph>{}).empty());
}

TEST(OcrBlocks, InvalidParagraphs) {
  EXPECT_THROW(assemble_blocks(paras({{"a", 10, 1.2}})), Error);
  EXPECT_THROW(assemble_blocks(paras({{"a", 0, 0.9}})), Error);
  std::vector<OcrParagraph> out_of_order{{"a", 10, 0.9, 3}, {"b", 10, 0.9, 1}};
  EXPECT_THROW(assemble_blocks(out_of_order), Error);
  EXPECT_THROW(parse_paragraph(io::json::parse(R"({"text":"a"})")), Error);
  const auto p = parse_paragraph(io::json::parse(R"({"text":"a","font_size":3,"confidence":0.8,"order_index":2})"));
  EXPECT_EQ(p.order_index, 2);
}

TEST(Labels, Examples) {
  const auto rules = default_cleaning_rules();
  EXPECT_FALSE(clean_label("I don't know", rules));
  EXPECT_EQ(clean_label_detailed("I don't know.", rules).reason, Rejection::invalid_answer);
  EXPECT_EQ(clean_label("I should buy X becasue it is fast", rules), "I should buy X because it is fast");
  EXPECT_EQ(clean_label_detailed("I should buy this product because it works", rules).reason,
            Rejection::no_informative_noun);
  EXPECT_EQ(clean_label_detailed("I should buy Nike shoes", rules).reason, Rejection::no_because);
  EXPECT_EQ(clean_label_detailed("   ", rules).reason, Rejection::empty);
}

TEST(Labels, TypoRepairKeepsCaseAndPunctuation) {
  const auto rules = default_cleaning_rules();
  EXPECT_EQ(clean_label("Becasue, shoes are great", rules), "Because, shoes are great");
  EXPECT_EQ(clean_label("  I should   drink cola  becuase it's cold. ", rules), "I should drink cola because it's cold.");
}

TEST(Labels, Idempotent) {
  const auto rules = default_cleaning_rules();
  for (const char* raw : {"I should buy X becasue it is fast", "I should visit   Paris because art!",
                          "Becaus the shoes are comfy", "I should eat KFC beacuse chicken"}) {
    const auto once = clean_label(raw, rules);
    if (!once) continue;
    EXPECT_EQ(clean_label(*once, rules), once) << raw;
  }
}

TEST(Labels, RulesFromJson) {
  const auto r = parse_cleaning_rules(io::json::parse(
      R"({"invalid_answers":["Nope"],"typo_map":{"cuz":"because"},"noninformative_nouns":["widget"],"seed":9})"));
  EXPECT_EQ(r.seed, 9u);
  EXPECT_FALSE(clean_label("nope", r));
  EXPECT_EQ(clean_label("I should buy milk cuz calcium", r), "I should buy milk because calcium");
  EXPECT_FALSE(clean_label("I should buy this widget because it works", r));
  EXPECT_TRUE(clean_label("I should buy this product because it works", r));
  EXPECT_THROW(parse_cleaning_rules(io::json::parse(R"({"typo_map":{"Cuz":"because"}})")), Error);
  EXPECT_THROW(parse_cleaning_rules(io::json::parse(R"({"typo_map":{"a":"b","b":"c"}})")), Error);
  EXPECT_THROW(parse_cleaning_rules(io::json::parse(R"({"seed":"x"})")), Error);
}

TEST(GroundTruth, SeededUniformChoice) {
  const std::vector<std::string> one{"only"};
  EXPECT_EQ(select_ground_truth(one, 5), "only");
  const std::vector<std::string> four{"a", "b", "c", "d"};
  EXPECT_EQ(select_ground_truth(four, 3), select_ground_truth(four, 3));
  std::map<std::string, int> counts;
  const int n = 20000;
  for (int s = 0; s < n; ++s) ++counts[select_ground_truth(four, derive_seed(1, {static_cast<std::uint64_t>(s)}))];
  for (const auto& [k, c] : counts) EXPECT_NEAR(static_cast<double>(c) / n, 0.25, 0.02) << k;
  EXPECT_THROW(select_ground_truth(std::vector<std::string>{}, 1), Error);
}

TEST(GroundTruth, PerImageCleaning) {
  const auto rules = default_cleaning_rules();
  const std::vector<std::string> raw{"I don't know", "I should buy X becasue it is fast", "I should vote because democracy"};
  const auto c = clean_image_labels("img1", raw, rules);
  EXPECT_EQ(c.labels.size(), 2u);
  EXPECT_EQ(c.rejected, (std::vector<std::string>{"I don't know"}));
  ASSERT_TRUE(c.ground_truth);
  EXPECT_EQ(clean_image_labels("img1", raw, rules).ground_truth, c.ground_truth);
  const auto none = clean_image_labels("img2", std::vector<std::string>{"idk"}, rules);
  EXPECT_TRUE(none.all_rejected);
  EXPECT_TRUE(cleaned_json(none)["ground_truth"].is_null());
}
