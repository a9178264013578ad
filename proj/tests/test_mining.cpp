#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace opendas;

namespace {

const char* kWallBank =
    R"({"wall": ["room divider", "partition", "divider screen", "privacy screen", "decorative panel"]})";

NegativeBank wall_and_ceiling() {
    return {{{"wall", {"room divider", "partition", "divider screen", "privacy screen", "decorative panel"}},
             {"ceiling", {"chandelier", "skylight", "ceiling fan", "beam", "soffit"}}}};
}

} // namespace

TEST(NegativeBank, ParsesWallRecord) {
    auto bank = parse_negative_bank(kWallBank);
    ASSERT_EQ(bank.size(), 1u);
    EXPECT_EQ(bank.entries[0].first, "wall");
    EXPECT_EQ(bank.negative_count(), 5u);
    EXPECT_EQ(bank.entries[0].second[3], "privacy screen");
}

TEST(NegativeBank, SelfNegativeIsInvalid) {
    EXPECT_THROW(parse_negative_bank(R"({"ceiling": ["ceiling"]})"), ValidationError);
    EXPECT_THROW(parse_negative_bank(R"({"Ceiling": ["ceiling"]})"), ValidationError);
}

TEST(NegativeBank, DuplicateNegativesAreInvalid) {
    EXPECT_THROW(parse_negative_bank(R"({"wall": ["panel", "Panel"]})"), ValidationError);
}

TEST(NegativeBank, EmptyMapIsValid) {
    auto bank = parse_negative_bank("{}");
    EXPECT_TRUE(bank.empty());
}

TEST(NegativeBank, MalformedInputIsParseError) {
    EXPECT_THROW(parse_negative_bank("{"), ParseError);
    EXPECT_THROW(parse_negative_bank(R"(["wall"])"), ParseError);
    EXPECT_THROW(parse_negative_bank(R"({"wall": "partition"})"), ParseError);
    EXPECT_THROW(parse_negative_bank(R"({"wall": [1]})"), ParseError);
}

TEST(NegativeBank, FileRoundTripKeepsOrder) {
    auto dir = opendas::testing::scratch_dir("bank");
    auto bank = wall_and_ceiling();
    std::ofstream((dir / "bank.json").string()) << dump_negative_bank(bank);
    EXPECT_EQ(load_negative_bank((dir / "bank.json").string()), bank);
    EXPECT_THROW(load_negative_bank((dir / "missing.json").string()), IoError);
}

TEST(LabelSpace, TwoBanksGiveTwelveLabels) {
    auto ls = build_label_space({"wall", "ceiling"}, wall_and_ceiling());
    EXPECT_EQ(ls.size(), 12u);
    EXPECT_EQ(ls.base_count, 2u);
    EXPECT_EQ(ls.labels[0], "wall");
    EXPECT_EQ(ls.labels[1], "ceiling");
    EXPECT_EQ(ls.labels[2], "room divider");
    EXPECT_TRUE(ls.is_base[1]);
    EXPECT_FALSE(ls.is_base[2]);
}

TEST(LabelSpace, NegativeEqualToBaseIsDropped) {
    auto ls = build_label_space({"wall"}, NegativeBank{{{"door", {"wall", "gate"}}}});
    EXPECT_EQ(ls.labels, (std::vector<std::string>{"wall", "gate"}));
}

TEST(LabelSpace, EmptyBankIsBaseOnly) {
    auto ls = build_label_space({"wall", "floor"}, NegativeBank{});
    EXPECT_EQ(ls.labels, (std::vector<std::string>{"wall", "floor"}));
    EXPECT_EQ(ls.base_count, 2u);
}

TEST(LabelSpace, DeterministicAndBaseIndicesStable) {
    std::vector<std::string> base{"wall", "ceiling", "floor"};
    auto a = build_label_space(base, wall_and_ceiling());
    auto b = build_label_space(base, wall_and_ceiling());
    EXPECT_EQ(a, b);
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(a.labels[i], base[i]);
    EXPECT_THROW(build_label_space({}, wall_and_ceiling()), ValidationError);
}

TEST(Instruction, BeginsWithTheTaskSentence) {
    auto text = build_instruction_prompt({"wall"});
    EXPECT_EQ(text.rfind("Your task is to produce five distinct examples", 0), 0u);
    EXPECT_NE(text.find("a Python dictionary for easy integration"), std::string::npos);
}

TEST(Instruction, ListsExactlyTheClasses) {
    auto text = build_instruction_prompt({"wall", "ceiling", "office chair"});
    auto pos = text.find("Classes: ");
    ASSERT_NE(pos, std::string::npos);
    auto list = nlohmann::json::parse(text.substr(pos + 9));
    EXPECT_EQ(list.get<std::vector<std::string>>(), (std::vector<std::string>{"wall", "ceiling", "office chair"}));
    EXPECT_THROW(build_instruction_prompt({}), ValidationError);
}

TEST(HardestNegative, WorkedExample) {
    std::vector<RowVector<double>> labels{RowVector<double>{{0, 1}}, RowVector<double>{{0.6, 0.8}},
                                          RowVector<double>{{-1, 0}}};
    EXPECT_EQ(hardest_negative(RowVector<double>{{1, 0}}, labels, 0), 1u);
    EXPECT_NEAR((RowVector<double>{{1, 0}} - labels[1]).norm(), 0.894, 5e-4);
}

TEST(HardestNegative, NeedsACandidate) {
    std::vector<RowVector<double>> one{RowVector<double>{{1, 0}}};
    EXPECT_THROW(hardest_negative(RowVector<double>{{1, 0}}, one, 0), ValidationError);
}

TEST(HardestNegative, NeverReturnsTheTrueIndex) {
    std::vector<RowVector<double>> labels{RowVector<double>{{1, 0}}, RowVector<double>{{0, 1}}};
    EXPECT_EQ(hardest_negative(RowVector<double>{{1, 0}}, labels, 0), 1u);
}

TEST(HardestNegative, MatchesBruteForceWithTies) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> n_dist(2, 50), d_dist(1, 16), coarse(-2, 2);
    std::normal_distribution<double> g(0, 1);
    int ties = 0;
    for (int t = 0; t < 1000; ++t) {
        const int n = n_dist(rng), d = d_dist(rng);
        const bool tie_case = t % 3 == 0; // small integer grid: duplicates and equal distances are common
        std::vector<RowVector<double>> labels;
        std::vector<std::vector<double>> plain;
        for (int i = 0; i < n; ++i) {
            RowVector<double> e(d);
            for (int k = 0; k < d; ++k) e(k) = tie_case ? coarse(rng) : g(rng);
            labels.push_back(e);
            plain.emplace_back(e.data(), e.data() + d);
        }
        RowVector<double> v(d);
        for (int k = 0; k < d; ++k) v(k) = tie_case ? coarse(rng) : g(rng);
        const std::size_t truth = static_cast<std::size_t>(t) % static_cast<std::size_t>(n);
        const auto expected = oracle::hardest_negative(plain, std::vector<double>(v.data(), v.data() + d), truth);
        ASSERT_EQ(hardest_negative(v, labels, truth), expected) << "instance " << t;

        std::vector<double> dist;
        for (int i = 0; i < n; ++i)
            if (static_cast<std::size_t>(i) != truth) dist.push_back((v - labels[static_cast<std::size_t>(i)]).squaredNorm());
        std::sort(dist.begin(), dist.end());
        if (dist.size() > 1 && dist[0] == dist[1]) ++ties;
    }
    EXPECT_GT(ties, 50);
}
