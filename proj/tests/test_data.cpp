#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "test_util.hpp"

using namespace deminet;

namespace {

BehaviorLog parse(const std::string& text, LogFormat fmt = {}) {
    std::istringstream in(text);
    return parse_behavior_log(in, fmt);
}

BehaviorLog user_log(std::int64_t user, std::size_t count, std::int64_t t0 = 0, std::int64_t item0 = 0) {
    BehaviorLog log;
    for (std::size_t i = 0; i < count; ++i)
        log.records.push_back(Record{user, item0 + std::int64_t(i), std::int64_t(i % 3), t0 + std::int64_t(i), ""});
    return log;
}

BehaviorLog with_filler_items(BehaviorLog log, std::size_t extra) {
    // Another user touching many items so negatives have room.
    for (std::size_t i = 0; i < extra; ++i) log.records.push_back(Record{999, 1000 + std::int64_t(i), 0, std::int64_t(i), ""});
    return log;
}

std::string temp_path(const std::string& name) { return (std::filesystem::temp_directory_path() / ("deminet_data_" + name)).string(); }

}  // namespace

TEST(ParseLog, EmptyInputGivesEmptyLog) {
    auto log = parse("");
    EXPECT_TRUE(log.records.empty());
    EXPECT_EQ(log.malformed, 0u);
}

TEST(ParseLog, ThreeWellFormedLines) {
    auto log = parse("1\t10\t3\t100\n1\t11\t3\t101\n2\t10\t3\t102\n");
    ASSERT_EQ(log.records.size(), 3u);
    EXPECT_EQ(log.records[1], (Record{1, 11, 3, 101, ""}));
}

TEST(ParseLog, SingleBadLineInThousandIsTolerated) {
    std::ostringstream os;
    for (int i = 0; i < 999; ++i) os << i % 7 << '\t' << i << '\t' << i % 5 << '\t' << i << '\n';
    os << "garbage line\n";
    auto log = parse(os.str());
    EXPECT_EQ(log.records.size(), 999u);
    EXPECT_EQ(log.malformed, 1u);
}

TEST(ParseLog, TooManyBadLinesRaise) {
    std::ostringstream os;
    for (int i = 0; i < 90; ++i) os << "1\t" << i << "\t1\t" << i << '\n';
    for (int i = 0; i < 10; ++i) os << "1\tx\t1\t" << i << '\n';
    try {
        parse(os.str());
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("10 of 100"), std::string::npos) << e.what();
    }
}

TEST(ParseLog, UnreadableFileRaisesIoError) {
    EXPECT_THROW(parse_behavior_log(std::string("/nonexistent/deminet/log.tsv"), LogFormat{}), IoError);
}

TEST(ParseLog, EventFilterAndHeader) {
    LogFormat fmt;
    fmt.delimiter = ',';
    fmt.event_col = 4;
    fmt.click_events = {"pv"};
    fmt.has_header = true;
    auto log = parse("user,item,cat,ts,event\n1,2,3,4,pv\n1,5,3,6,buy\n2,2,3,7, pv \n", fmt);
    ASSERT_EQ(log.records.size(), 2u);
    EXPECT_EQ(log.dropped_events, 1u);
    EXPECT_EQ(log.records[1].event, "pv");
}

TEST(ParseLog, WriteThenParseRoundTrips) {
    auto log = user_log(4, 6, 50);
    std::ostringstream os;
    write_behavior_log(os, log);
    EXPECT_EQ(parse(os.str()).records, log.records);
}

TEST(FilterUsers, KeepsOnlyActiveUsers) {
    auto log = user_log(1, 4);
    auto more = user_log(2, 5, 10);
    log.records.insert(log.records.end(), more.records.begin(), more.records.end());
    auto f = filter_users(log, 5);
    ASSERT_EQ(f.records.size(), 5u);
    for (const auto& r : f.records) EXPECT_EQ(r.user, 2);
}

TEST(TemporalSplit, TenTimestamps) {
    auto s = temporal_split(user_log(1, 10, 1), 0.8);
    EXPECT_EQ(s.train.records.size(), 8u);
    EXPECT_EQ(s.test.records.size(), 2u);
    EXPECT_EQ(s.split_time, 9);
}

TEST(TemporalSplit, TwoRecords) {
    auto s = temporal_split(user_log(1, 2, 5), 0.5);
    EXPECT_EQ(s.train.records.size(), 1u);
    EXPECT_EQ(s.test.records.size(), 1u);
}

TEST(TemporalSplit, PartitionsTheLogByTime) {
    Rng rng(3);
    BehaviorLog log;
    for (int i = 0; i < 500; ++i) log.records.push_back(Record{i % 13, i, 0, std::int64_t(rng.below(60)), ""});
    for (double frac : {0.1, 0.5, 0.8, 0.95}) {
        auto s = temporal_split(log, frac);
        EXPECT_EQ(s.train.records.size() + s.test.records.size(), 500u);
        EXPECT_FALSE(s.train.records.empty());
        EXPECT_FALSE(s.test.records.empty());
        for (const auto& r : s.train.records) EXPECT_LT(r.timestamp, s.split_time);
        for (const auto& r : s.test.records) EXPECT_GE(r.timestamp, s.split_time);
    }
}

TEST(TemporalSplit, Errors) {
    BehaviorLog same;
    for (int i = 0; i < 4; ++i) same.records.push_back(Record{1, i, 0, 7, ""});
    EXPECT_THROW(temporal_split(same, 0.5), DataError);
    EXPECT_THROW(temporal_split(BehaviorLog{}, 0.5), DataError);
    EXPECT_THROW(temporal_split(user_log(1, 4), 0), ConfigError);
    EXPECT_THROW(temporal_split(user_log(1, 4), 1), ConfigError);
}

TEST(VocabTest, DenseIdsRoundTrip) {
    BehaviorLog log;
    log.records = {Record{50, 900, 7, 1, ""}, Record{10, 300, 2, 2, ""}, Record{50, 300, 2, 3, ""}};
    auto v = Vocab::build(log);
    EXPECT_EQ(v.num_users(), 3u);
    EXPECT_EQ(v.num_items(), 3u);
    EXPECT_EQ(v.num_categories(), 3u);
    for (std::int64_t raw : {300, 900}) EXPECT_EQ(v.raw_item(v.item(raw)), raw);
    EXPECT_EQ(v.raw_user(v.user(50)), 50);
    EXPECT_EQ(v.category_of_item(v.item(900)), v.category(7));
    EXPECT_GT(v.item(300), 0u);
    EXPECT_THROW(v.item(12345), DataError);
}

TEST(BuildSamples, TooShortHistoryGivesNothing) {
    auto log = with_filler_items(user_log(1, 4), 30);
    auto vocab = Vocab::build(log);
    SampleOptions opt;
    opt.min_interactions = 5;
    Rng rng(1);
    auto samples = build_samples(log, vocab, opt, rng);
    for (const auto& s : samples) EXPECT_NE(s.user, vocab.user(1));
}

TEST(BuildSamples, FiveInteractionsGiveFourPositivesAndFourNegatives) {
    auto log = with_filler_items(user_log(1, 5), 30);
    auto vocab = Vocab::build(log);
    SampleOptions opt;
    opt.min_interactions = 5;
    Rng rng(2);
    std::size_t pos = 0, neg = 0;
    for (const auto& s : build_samples(log, vocab, opt, rng)) {
        if (s.user != vocab.user(1)) continue;
        (s.label ? pos : neg) += 1;
    }
    EXPECT_EQ(pos, 4u);
    EXPECT_EQ(neg, 4u);
}

TEST(BuildSamples, NegativesAvoidHistoryAndHistoriesAreSuffixes) {
    auto log = with_filler_items(user_log(1, 30), 60);
    auto vocab = Vocab::build(log);
    SampleOptions opt;
    opt.n_max = 6;
    opt.neg_per_pos = 2;
    Rng rng(3);
    std::set<std::uint32_t> seen;
    for (const auto& r : log.records)
        if (r.user == 1) seen.insert(vocab.item(r.item));
    std::size_t checked = 0;
    for (const auto& s : build_samples(log, vocab, opt, rng)) {
        EXPECT_LE(s.items.size(), 6u);
        EXPECT_EQ(s.items.size(), s.categories.size());
        if (s.user != vocab.user(1)) continue;
        if (s.label == 0) {
            EXPECT_FALSE(seen.count(s.target_item));
            continue;
        }
        // Items are raw 0..29 at times 0..29, so the history is the prior suffix.
        const auto target_raw = vocab.raw_item(s.target_item);
        const std::size_t len = std::min<std::size_t>(6, std::size_t(target_raw));
        ASSERT_EQ(s.items.size(), len);
        for (std::size_t j = 0; j < len; ++j) EXPECT_EQ(vocab.raw_item(s.items[j]), target_raw - std::int64_t(len) + std::int64_t(j));
        EXPECT_EQ(s.time, target_raw);
        ++checked;
    }
    EXPECT_EQ(checked, 29u);
}

TEST(BuildSamples, TestSamplesTargetOnlyLaterInteractions) {
    auto log = with_filler_items(user_log(1, 20), 60);
    auto split = temporal_split(log, 0.5);
    auto vocab = Vocab::build(log);
    SampleOptions opt;
    opt.min_interactions = 2;
    Rng r1(4), r2(5);
    for (const auto& s : build_samples(split.train, vocab, opt, r1)) EXPECT_LT(s.time, split.split_time);
    auto test = build_test_samples(log, vocab, split.split_time, opt, r2);
    ASSERT_FALSE(test.empty());
    for (const auto& s : test) {
        EXPECT_GE(s.time, split.split_time);
        EXPECT_FALSE(s.items.empty());
    }
}

TEST(BuildSamples, SameSeedSameSamples) {
    auto log = with_filler_items(user_log(1, 12), 40);
    auto vocab = Vocab::build(log);
    Rng a(8), b(8);
    EXPECT_EQ(build_samples(log, vocab, SampleOptions{}, a), build_samples(log, vocab, SampleOptions{}, b));
}

TEST(SampleFile, RoundTripAndBadMagic) {
    Rng rng(6);
    std::vector<Sample> v;
    for (int i = 0; i < 20; ++i) {
        auto s = testutil::random_sample(rng, 1 + rng.below(9), 50, 6, i % 2);
        s.user = std::uint32_t(i);
        s.time = 1'000'000'000'000LL + i;
        v.push_back(s);
    }
    const auto path = temp_path("roundtrip.bin");
    write_samples(path, v);
    EXPECT_EQ(read_samples(path), v);
    write_samples(path, {});
    EXPECT_TRUE(read_samples(path).empty());

    const auto bad = temp_path("bad.bin");
    std::ofstream(bad) << "NOTSAMP\x01\x02";
    EXPECT_THROW(read_samples(bad), IoError);
    EXPECT_THROW(read_samples(temp_path("missing.bin")), IoError);
    std::filesystem::remove(path);
    std::filesystem::remove(bad);
}

TEST(Synthetic, NoiseFreeUsersStayInsideTheirClusters) {
    SynthSpec spec;
    spec.num_users = 50;
    spec.num_items = 80;
    spec.num_interests = 8;
    spec.noise = 0;
    Rng rng(1);
    auto r = synth_generate(spec, rng);
    ASSERT_EQ(r.log.records.size(), 50u * spec.seq_len);
    for (const auto& rec : r.log.records) {
        const auto& mine = r.truth.user_clusters[std::size_t(rec.user)];
        EXPECT_TRUE(std::count(mine.begin(), mine.end(), r.truth.item_cluster[std::size_t(rec.item)]));
        EXPECT_EQ(rec.category, std::int64_t(r.truth.item_cluster[std::size_t(rec.item)]));
    }
    for (const auto& m : r.truth.user_clusters) {
        EXPECT_GE(m.size(), 2u);
        EXPECT_LE(m.size(), 3u);
    }
}

TEST(Synthetic, FullNoiseSpreadsAcrossClusters) {
    SynthSpec spec;
    spec.num_users = 200;
    spec.num_items = 80;
    spec.noise = 1;
    Rng rng(2);
    auto r = synth_generate(spec, rng);
    std::size_t outside = 0;
    for (const auto& rec : r.log.records) {
        const auto& mine = r.truth.user_clusters[std::size_t(rec.user)];
        outside += std::count(mine.begin(), mine.end(), r.truth.item_cluster[std::size_t(rec.item)]) == 0;
    }
    // Owned clusters cover at most 3/8 of the catalogue.
    EXPECT_GT(double(outside) / double(r.log.records.size()), 0.55);
}

TEST(Synthetic, DeterministicAndValidated) {
    SynthSpec spec;
    spec.num_users = 20;
    Rng a(5), b(5);
    EXPECT_EQ(synth_generate(spec, a).log.records, synth_generate(spec, b).log.records);
    Rng rng(1);
    SynthSpec bad = spec;
    bad.noise = 1.5;
    EXPECT_THROW(synth_generate(bad, rng), ConfigError);
    bad = spec;
    bad.num_interests = 1;
    EXPECT_THROW(synth_generate(bad, rng), ConfigError);
    EXPECT_EQ(synth_item_cluster(0, 500, 8), 0u);
    EXPECT_EQ(synth_item_cluster(499, 500, 8), 7u);
}
