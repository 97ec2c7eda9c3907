#include <set>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "dmtpp/events.hpp"
#include "dmtpp/markmodel.hpp"

using namespace dmtpp;

namespace {

Dataset parse(const std::string& text, LoadOptions opts = {}) {
    std::istringstream in(text);
    return parse_dataset(in, opts);
}

std::string error_of(const std::string& text) {
    try {
        parse(text);
    } catch (const DataError& e) {
        return e.what();
    }
    return "";
}

Dataset numbered(std::size_t n, bool ordered = false) {
    Dataset d;
    d.U = 2;
    for (std::size_t i = 0; i < n; ++i) {
        EventSequence s;
        s.T = 10.0;
        s.events = {{1.0 + static_cast<double>(i) * 0.01, 0, 0}};
        if (ordered) s.order_index = static_cast<std::int64_t>(i);
        d.sequences.push_back(s);
    }
    return d;
}

} // namespace

TEST(Events, ParsesOneSequence) {
    const auto d = parse(R"({"T":10.0,"events":[{"t":1.0,"u":1},{"t":2.5,"u":2}]})");
    ASSERT_EQ(d.sequences.size(), 1u);
    EXPECT_EQ(d.U, 2);
    EXPECT_EQ(d.Z, 0);
    EXPECT_EQ(d.sequences[0].events.size(), 2u);
    EXPECT_EQ(d.sequences[0].events[1].u, 1); // 0-based in memory
    EXPECT_DOUBLE_EQ(d.sequences[0].events[1].t, 2.5);
}

TEST(Events, RejectsBadSequences) {
    EXPECT_EQ(error_of(R"({"T":10,"events":[{"t":2.0,"u":1},{"t":1.0,"u":1}]})"), "unsorted timestamps at line 1");
    EXPECT_EQ(error_of("{\"U\":2}\n{\"T\":10,\"events\":[{\"t\":1.0,\"u\":1},{\"t\":1.0,\"u\":2}]}"),
              "duplicate timestamps at line 2");
    EXPECT_EQ(error_of(R"({"T":3,"events":[{"t":3.0,"u":1}]})"), "event time >= T at line 1");
    EXPECT_NE(error_of("{\"T\":5,\"events\":[{\"t\":1,\"u\":1,\"z\":1}]}\n{\"T\":5,\"events\":[{\"t\":1,\"u\":1}]}")
                  .find("mixed zoned"),
              std::string::npos);
    EXPECT_NE(error_of("{\"T\":5,\"events\":[]}\n{\"T\":5,\"events\":[{\"t\":1,\"u\":1}\n").find("line 2"),
              std::string::npos);
    EXPECT_NE(error_of("{\"U\":2}\n{\"T\":5,\"events\":[{\"t\":1,\"u\":3}]}").find("exceeds declared U"),
              std::string::npos);
    EXPECT_NE(error_of("{\"T\":5,\"order_index\":1,\"events\":[{\"t\":1,\"u\":1}]}\n{\"T\":5,\"events\":[{\"t\":1,\"u\":1}]}")
                  .find("order_index"),
              std::string::npos);
}

TEST(Events, JitterSeparatesTies) {
    const std::string text = R"({"T":10,"events":[{"t":1.0,"u":1},{"t":1.0,"u":2},{"t":1.0,"u":1}]})";
    EXPECT_THROW(parse(text), DataError);
    const auto d = parse(text, {1e-6});
    EXPECT_DOUBLE_EQ(d.sequences[0].events[2].t, 1.0 + 2e-6);
}

TEST(Events, HeaderAndSimulatorRoundTrip) {
    // 760 zoned sequences, U=30, Z=3, as produced by the simulator.
    MarkParams p = make_mark_params(30, 3);
    TimeParams tp;
    tp.mu.assign(30, -1.0);
    tp.var.assign(30, 0.3);
    tp.mu0 = -1.0;
    tp.var0 = 0.3;
    const Dataset sim = simulate_dataset(p, tp, 760, 4.0, {1}, 5, true);
    std::ostringstream first;
    save_dataset(sim, first);
    EXPECT_EQ(first.str().substr(0, first.str().find('\n')), R"({"U":30,"Z":3,"p":0})");

    const Dataset back = parse(first.str());
    EXPECT_EQ(back.U, 30);
    EXPECT_EQ(back.Z, 3);
    ASSERT_EQ(back.sequences.size(), 760u);
    for (std::size_t s = 0; s < 760; ++s) {
        ASSERT_EQ(back.sequences[s].events.size(), sim.sequences[s].events.size());
        for (std::size_t i = 0; i < sim.sequences[s].events.size(); ++i) {
            EXPECT_EQ(back.sequences[s].events[i].t, sim.sequences[s].events[i].t);
            EXPECT_EQ(back.sequences[s].events[i].u, sim.sequences[s].events[i].u);
            EXPECT_EQ(back.sequences[s].events[i].z, sim.sequences[s].events[i].z);
        }
    }
    std::ostringstream second;
    save_dataset(back, second);
    EXPECT_EQ(first.str(), second.str());
}

TEST(Events, CovariatesAndOrderRoundTrip) {
    const std::string text =
        "{\"U\":3,\"Z\":0,\"p\":2}\n"
        "{\"T\":5.0,\"order_index\":1,\"covariates\":[1.0,-0.5],\"events\":[{\"t\":0.5,\"u\":3}]}\n"
        "{\"T\":5.0,\"order_index\":2,\"covariates\":[0.0,2.0],\"events\":[]}\n";
    const auto d = parse(text);
    EXPECT_TRUE(d.ordered());
    EXPECT_EQ(d.p, 2);
    EXPECT_EQ(*d.sequences[1].order_index, 2);
    std::ostringstream out;
    save_dataset(d, out);
    EXPECT_EQ(out.str(), text);
}

TEST(Events, SplitSizesAndDeterminism) {
    const Dataset d = numbered(10);
    const auto a = split_dataset(d, {0.7, 0.1, 0.2}, 1);
    EXPECT_EQ(a.train.sequences.size(), 7u);
    EXPECT_EQ(a.val.sequences.size(), 1u);
    EXPECT_EQ(a.test.sequences.size(), 2u);

    const auto b = split_dataset(d, {0.7, 0.1, 0.2}, 1);
    auto key = [](const Dataset& x) {
        std::vector<double> k;
        for (const auto& s : x.sequences) k.push_back(s.events[0].t);
        return k;
    };
    EXPECT_EQ(key(a.train), key(b.train));
    EXPECT_EQ(key(a.test), key(b.test));

    // disjoint cover
    std::multiset<double> all;
    for (const auto* part : {&a.train, &a.val, &a.test}) {
        for (double t : key(*part)) all.insert(t);
    }
    EXPECT_EQ(all.size(), 10u);
    EXPECT_EQ(std::set<double>(all.begin(), all.end()).size(), 10u);

    EXPECT_EQ(apportion(7, {0.7, 0.1, 0.2}), (std::array<std::size_t, 3>{5, 1, 1}));
    EXPECT_THROW(split_dataset(numbered(2), {0.7, 0.1, 0.2}, 1), DataError);
    EXPECT_THROW(split_dataset(d, {0.7, 0.2, 0.2}, 1), DataError);
}

TEST(Events, OrderedSplits) {
    Dataset d = numbered(76);
    for (std::size_t i = 0; i < 76; ++i) d.sequences[i].order_index = static_cast<std::int64_t>(i / 2 + 1); // weeks 1..38
    const auto s = split_by_order(d, 37, 38);
    EXPECT_EQ(s.test.sequences.size(), 2u);
    for (const auto& q : s.test.sequences) EXPECT_EQ(*q.order_index, 38);
    EXPECT_EQ(s.val.sequences.size(), 2u);
    EXPECT_EQ(s.train.sequences.size(), 72u);

    const auto r = split_dataset(d, {0.7, 0.1, 0.2}, 3);
    std::int64_t max_train = 0, min_val = 100, max_val = 0, min_test = 100;
    for (const auto& q : r.train.sequences) max_train = std::max(max_train, *q.order_index);
    for (const auto& q : r.val.sequences) {
        min_val = std::min(min_val, *q.order_index);
        max_val = std::max(max_val, *q.order_index);
    }
    for (const auto& q : r.test.sequences) min_test = std::min(min_test, *q.order_index);
    EXPECT_LT(max_train, min_val);
    EXPECT_LT(max_val, min_test);
}
