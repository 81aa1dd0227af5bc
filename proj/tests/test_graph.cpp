#include "doctest.h"

#include <random>
#include <set>

#include "dot_checker.hpp"
#include "ktg/error.hpp"
#include "ktg/graph.hpp"
#include "ktg/presets.hpp"

using namespace ktg;

namespace {

GraphSpec dml2() { return uniform_graph(2, Arch::AtSmallResNet, 7, LossDesign::ProbCloser, GateKind::Through); }

bool has_violation(const GraphSpec& g, const std::string& needle) {
    for (const auto& v : validate_graph(g)) {
        if (v.find(needle) != std::string::npos) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("hyperparameter space sizes") {
    const auto s2 = hyperparameter_space(2);
    CHECK(s2.node_slots.size() == 2);
    CHECK(s2.label_slots.size() == 2);
    CHECK(s2.node_slots[0].option_count() == 24);
    CHECK(s2.label_slots[0].option_count() == 4);
    CHECK(s2.combination_count() == 9216);

    // 24^(M(M-1)) * 4^M
    for (int m = 2; m <= 6; ++m) {
        BigCount expect = 1;
        for (int i = 0; i < m * (m - 1); ++i) expect *= 24;
        for (int i = 0; i < m; ++i) expect *= 4;
        CHECK(hyperparameter_space(m).combination_count() == expect);
    }
    CHECK_THROWS_AS(hyperparameter_space(1), Error);
    try {
        hyperparameter_space(1);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InvalidGraphSize);
    }
}

TEST_CASE("M=2 combination count by enumeration") {
    const auto space = hyperparameter_space(2);
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const auto& a : space.node_slots[0].designs)
        for (const auto& ga : space.node_slots[0].gates)
            for (const auto& b : space.node_slots[1].designs)
                for (const auto& gb : space.node_slots[1].gates)
                    for (const auto& l0 : space.label_slots[0].gates)
                        for (const auto& l1 : space.label_slots[1].gates) {
                            ++total;
                            std::string key;
                            for (auto part : {to_string(a), to_string(ga), to_string(b), to_string(gb), to_string(l0),
                                              to_string(l1)})
                                key.append(part).append("|");
                            seen.insert(key);
                        }
    CHECK(total == 9216);
    CHECK(seen.size() == 9216);
}

TEST_CASE("sample_graph determinism and validity") {
    const auto space = hyperparameter_space(3);
    std::mt19937_64 a(42), b(42);
    const GraphSpec ga = sample_graph(space, a), gb = sample_graph(space, b);
    CHECK(ga == gb);
    int node_edges = 0, label_edges = 0;
    for (const auto& e : ga.edges) (e.is_label_edge() ? label_edges : node_edges)++;
    CHECK(node_edges == 6);
    CHECK(label_edges == 3);

    int differing = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        std::mt19937_64 r1(2 * s + 1), r2(2 * s + 2);
        const auto g1 = sample_graph(space, r1), g2 = sample_graph(space, r2);
        CHECK(validate_graph(g1).empty());
        CHECK(validate_graph(g2).empty());
        if (g1.edges != g2.edges) ++differing;
    }
    CHECK(differing == 100);
}

TEST_CASE("sample_graph rejects untrainable draws") {
    SpaceDescriptor space = hyperparameter_space(2);
    for (auto& s : space.node_slots) s.gates = {GateKind::Cutoff};
    for (auto& s : space.label_slots) s.gates = {GateKind::Cutoff};
    std::mt19937_64 rng(1);
    try {
        sample_graph(space, rng, 10);
        FAIL("expected a sampling failure");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::SamplingFailure);
    }
}

TEST_CASE("validate_graph") {
    CHECK(validate_graph(dml2()).empty());

    GraphSpec bad = dml2();
    for (auto& e : bad.edges) {
        if (!e.is_label_edge()) e.loss = LossDesign::LabelHard;
    }
    CHECK(has_violation(bad, "LabelHard"));

    GraphSpec untrained = dml2();
    for (auto& e : untrained.edges) {
        if (e.target == 1) e.gate = GateKind::Cutoff;
    }
    CHECK(has_violation(untrained, "untrained node 1"));

    // Label gate Cutoff is fine while an incoming edge is active.
    GraphSpec distill = dml2();
    for (auto& e : distill.edges) {
        if (e.is_label_edge() && e.target == 1) e.gate = GateKind::Cutoff;
    }
    CHECK(validate_graph(distill).empty());

    GraphSpec missing = dml2();
    missing.edges.erase(missing.edges.begin());
    CHECK_FALSE(validate_graph(missing).empty());

    GraphSpec self = dml2();
    self.edges.push_back({0, 0, LossDesign::ProbCloser, GateKind::Through});
    CHECK_FALSE(validate_graph(self).empty());

    GraphSpec ens = dml2();
    ens.edges.push_back({kEnsembleNode, 0, LossDesign::ProbCloser, GateKind::Through});
    CHECK_FALSE(validate_graph(ens).empty());

    // Every violation is reported, not only the first.
    GraphSpec many = dml2();
    for (auto& e : many.edges) {
        if (!e.is_label_edge()) e.loss = LossDesign::LabelHard;
    }
    many.edges.push_back({1, 1, LossDesign::ProbCloser, GateKind::Through});
    CHECK(validate_graph(many).size() >= 3);
}

TEST_CASE("serialization round trip") {
    std::mt19937_64 rng(5);
    for (int m = 2; m <= 5; ++m) {
        const auto space = hyperparameter_space(m, m % 2 ? Arch::AbnSmallResNet : Arch::AtSmallResNet);
        for (int i = 0; i < 25; ++i) {
            GraphSpec g = sample_graph(space, rng);
            g.seed = rng();
            CHECK(deserialize(serialize(g)) == g);
            CHECK(graph_digest(deserialize(serialize(g))) == graph_digest(g));
        }
    }
}

TEST_CASE("deserialize errors") {
    auto kind_of = [](const std::string& text) {
        try {
            deserialize(text);
        } catch (const Error& e) {
            return std::pair<ErrorKind, std::string>{e.kind(), e.what()};
        }
        return std::pair<ErrorKind, std::string>{ErrorKind::Io, "no error"};
    };
    CHECK(kind_of("").first == ErrorKind::Parse);
    const auto trunc = kind_of("{\"version\": 1,\n \"num_nodes\": ");
    CHECK(trunc.first == ErrorKind::Parse);
    CHECK(trunc.second.find("line") != std::string::npos);

    std::string doc = serialize(dml2());
    const auto pos = doc.find("\"Through\"");
    REQUIRE(pos != std::string::npos);
    doc.replace(pos, 9, "\"Foo\"");
    const auto foo = kind_of(doc);
    CHECK(foo.first == ErrorKind::Schema);
    CHECK(foo.second.find("gate") != std::string::npos);
    CHECK(foo.second.find("Foo") != std::string::npos);

    std::string v2 = serialize(dml2());
    v2.replace(v2.find("\"version\": 1"), 12, "\"version\": 2");
    CHECK(kind_of(v2).first == ErrorKind::Schema);
}

TEST_CASE("DOT export") {
    const std::string d = to_dot(dml2());
    auto count = [&](const std::string& needle) {
        std::size_t n = 0;
        for (auto p = d.find(needle); p != std::string::npos; p = d.find(needle, p + 1)) ++n;
        return n;
    };
    CHECK(count("Prob(KL-div)/Through") == 2);
    CHECK(dot::check(d).ok);

    const GraphSpec ind =
        uniform_graph(2, Arch::AtSmallResNet, 1, LossDesign::ProbCloser, GateKind::Cutoff, GateKind::Through);
    const std::string di = to_dot(ind);
    CHECK(di.find("n0 -> n1") == std::string::npos);
    CHECK(di.find("n1 -> n0") == std::string::npos);
    CHECK(dot::check(di).ok);

    std::mt19937_64 rng(11);
    for (int m = 2; m <= 5; ++m) {
        for (int i = 0; i < 20; ++i) {
            const GraphSpec g = sample_graph(hyperparameter_space(m), rng);
            const std::string text = to_dot(g);
            const auto r = dot::check(text);
            CHECK_MESSAGE(r.ok, r.error);
            for (const auto& e : g.edges) {
                if (e.is_label_edge() || e.gate != GateKind::Cutoff) continue;
                const std::string edge = "n" + std::to_string(e.source) + " -> n" + std::to_string(e.target) + " ";
                CHECK(text.find(edge) == std::string::npos);
            }
        }
    }
}

TEST_CASE("DOT checker rejects malformed text") {
    CHECK_FALSE(dot::check("digraph { a -> }").ok);
    CHECK_FALSE(dot::check("graph { a -> b }").ok);
    CHECK_FALSE(dot::check("digraph { a [label=\"x] }").ok);
    CHECK_FALSE(dot::check("digraph { a ").ok);
    CHECK(dot::check("strict digraph G { /* c */ a -> b -> c [w=1]; subgraph s { d } }").ok);
}
