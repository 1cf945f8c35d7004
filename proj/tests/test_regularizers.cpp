#include <cmath>
#include <initializer_list>
#include <set>
#include <vector>

#include "doctest.h"
#include "dygex/errors.hpp"
#include "dygex/gradcheck.hpp"
#include "dygex/regularizers.hpp"
#include "dygex/rng.hpp"

using dygex::AttentionHistory;
using dygex::ConsistencyAnchor;
using dygex::ContrastiveConfig;
using dygex::Rng;
using dygex::Snapshot;
using dygex::Tape;
using dygex::Tensor;

namespace {

Tensor row(std::initializer_list<double> xs) {
    Tensor t(1, xs.size());
    std::size_t j = 0;
    for (double x : xs) t[j++] = x;
    return t;
}

Tensor column(std::initializer_list<double> xs) {
    Tensor t(xs.size(), 1);
    std::size_t i = 0;
    for (double x : xs) t[i++] = x;
    return t;
}

Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

Tensor one_hot(std::size_t width, std::size_t idx) {
    Tensor t(1, width);
    t.at(0, idx) = 1.0;
    return t;
}

Tensor identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

// cyclic shift of the identity; orthogonal to it under the flat dot product
Tensor shifted(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t.at(i, (i + 1) % n) = 1.0;
    return t;
}

// snapshot where rows 0 and 1 of the gated adjacency coincide exactly and
// `negatives` extra nodes carry gates on columns disjoint from both
struct ConsistencyFixture {
    Snapshot snapshot;
    Tensor gates;
    std::vector<ConsistencyAnchor> anchors;
};

ConsistencyFixture unit_similarity_fixture(int negatives) {
    // edges: (0,1) gate 0, (0,2) and (1,2) share gate 0.6, each negative node
    // m in 3..negatives+2 points at its own fresh column
    const int n = 2 * negatives + 3;
    std::vector<std::pair<int, int>> endpoints{{0, 1}, {0, 2}, {1, 2}};
    for (int m = 0; m < negatives; ++m) endpoints.push_back({3 + m, 3 + negatives + m});
    ConsistencyFixture fx;
    fx.snapshot = Snapshot::from_edges(n, endpoints);
    fx.gates = Tensor(fx.snapshot.num_edges(), 1);
    for (std::size_t e = 0; e < fx.snapshot.num_edges(); ++e) {
        const bool shared = fx.snapshot.src[e] <= 1 && fx.snapshot.dst[e] == 2;
        fx.gates[e] = shared ? 0.6 : (fx.snapshot.src[e] == 0 ? 0.0 : 0.7);
    }
    ConsistencyAnchor anchor;
    anchor.node = 0;
    anchor.positive = 1;
    for (int m = 0; m < negatives; ++m) anchor.negatives.push_back(3 + m);
    fx.anchors.push_back(anchor);
    return fx;
}

}  // namespace

TEST_CASE("sample_distinct draws k distinct indices in range") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto picked = dygex::sample_distinct(rng, 10, 7);
        REQUIRE(picked.size() == 7);
        std::set<int> seen(picked.begin(), picked.end());
        CHECK(seen.size() == 7);
        CHECK(*seen.begin() >= 0);
        CHECK(*seen.rbegin() < 10);
    }
    auto all = dygex::sample_distinct(rng, 5, 5);
    std::set<int> seen(all.begin(), all.end());
    CHECK(seen.size() == 5);
    CHECK(dygex::sample_distinct(rng, 4, 0).empty());
    CHECK_THROWS_AS(dygex::sample_distinct(rng, 3, 4), dygex::ConfigError);
}

TEST_CASE("cosine similarity hits the textbook values") {
    Tape tape;
    auto ex = tape.constant(row({1.0, 0.0, 0.0}));
    auto ey = tape.constant(row({0.0, 1.0, 0.0}));
    auto diag = tape.constant(row({3.0, 4.0, 0.0}));
    auto anti = tape.constant(row({-2.0, 0.0, 0.0}));
    auto zero = tape.constant(row({0.0, 0.0, 0.0}));

    CHECK(tape.val(dygex::cosine_sim(tape, ex, ex)).at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tape.val(dygex::cosine_sim(tape, ex, ey)).at(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(tape.val(dygex::cosine_sim(tape, ex, diag)).at(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(tape.val(dygex::cosine_sim(tape, ex, anti)).at(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(tape.val(dygex::cosine_sim(tape, ex, zero)).at(0, 0) == 0.0);  // all-zero row scores 0
}

TEST_CASE("contrastive closed forms at the info_nce level") {
    // sim(anchor, positive) = 1, sim(anchor, negative) = 0, unit temperature
    // -> exactly -log(e / (e + K))
    const struct {
        int k;
        double expected;
    } cases[] = {
        {1, 0.3132616875182228},
        {4, 0.904832441554448},
        {8, 1.371950865600909},
    };
    for (const auto& c : cases) {
        Tape tape;
        const std::size_t width = static_cast<std::size_t>(c.k) + 1;
        auto anchor = tape.constant(one_hot(width, 0));
        auto positive = tape.constant(one_hot(width, 0));
        std::vector<Tape::Var> negatives;
        for (int s = 0; s < c.k; ++s)
            negatives.push_back(tape.constant(one_hot(width, static_cast<std::size_t>(s) + 1)));
        auto loss = dygex::info_nce(tape, anchor, positive, negatives);
        CHECK(std::abs(tape.val(loss).at(0, 0) - c.expected) < 1e-4);
    }
}

TEST_CASE("contrastive loss responds monotonically to the similarities") {
    Tape tape;
    auto anchor = tape.constant(row({1.0, 0.0}));
    auto near = tape.constant(row({1.0, 0.2}));
    auto far = tape.constant(row({0.2, 1.0}));
    std::vector<Tape::Var> negatives{tape.constant(row({-1.0, 0.3}))};
    double l_near = tape.val(dygex::info_nce(tape, anchor, near, negatives)).at(0, 0);
    double l_far = tape.val(dygex::info_nce(tape, anchor, far, negatives)).at(0, 0);
    CHECK(l_near < l_far);  // a drifting positive raises the loss
    CHECK(l_near >= 0.0);   // logsumexp over a set containing s_pos

    auto positive = tape.constant(row({1.0, 0.1}));
    std::vector<Tape::Var> close_neg{tape.constant(row({1.0, 0.5}))};
    std::vector<Tape::Var> far_neg{tape.constant(row({-0.2, 1.0}))};
    double l_close = tape.val(dygex::info_nce(tape, anchor, positive, close_neg)).at(0, 0);
    double l_apart = tape.val(dygex::info_nce(tape, anchor, positive, far_neg)).at(0, 0);
    CHECK(l_apart < l_close);  // a receding negative lowers the loss
}

TEST_CASE("contrastive temperature sharpens the score gap") {
    Tape tape;
    auto anchor = tape.constant(row({1.0, 0.0}));
    auto positive = tape.constant(row({0.9, 0.1}));
    std::vector<Tape::Var> negatives{tape.constant(row({0.0, 1.0}))};
    double l_unit = tape.val(dygex::info_nce(tape, anchor, positive, negatives, 1.0)).at(0, 0);
    double l_cold = tape.val(dygex::info_nce(tape, anchor, positive, negatives, 0.1)).at(0, 0);
    CHECK(l_cold < l_unit);  // positive already wins; colder temperature amplifies it
    CHECK_THROWS_AS(dygex::info_nce(tape, anchor, positive, negatives, 0.0), dygex::ConfigError);
}

TEST_CASE("all-equal similarities sit at the uninformative ceiling log(1+K)") {
    Tape tape;
    auto v = tape.constant(row({0.3, 0.4, 0.5}));
    std::vector<Tape::Var> one{v};
    std::vector<Tape::Var> four{v, v, v, v};
    CHECK(tape.val(dygex::info_nce(tape, v, v, one)).at(0, 0) ==
          doctest::Approx(0.6931471805599453).epsilon(1e-9));
    CHECK(tape.val(dygex::info_nce(tape, v, v, four)).at(0, 0) ==
          doctest::Approx(1.6094379124341003).epsilon(1e-9));
}

TEST_CASE("consistency anchors pair connected positives with unconnected negatives") {
    // star around node 0 plus a detached pair (4,5); node 3 is isolated
    auto snap = Snapshot::from_edges(6, {{0, 1}, {0, 2}, {1, 0}, {4, 5}});
    ContrastiveConfig cfg;
    cfg.num_anchors = 6;
    cfg.num_negatives = 3;
    Rng rng(19);
    auto anchors = dygex::sample_consistency_anchors(snap, cfg, rng);
    CHECK(!anchors.empty());
    for (const auto& anchor : anchors) {
        CHECK(snap.has_edge(anchor.node, anchor.positive));
        CHECK(anchor.positive != anchor.node);
        CHECK(!anchor.negatives.empty());
        std::set<int> distinct(anchor.negatives.begin(), anchor.negatives.end());
        CHECK(distinct.size() == anchor.negatives.size());
        for (int j : anchor.negatives) {
            CHECK(j != anchor.node);
            CHECK(!snap.has_edge(anchor.node, j));
        }
        CHECK(anchor.node != 3);  // isolated nodes are skipped
    }
}

TEST_CASE("consistency anchors error out when no node has a usable pair") {
    // two nodes connected both ways: every node lacks an unconnected negative
    auto snap = Snapshot::from_edges(2, {{0, 1}, {1, 0}});
    ContrastiveConfig cfg;
    Rng rng(3);
    CHECK_THROWS_AS(dygex::sample_consistency_anchors(snap, cfg, rng), dygex::DataError);
}

TEST_CASE("consistency closed forms on the unit-similarity fixture") {
    // anchor row 0 equals positive row 1 (sim 1) while negatives occupy
    // disjoint columns (sim 0) -> -log(e/(e+K))
    const struct {
        int k;
        double expected;
    } cases[] = {
        {1, 0.3132616875182228},
        {4, 0.904832441554448},
        {8, 1.371950865600909},
    };
    for (const auto& c : cases) {
        auto fx = unit_similarity_fixture(c.k);
        Tape tape;
        auto gates = tape.constant(fx.gates);
        auto loss = dygex::consistency_loss(tape, gates, fx.snapshot, fx.anchors);
        CHECK(std::abs(tape.val(loss).at(0, 0) - c.expected) < 1e-4);
    }
}

TEST_CASE("consistency loss validates its inputs") {
    auto fx = unit_similarity_fixture(1);
    Tape tape;
    auto gates = tape.constant(fx.gates);
    CHECK_THROWS_AS(dygex::consistency_loss(tape, gates, fx.snapshot, {}), dygex::ConfigError);

    auto short_gates = tape.constant(Tensor(2, 1));
    CHECK_THROWS_AS(dygex::consistency_loss(tape, short_gates, fx.snapshot, fx.anchors),
                    dygex::ShapeError);

    std::vector<ConsistencyAnchor> bad = fx.anchors;
    bad[0].negatives.push_back(fx.snapshot.num_nodes);
    CHECK_THROWS_AS(dygex::consistency_loss(tape, gates, fx.snapshot, bad), dygex::IndexError);
}

TEST_CASE("consistency wrapper reproduces the explicit anchor path") {
    auto snap = Snapshot::from_edges(7, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {6, 0}});
    Tensor gate_values = column({0.9, 0.2, 0.7, 0.4, 0.8, 0.3, 0.6});
    ContrastiveConfig cfg;
    cfg.num_anchors = 4;
    cfg.num_negatives = 2;

    Tape tape;
    auto gates = tape.constant(gate_values);
    Rng rng_a(77);
    Rng rng_b(77);
    double wrapped = tape.val(dygex::consistency_loss(tape, gates, snap, cfg, rng_a)).at(0, 0);
    auto anchors = dygex::sample_consistency_anchors(snap, cfg, rng_b);
    double direct =
        tape.val(dygex::consistency_loss(tape, gates, snap, anchors, cfg.temperature)).at(0, 0);
    CHECK(wrapped == direct);
}

TEST_CASE("gradients flow through the consistency loss") {
    auto snap = Snapshot::from_edges(6, {{0, 1}, {0, 2}, {1, 2}, {1, 3}, {2, 4}, {4, 1}, {5, 0}});
    Tensor gate_values = column({0.9, 0.3, 0.8, 0.2, 0.6, 0.5, 0.4});
    std::vector<ConsistencyAnchor> anchors;
    anchors.push_back(ConsistencyAnchor{0, 1, {3, 5}});
    anchors.push_back(ConsistencyAnchor{1, 2, {0, 5}});
    anchors.push_back(ConsistencyAnchor{4, 1, {3}});

    Tape tape;
    auto gates = tape.leaf(gate_values);
    auto loss = dygex::consistency_loss(tape, gates, snap, anchors);
    tape.backward(loss);
    std::vector<Tensor> analytic{tape.grad(gates)};

    auto loss_fn = [&](const std::vector<Tensor>& params) {
        Tape t;
        auto g = t.leaf(params[0]);
        return t.val(dygex::consistency_loss(t, g, snap, anchors)).at(0, 0);
    };
    CHECK(dygex::finite_diff_max_rel_err(loss_fn, {gate_values}, analytic) < 1e-6);
}

TEST_CASE("attention history keeps ordered entries and evicts the oldest") {
    AttentionHistory history(2);
    CHECK(history.capacity() == 2);
    CHECK(history.size() == 0);
    CHECK(history.num_nodes() == 0);
    CHECK_THROWS_AS(history.newest(), dygex::IndexError);
    CHECK_THROWS_AS(AttentionHistory(0), dygex::ConfigError);

    history.push(1, 1, Tensor(3, 1, 1.0));
    history.push(2, 2, Tensor(6, 2, 0.5));
    CHECK(history.size() == 2);
    CHECK(history.num_nodes() == 3);
    CHECK(history.at(0).ordinal == 1);
    history.push(4, 2, Tensor(6, 2, 0.25));
    CHECK(history.size() == 2);
    CHECK(history.at(0).ordinal == 2);
    CHECK(history.newest().ordinal == 4);
    CHECK_THROWS_AS(history.at(2), dygex::IndexError);

    CHECK_THROWS_AS(history.push(4, 2, Tensor(6, 2)), dygex::DataError);   // stale ordinal
    CHECK_THROWS_AS(history.push(5, 2, Tensor(8, 2)), dygex::ShapeError);  // node drift
    CHECK_THROWS_AS(history.push(5, 2, Tensor(6, 3)), dygex::ShapeError);  // not block rows
    CHECK_THROWS_AS(history.push(5, 0, Tensor(6, 2)), dygex::ShapeError);

    auto recent = history.in_window(3, 5);
    REQUIRE(recent.size() == 1);
    CHECK(history.at(recent[0]).ordinal == 4);
    auto distant = history.before_window(3);
    REQUIRE(distant.size() == 1);
    CHECK(history.at(distant[0]).ordinal == 2);
}

TEST_CASE("padded attention blocks land in the bottom-right corner") {
    AttentionHistory history(2);
    Tensor attn(4, 2);  // two nodes, two steps
    attn.at(0, 0) = 0.1;
    attn.at(0, 1) = 0.9;
    attn.at(1, 0) = 0.4;
    attn.at(1, 1) = 0.6;
    attn.at(2, 0) = 1.0;
    attn.at(3, 1) = 1.0;
    history.push(7, 2, attn);

    Tensor block = dygex::padded_attention_block(history.newest(), 0, 3);
    CHECK(block.rows() == 3);
    CHECK(block.at(0, 0) == 0.0);
    CHECK(block.at(1, 1) == 0.1);
    CHECK(block.at(1, 2) == 0.9);
    CHECK(block.at(2, 1) == 0.4);
    CHECK(block.at(2, 2) == 0.6);

    Tensor same = dygex::padded_attention_block(history.newest(), 1, 2);
    CHECK(same.at(0, 0) == 1.0);
    CHECK(same.at(1, 1) == 1.0);

    CHECK_THROWS_AS(dygex::padded_attention_block(history.newest(), 2, 3), dygex::IndexError);
    CHECK_THROWS_AS(dygex::padded_attention_block(history.newest(), 0, 1), dygex::ShapeError);
}

TEST_CASE("continuity loss vanishes while the stream is young") {
    ContrastiveConfig cfg;
    Rng rng(2);
    Tape tape;
    auto current = tape.constant(identity(3));  // one node, three steps

    AttentionHistory empty(4);
    CHECK(tape.val(dygex::continuity_loss(tape, current, 3, 10, 8, 3, empty, cfg, rng)).at(0, 0) ==
          0.0);

    AttentionHistory only_recent(4);
    only_recent.push(9, 3, identity(3));
    CHECK(tape.val(dygex::continuity_loss(tape, current, 3, 10, 8, 3, only_recent, cfg, rng))
              .at(0, 0) == 0.0);

    AttentionHistory only_distant(4);
    only_distant.push(2, 3, identity(3));
    CHECK(tape.val(dygex::continuity_loss(tape, current, 3, 10, 8, 3, only_distant, cfg, rng))
              .at(0, 0) == 0.0);
}

TEST_CASE("continuity closed forms on the unit-similarity fixture") {
    // one node; the recent archive holds the current matrix (sim 1) and the
    // distant archive holds shifted matrices orthogonal to it (sim 0)
    const struct {
        int k;
        double expected;
    } cases[] = {
        {1, 0.3132616875182228},
        {4, 0.904832441554448},
        {8, 1.371950865600909},
    };
    for (const auto& c : cases) {
        AttentionHistory history(16);
        for (int m = 0; m < c.k; ++m) history.push(m + 1, 3, shifted(3));
        history.push(9, 3, identity(3));
        ContrastiveConfig cfg;
        cfg.num_negatives = c.k;
        Rng rng(5);
        Tape tape;
        auto current = tape.constant(identity(3));
        auto loss = dygex::continuity_loss(tape, current, 3, 10, 9, 3, history, cfg, rng);
        CHECK(std::abs(tape.val(loss).at(0, 0) - c.expected) < 1e-4);
    }
}

TEST_CASE("continuity ceiling when every archived matrix matches the current one") {
    AttentionHistory history(8);
    history.push(1, 3, identity(3));
    history.push(2, 3, identity(3));
    history.push(9, 3, identity(3));
    ContrastiveConfig cfg;
    cfg.num_negatives = 2;
    Rng rng(6);
    Tape tape;
    auto current = tape.constant(identity(3));
    auto loss = dygex::continuity_loss(tape, current, 3, 10, 9, 3, history, cfg, rng);
    CHECK(tape.val(loss).at(0, 0) == doctest::Approx(1.0986122886681098).epsilon(1e-9));
}

TEST_CASE("continuity loss validates shapes and windows") {
    ContrastiveConfig cfg;
    Rng rng(4);
    Tape tape;
    AttentionHistory history(4);
    history.push(1, 2, Tensor(4, 2, 0.5));
    history.push(9, 2, Tensor(4, 2, 0.5));

    auto ragged = tape.constant(Tensor(3, 2, 0.5));
    CHECK_THROWS_AS(dygex::continuity_loss(tape, ragged, 2, 10, 8, 3, history, cfg, rng),
                    dygex::ShapeError);
    auto drifted = tape.constant(Tensor(6, 2, 0.5));  // three nodes vs two archived
    CHECK_THROWS_AS(dygex::continuity_loss(tape, drifted, 2, 10, 8, 3, history, cfg, rng),
                    dygex::ShapeError);
    auto current = tape.constant(Tensor(4, 2, 0.5));
    CHECK_THROWS_AS(dygex::continuity_loss(tape, current, 2, 10, 11, 3, history, cfg, rng),
                    dygex::ConfigError);
    CHECK_THROWS_AS(dygex::continuity_loss(tape, current, 2, 10, 8, 1, history, cfg, rng),
                    dygex::ShapeError);
}

TEST_CASE("continuity loss is deterministic for a fixed seed") {
    Rng data(5);
    AttentionHistory history(6);
    Tensor a1 = random_tensor(4, 2, data);
    Tensor a2 = random_tensor(4, 2, data);
    Tensor a3 = random_tensor(4, 2, data);
    history.push(1, 2, a1);
    history.push(2, 2, a2);
    history.push(9, 2, a3);
    Tensor current = random_tensor(4, 2, data);
    ContrastiveConfig cfg;
    cfg.num_anchors = 2;
    cfg.num_negatives = 2;
    auto run = [&]() {
        Tape tape;
        Rng rng(123);
        auto v = tape.constant(current);
        return tape.val(dygex::continuity_loss(tape, v, 2, 10, 8, 3, history, cfg, rng)).at(0, 0);
    };
    CHECK(run() == run());
}

TEST_CASE("gradients flow through the continuity loss and its padding") {
    Rng data(41);
    AttentionHistory history(6);
    history.push(1, 3, random_tensor(6, 3, data));  // distant, already full width
    history.push(2, 2, random_tensor(4, 2, data));  // distant, needs padding
    history.push(9, 2, random_tensor(4, 2, data));  // recent positive
    Tensor current = random_tensor(4, 2, data);     // two nodes, two steps
    ContrastiveConfig cfg;
    cfg.num_anchors = 2;
    cfg.num_negatives = 2;

    Tape tape;
    auto v = tape.leaf(current);
    Rng rng(9);
    auto loss = dygex::continuity_loss(tape, v, 2, 10, 8, 3, history, cfg, rng);
    tape.backward(loss);
    std::vector<Tensor> analytic{tape.grad(v)};

    auto loss_fn = [&](const std::vector<Tensor>& params) {
        Tape t;
        auto a = t.leaf(params[0]);
        Rng r(9);
        return t.val(dygex::continuity_loss(t, a, 2, 10, 8, 3, history, cfg, r)).at(0, 0);
    };
    CHECK(dygex::finite_diff_max_rel_err(loss_fn, {current}, analytic) < 1e-6);
}

TEST_CASE("total loss blends the three terms with validated weights") {
    Tape tape;
    auto task = tape.constant(Tensor::scalar(2.0));
    auto cons = tape.constant(Tensor::scalar(0.5));
    auto cont = tape.constant(Tensor::scalar(4.0));

    auto blended = dygex::total_loss(tape, task, cons, cont, 0.2, 0.1);
    // 0.7 * 2 + 0.2 * 0.5 + 0.1 * 4 = 1.9
    CHECK(tape.val(blended).at(0, 0) == doctest::Approx(1.9).epsilon(1e-12));

    auto task_only = dygex::total_loss(tape, task, cons, cont, 0.0, 0.0);
    CHECK(tape.val(task_only).at(0, 0) == 2.0);  // weights collapse to the task term exactly

    auto all_reg = dygex::total_loss(tape, task, cons, cont, 0.5, 0.5);
    CHECK(tape.val(all_reg).at(0, 0) == doctest::Approx(2.25).epsilon(1e-12));

    CHECK_THROWS_AS(dygex::total_loss(tape, task, cons, cont, -0.1, 0.2), dygex::ConfigError);
    CHECK_THROWS_AS(dygex::total_loss(tape, task, cons, cont, 0.2, -0.1), dygex::ConfigError);
    CHECK_THROWS_AS(dygex::total_loss(tape, task, cons, cont, 0.6, 0.5), dygex::ConfigError);
}
