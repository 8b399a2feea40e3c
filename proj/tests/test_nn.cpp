#include <catch2/catch.hpp>

#include <cmath>
#include <memory>

#include "oracles.hpp"
#include "rehab/nn.hpp"

using namespace rehab;
using namespace rehab::nn;

namespace {

Mat random_input(int t, int c, Rng& rng) {
    Mat m(t, c);
    for (double& v : m.a) v = rng.uniform(-1.0, 1.0);
    return m;
}

// Sum-of-squares loss over the graph output for gradient checking.
double sq_loss(Graph& g, const Mat& x) {
    const Mat& out = g.forward(x);
    double s = 0.0;
    for (double v : out.a) s += v * v;
    return 0.5 * s;
}

void sq_backward(Graph& g, const Mat& x) {
    g.zero_grad();
    const Mat& out = g.forward(x);
    Mat grad = out;  // d(0.5*sum out^2)/d out = out
    g.backward(grad);
}

oracles::GradCheckResult check_graph(Graph& g, const Mat& x) {
    g.training = false;
    return oracles::finite_difference_check(
        g, [&] { return sq_loss(g, x); }, [&] { sq_backward(g, x); });
}

}  // namespace

TEST_CASE("dense layer gradients match finite differences") {
    Rng rng(1);
    Graph g;
    g.input_id = g.add(std::make_unique<Input>());
    Rng init(2);
    g.output_id = g.add(std::make_unique<Dense>(g.input_id, 4, 3, Act::tanh, "d", init));
    const Mat x = random_input(5, 4, rng);
    const auto res = check_graph(g, x);
    CHECK(res.failed == 0);
    CHECK(res.worst_rel < 1e-6);
}

TEST_CASE("conv layer gradients match finite differences across strides") {
    Rng rng(3);
    for (int stride : {1, 2, 4}) {
        Graph g;
        g.input_id = g.add(std::make_unique<Input>());
        Rng init(4);
        g.output_id = g.add(std::make_unique<Conv1D>(g.input_id, 3, std::vector<int>{3, 5}, 2, stride,
                                                     Act::relu, "c", init));
        const Mat x = random_input(16, 3, rng);
        const auto res = check_graph(g, x);
        CHECK(res.failed == 0);
    }
}

TEST_CASE("conv output length is ceil(t / stride) for every branch") {
    Rng init(5);
    for (int t : {8, 16, 24, 240}) {
        for (int stride : {1, 2, 4, 8}) {
            Graph g;
            g.input_id = g.add(std::make_unique<Input>());
            g.output_id = g.add(std::make_unique<Conv1D>(g.input_id, 2, std::vector<int>{3, 5, 7}, 2,
                                                         stride, Act::linear, "c", init));
            Rng rng(6);
            const Mat& out = g.forward(random_input(t, 2, rng));
            CHECK(out.rows == (t + stride - 1) / stride);
            CHECK(out.cols == 6);
        }
    }
}

TEST_CASE("lstm gradients match finite differences") {
    Rng rng(7);
    for (bool return_seq : {true, false}) {
        Graph g;
        g.input_id = g.add(std::make_unique<Input>());
        Rng init(8);
        g.output_id = g.add(std::make_unique<Lstm>(g.input_id, 3, 4, return_seq, "l", init));
        const Mat x = random_input(7, 3, rng);
        const auto res = check_graph(g, x);
        CHECK(res.failed == 0);
        CHECK(res.worst_rel < 1e-5);
    }
}

TEST_CASE("stacked graph with slice, subsample, concat and pooling backpropagates") {
    Rng rng(9);
    Graph g;
    g.input_id = g.add(std::make_unique<Input>());
    Rng init(10);
    const int s1 = g.add(std::make_unique<SliceCols>(g.input_id, std::vector<int>{0, 1}));
    const int s2 = g.add(std::make_unique<SliceCols>(g.input_id, std::vector<int>{2, 3}));
    const int sub = g.add(std::make_unique<Subsample>(s2, 2));
    const int c1 = g.add(std::make_unique<Conv1D>(s1, 2, std::vector<int>{3}, 2, 2, Act::relu, "c1", init));
    const int c2 = g.add(std::make_unique<Conv1D>(sub, 2, std::vector<int>{3}, 2, 1, Act::relu, "c2", init));
    const int cat = g.add(std::make_unique<Concat>(std::vector<int>{c1, c2}));
    const int lstm = g.add(std::make_unique<Lstm>(cat, 4, 3, false, "l", init));
    g.output_id = g.add(std::make_unique<Dense>(lstm, 3, 1, Act::linear, "out", init));

    const Mat x = random_input(8, 4, rng);
    const auto res = check_graph(g, x);
    CHECK(res.failed == 0);
}

TEST_CASE("mean pooling and flatten preserve gradients") {
    Rng rng(11);
    for (bool flatten : {true, false}) {
        Graph g;
        g.input_id = g.add(std::make_unique<Input>());
        Rng init(12);
        int mid;
        if (flatten) {
            mid = g.add(std::make_unique<Flatten>(g.input_id));
            g.output_id = g.add(std::make_unique<Dense>(mid, 12, 2, Act::tanh, "d", init));
        } else {
            mid = g.add(std::make_unique<MeanPoolTime>(g.input_id));
            g.output_id = g.add(std::make_unique<Dense>(mid, 3, 2, Act::tanh, "d", init));
        }
        const Mat x = random_input(4, 3, rng);
        const auto res = check_graph(g, x);
        CHECK(res.failed == 0);
    }
}

TEST_CASE("dropout is identity in evaluation mode and rescales in training") {
    Rng rng(13);
    Graph g;
    g.input_id = g.add(std::make_unique<Input>());
    g.output_id = g.add(std::make_unique<Dropout>(g.input_id, 0.5));
    g.rng = Rng(14);
    const Mat x = random_input(10, 6, rng);

    g.training = false;
    const Mat eval_out = g.forward(x);
    REQUIRE(eval_out == x);

    g.training = true;
    const Mat train_out = g.forward(x);
    int zeros = 0, scaled = 0;
    for (std::size_t i = 0; i < x.a.size(); ++i) {
        if (train_out.a[i] == 0.0)
            ++zeros;
        else if (train_out.a[i] == Approx(2.0 * x.a[i]).margin(1e-12))
            ++scaled;
    }
    CHECK(zeros + scaled == int(x.a.size()));
    CHECK(zeros > 5);
    CHECK(scaled > 5);
}

TEST_CASE("graph forward reports non-finite activations with the layer name") {
    Graph g;
    g.input_id = g.add(std::make_unique<Input>());
    Rng init(15);
    auto dense = std::make_unique<Dense>(g.input_id, 2, 1, Act::linear, "exploding", init);
    dense->w.value(0, 0) = std::numeric_limits<double>::infinity();
    g.output_id = g.add(std::move(dense));
    Mat x(1, 2, 1.0);
    try {
        g.forward(x);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("exploding") != std::string::npos);
    }
}

TEST_CASE("adam performs the textbook first step") {
    Param p("w", 1, 1);
    p.value(0, 0) = 1.0;
    p.grad(0, 0) = 0.5;
    Adam opt(0.1);
    opt.step({&p});
    // first step moves by lr * g / (|g| + eps) ~= lr
    CHECK(p.value(0, 0) == Approx(1.0 - 0.1).margin(1e-6));
}

TEST_CASE("adam converges on a quadratic") {
    Param p("w", 1, 1);
    p.value(0, 0) = 4.0;
    Adam opt(0.05);
    for (int i = 0; i < 2000; ++i) {
        p.grad(0, 0) = 2.0 * (p.value(0, 0) - 1.5);
        opt.step({&p});
    }
    CHECK(p.value(0, 0) == Approx(1.5).margin(1e-3));
}

TEST_CASE("snapshot and restore round-trip parameters") {
    Graph g;
    g.input_id = g.add(std::make_unique<Input>());
    Rng init(16);
    g.output_id = g.add(std::make_unique<Dense>(g.input_id, 3, 2, Act::linear, "d", init));
    const auto snap = g.snapshot();
    for (Param* p : g.params())
        for (double& v : p->value.a) v += 1.0;
    g.restore(snap);
    Rng rng(17);
    const Mat x = random_input(2, 3, rng);
    Graph g2;
    g2.input_id = g2.add(std::make_unique<Input>());
    Rng init2(16);
    g2.output_id = g2.add(std::make_unique<Dense>(g2.input_id, 3, 2, Act::linear, "d", init2));
    REQUIRE(g.forward(x) == g2.forward(x));
}
