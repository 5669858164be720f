#include <doctest.h>

#include <cmath>
#include <functional>

#include "mvps/nn/module.hpp"
#include "mvps/nn/ops.hpp"
#include "mvps/rng.hpp"

using namespace mvps;
using namespace mvps::nn;

namespace {

Tensor rand_tensor(const Shape& shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    std::vector<float> v(static_cast<size_t>(shape_numel(shape)));
    for (float& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return Tensor::from_data(shape, std::move(v));
}

// Scalar head for gradient checks: fixed random weighting keeps every output
// coordinate in play with a distinct coefficient. The RNG is taken by value
// so repeated evaluations of the same closure see identical weights.
Tensor weighted_sum(const Tensor& y, Rng rng) {
    std::vector<float> w(static_cast<size_t>(y.numel()));
    for (float& x : w) x = static_cast<float>(rng.uniform(0.25, 1.75)) * (rng.uniform() < 0.5 ? -1.0f : 1.0f);
    Tensor wt = Tensor::from_data(y.shape(), std::move(w));
    return sum_all(mul(y, wt));
}

// Central-difference check of every input coordinate against the analytic
// backward pass.
void check_grads(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                 float eps = 1e-2f, float rtol = 2e-2f, float atol = 2e-3f) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor loss = f();
    REQUIRE(loss.numel() == 1);
    loss.backward();
    for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor& t = inputs[k];
        const std::vector<float> analytic = t.grad();
        REQUIRE(analytic.size() == static_cast<size_t>(t.numel()));
        for (int64_t i = 0; i < t.numel(); ++i) {
            const float orig = t.data()[i];
            double fp, fm;
            {
                NoGradGuard ng;
                t.data()[i] = orig + eps;
                fp = f().item();
                t.data()[i] = orig - eps;
                fm = f().item();
            }
            t.data()[i] = orig;
            const double num = (fp - fm) / (2.0 * eps);
            const double ana = analytic[i];
            CAPTURE(k);
            CAPTURE(i);
            CAPTURE(ana);
            CAPTURE(num);
            CHECK(std::abs(ana - num) <= atol + rtol * std::max(std::abs(ana), std::abs(num)));
        }
    }
}

std::vector<float> conv_ref(const std::vector<float>& x, int B, int Ci, int H, int W,
                            const std::vector<float>& w, int Co, int kh, int kw,
                            const std::vector<float>& b, int stride, int pad, int Ho, int Wo) {
    std::vector<float> out(static_cast<size_t>(B) * Co * Ho * Wo);
    for (int bi = 0; bi < B; ++bi)
        for (int co = 0; co < Co; ++co)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    double acc = b[co];
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int i = 0; i < kh; ++i)
                            for (int j = 0; j < kw; ++j) {
                                const int y = oy * stride + i - pad;
                                const int xx = ox * stride + j - pad;
                                if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
                                acc += static_cast<double>(x[((static_cast<size_t>(bi) * Ci + ci) * H + y) * W + xx]) *
                                       w[((static_cast<size_t>(co) * Ci + ci) * kh + i) * kw + j];
                            }
                    out[((static_cast<size_t>(bi) * Co + co) * Ho + oy) * Wo + ox] = static_cast<float>(acc);
                }
    return out;
}

}  // namespace

TEST_CASE("elementwise ops: values and gradients") {
    Rng rng = Rng::substream(11, "elementwise");
    Tensor a = rand_tensor({2, 3}, rng);
    Tensor b = rand_tensor({2, 3}, rng);

    Tensor s = add(a, b);
    Tensor d = sub(a, b);
    Tensor p = mul(a, b);
    for (int i = 0; i < 6; ++i) {
        CHECK(s.data()[i] == doctest::Approx(a.data()[i] + b.data()[i]));
        CHECK(d.data()[i] == doctest::Approx(a.data()[i] - b.data()[i]));
        CHECK(p.data()[i] == doctest::Approx(a.data()[i] * b.data()[i]));
    }
    CHECK(add_scalar(a, 2.5f).data()[0] == doctest::Approx(a.data()[0] + 2.5f));
    CHECK(mul_scalar(a, -3.0f).data()[4] == doctest::Approx(a.data()[4] * -3.0f));

    check_grads([&] { return weighted_sum(mul(add(a, b), sub(a, b)), rng); }, {a, b});
    check_grads([&] { return weighted_sum(mul_scalar(add_scalar(a, 1.0f), 0.7f), rng); }, {a});
}

TEST_CASE("activations: known values and gradients") {
    CHECK(sigmoid(Tensor::from_data({1}, {0.0f})).item() == doctest::Approx(0.5));
    CHECK(silu(Tensor::from_data({1}, {1.0f})).item() == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
    CHECK(relu(Tensor::from_data({3}, {-2.0f, 0.0f, 3.0f})).data()[0] == 0.0f);
    CHECK(relu(Tensor::from_data({3}, {-2.0f, 0.0f, 3.0f})).data()[2] == 3.0f);

    Rng rng = Rng::substream(11, "act");
    // relu inputs held away from the kink
    std::vector<float> v(12);
    for (float& x : v) {
        x = static_cast<float>(rng.uniform(0.2, 1.0));
        if (rng.uniform() < 0.5) x = -x;
    }
    Tensor a = Tensor::from_data({3, 4}, std::move(v));
    check_grads([&] { return weighted_sum(relu(a), rng); }, {a});
    Tensor b = rand_tensor({3, 4}, rng, -2.0f, 2.0f);
    check_grads([&] { return weighted_sum(silu(b), rng); }, {b});
    check_grads([&] { return weighted_sum(sigmoid(b), rng); }, {b});
}

TEST_CASE("broadcast_to replicates and reduces gradient") {
    Tensor a = Tensor::from_data({1, 3}, {1.0f, 2.0f, 3.0f});
    Tensor y = broadcast_to(a, {4, 3});
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 3; ++c) CHECK(y.data()[r * 3 + c] == a.data()[c]);

    Rng rng = Rng::substream(11, "bc");
    Tensor b = rand_tensor({2, 1, 3, 1}, rng);
    check_grads([&] { return weighted_sum(broadcast_to(b, {2, 4, 3, 5}), rng); }, {b});
    CHECK_THROWS(broadcast_to(a, {4, 2}));
    CHECK_THROWS(broadcast_to(a, {3}));
}

TEST_CASE("reductions: sums, means, max") {
    Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(sum_all(a).item() == doctest::Approx(21.0));
    CHECK(mean_all(a).item() == doctest::Approx(3.5));

    Tensor s0 = sum_axes(a, {0}, true);
    CHECK(s0.shape() == Shape{1, 3});
    CHECK(s0.data()[0] == doctest::Approx(5.0));
    CHECK(s0.data()[2] == doctest::Approx(9.0));
    Tensor s1 = sum_axes(a, {1}, false);
    CHECK(s1.shape() == Shape{2});
    CHECK(s1.data()[1] == doctest::Approx(15.0));
    CHECK(mean_axes(a, {0, 1}, false).item() == doctest::Approx(3.5));

    Tensor m = max_axis(a, 1, true);
    CHECK(m.shape() == Shape{2, 1});
    CHECK(m.data()[0] == 3.0f);
    CHECK(m.data()[1] == 6.0f);
    Tensor m0 = max_axis(a, 0, false);
    CHECK(m0.shape() == Shape{3});
    CHECK(m0.data()[0] == 4.0f);

    Rng rng = Rng::substream(11, "red");
    Tensor b = rand_tensor({2, 3, 4}, rng);
    check_grads([&] { return weighted_sum(sum_axes(b, {1}, true), rng); }, {b});
    check_grads([&] { return weighted_sum(mean_axes(b, {0, 2}, false), rng); }, {b});
    check_grads([&] { return weighted_sum(max_axis(b, 2, false), rng); }, {b});
    check_grads([&] { return mean_all(b); }, {b});
}

TEST_CASE("max_axis routes gradient to the argmax only") {
    Tensor a = Tensor::from_data({1, 3}, {1.0f, 5.0f, 2.0f});
    a.set_requires_grad(true);
    sum_all(max_axis(a, 1, false)).backward();
    CHECK(a.grad()[0] == 0.0f);
    CHECK(a.grad()[1] == 1.0f);
    CHECK(a.grad()[2] == 0.0f);
}

TEST_CASE("reshape, concat, slice") {
    Rng rng = Rng::substream(11, "shape");
    Tensor a = rand_tensor({2, 6}, rng);
    Tensor r = reshape(a, {3, 4});
    CHECK(r.shape() == Shape{3, 4});
    for (int i = 0; i < 12; ++i) CHECK(r.data()[i] == a.data()[i]);
    CHECK_THROWS(reshape(a, {5, 2}));

    Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor y = Tensor::from_data({2, 1}, {9, 8});
    Tensor c = concat({x, y}, 1);
    CHECK(c.shape() == Shape{2, 3});
    CHECK(c.data()[2] == 9.0f);
    CHECK(c.data()[5] == 8.0f);
    Tensor c0 = concat({x, x}, 0);
    CHECK(c0.shape() == Shape{4, 2});
    CHECK(c0.data()[6] == 3.0f);
    CHECK_THROWS(concat({}, 0));
    CHECK_THROWS(concat({x, Tensor::from_data({1, 3}, {0, 0, 0})}, 0));

    Tensor sl = slice(c, 1, 1, 2);
    CHECK(sl.shape() == Shape{2, 2});
    CHECK(sl.data()[0] == 2.0f);
    CHECK(sl.data()[1] == 9.0f);
    CHECK_THROWS(slice(c, 1, 2, 2));

    Tensor g1 = rand_tensor({2, 3, 2}, rng);
    Tensor g2 = rand_tensor({2, 1, 2}, rng);
    check_grads([&] { return weighted_sum(concat({g1, g2}, 1), rng); }, {g1, g2});
    check_grads([&] { return weighted_sum(slice(g1, 1, 1, 2), rng); }, {g1});
    check_grads([&] { return weighted_sum(reshape(g1, {4, 3}), rng); }, {g1});
}

TEST_CASE("softmax normalizes and matches closed form") {
    Tensor a = Tensor::from_data({1, 2}, {0.0f, std::log(3.0f)});
    Tensor y = softmax(a, 1);
    CHECK(y.data()[0] == doctest::Approx(0.25));
    CHECK(y.data()[1] == doctest::Approx(0.75));

    Rng rng = Rng::substream(11, "sm");
    Tensor b = rand_tensor({3, 5, 2}, rng, -4.0f, 4.0f);
    for (int axis = 0; axis < 3; ++axis) {
        Tensor s = softmax(b, axis);
        Tensor sums = sum_axes(s, {axis}, false);
        for (int64_t i = 0; i < sums.numel(); ++i)
            CHECK(sums.data()[i] == doctest::Approx(1.0).epsilon(1e-5));
    }
    Tensor c = rand_tensor({2, 4}, rng, -2.0f, 2.0f);
    check_grads([&] { return weighted_sum(softmax(c, 1), rng); }, {c}, 1e-2f, 2e-2f, 5e-3f);
}

TEST_CASE("matmul and linear match hand results") {
    Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
    Tensor y = matmul(a, b);
    CHECK(y.data()[0] == doctest::Approx(58));
    CHECK(y.data()[1] == doctest::Approx(64));
    CHECK(y.data()[2] == doctest::Approx(139));
    CHECK(y.data()[3] == doctest::Approx(154));
    CHECK_THROWS(matmul(a, a));

    Tensor w = Tensor::from_data({3, 2}, {1, 0, 0, 1, 1, 1});
    Tensor bias = Tensor::from_data({2}, {0.5f, -0.5f});
    Tensor l = linear(a, w, bias);
    CHECK(l.data()[0] == doctest::Approx(1 + 3 + 0.5));
    CHECK(l.data()[1] == doctest::Approx(2 + 3 - 0.5));

    Rng rng = Rng::substream(11, "mm");
    Tensor ga = rand_tensor({3, 4}, rng);
    Tensor gb = rand_tensor({4, 2}, rng);
    Tensor gbias = rand_tensor({2}, rng);
    check_grads([&] { return weighted_sum(matmul(ga, gb), rng); }, {ga, gb});
    check_grads([&] { return weighted_sum(linear(ga, gb, gbias), rng); }, {ga, gb, gbias});
}

TEST_CASE("conv2d matches a naive reference") {
    Rng rng = Rng::substream(11, "conv");
    const int B = 2, Ci = 2, H = 4, W = 5, Co = 3, k = 3;
    Tensor x = rand_tensor({B, Ci, H, W}, rng);
    Tensor w = rand_tensor({Co, Ci, k, k}, rng);
    Tensor b = rand_tensor({Co}, rng);

    for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{1, 0}}) {
        const int Ho = (H + 2 * pad - k) / stride + 1;
        const int Wo = (W + 2 * pad - k) / stride + 1;
        Tensor y = conv2d(x, w, b, stride, pad);
        CHECK(y.shape() == Shape{B, Co, Ho, Wo});
        auto ref = conv_ref(x.values(), B, Ci, H, W, w.values(), Co, k, k, b.values(), stride, pad, Ho, Wo);
        for (size_t i = 0; i < ref.size(); ++i)
            CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-5));
    }

    // pointwise fast path agrees with the reference too
    Tensor w1 = rand_tensor({Co, Ci, 1, 1}, rng);
    Tensor y1 = conv2d(x, w1, b, 1, 0);
    auto ref1 = conv_ref(x.values(), B, Ci, H, W, w1.values(), Co, 1, 1, b.values(), 1, 0, H, W);
    for (size_t i = 0; i < ref1.size(); ++i)
        CHECK(y1.data()[i] == doctest::Approx(ref1[i]).epsilon(1e-5));

    CHECK_THROWS(conv2d(x, rand_tensor({Co, Ci + 1, k, k}, rng), b, 1, 1));
}

TEST_CASE("conv2d gradients") {
    Rng rng = Rng::substream(11, "convg");
    Tensor x = rand_tensor({2, 2, 4, 5}, rng);
    Tensor w = rand_tensor({3, 2, 3, 3}, rng, -0.5f, 0.5f);
    Tensor b = rand_tensor({3}, rng);
    check_grads([&] { return weighted_sum(conv2d(x, w, b, 2, 1), rng); }, {x, w, b}, 1e-2f, 3e-2f, 4e-3f);

    Tensor w1 = rand_tensor({3, 2, 1, 1}, rng, -0.5f, 0.5f);
    check_grads([&] { return weighted_sum(conv2d(x, w1, b, 1, 0), rng); }, {x, w1, b}, 1e-2f, 3e-2f, 4e-3f);
}

TEST_CASE("resampling ops") {
    Rng rng = Rng::substream(11, "resample");
    Tensor x = rand_tensor({1, 2, 2, 3}, rng);

    Tensor up = nearest_upsample2x(x);
    CHECK(up.shape() == Shape{1, 2, 4, 6});
    CHECK(up.data()[0] == x.data()[0]);
    CHECK(up.data()[1] == x.data()[0]);
    CHECK(up.data()[7] == x.data()[0]);

    Tensor pooled = avg_pool2x2(up);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(pooled.data()[i] == doctest::Approx(x.data()[i]));
    CHECK_THROWS(avg_pool2x2(x));  // odd width

    Tensor row = Tensor::from_data({1, 1, 1, 2}, {0.0f, 100.0f});
    Tensor rr = bilinear_resize(row, 1, 4);
    CHECK(rr.data()[0] == doctest::Approx(0.0));
    CHECK(rr.data()[1] == doctest::Approx(25.0));
    CHECK(rr.data()[2] == doctest::Approx(75.0));
    CHECK(rr.data()[3] == doctest::Approx(100.0));
    Tensor flat = bilinear_resize(Tensor::full({1, 1, 3, 3}, 4.0f), 7, 5);
    for (int64_t i = 0; i < flat.numel(); ++i) CHECK(flat.data()[i] == doctest::Approx(4.0));

    check_grads([&] { return weighted_sum(nearest_upsample2x(x), rng); }, {x});
    Tensor x2 = rand_tensor({1, 2, 4, 4}, rng);
    check_grads([&] { return weighted_sum(avg_pool2x2(x2), rng); }, {x2});
    check_grads([&] { return weighted_sum(bilinear_resize(x2, 3, 7), rng); }, {x2});
}

TEST_CASE("space_to_depth2 / depth_to_space2 are inverse layouts") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor s = space_to_depth2(x);
    CHECK(s.shape() == Shape{1, 4, 1, 1});
    CHECK(s.data()[0] == 1.0f);  // (0,0)
    CHECK(s.data()[1] == 2.0f);  // (0,1)
    CHECK(s.data()[2] == 3.0f);  // (1,0)
    CHECK(s.data()[3] == 4.0f);  // (1,1)
    Tensor back = depth_to_space2(s);
    for (int i = 0; i < 4; ++i) CHECK(back.data()[i] == x.data()[i]);

    Rng rng = Rng::substream(11, "s2d");
    Tensor y = rand_tensor({2, 3, 4, 6}, rng);
    Tensor rt = depth_to_space2(space_to_depth2(y));
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(rt.data()[i] == y.data()[i]);

    check_grads([&] { return weighted_sum(space_to_depth2(y), rng); }, {y});
    Tensor z = rand_tensor({1, 8, 2, 3}, rng);
    check_grads([&] { return weighted_sum(depth_to_space2(z), rng); }, {z});
}

TEST_CASE("group_norm normalizes per (sample, group)") {
    Rng rng = Rng::substream(11, "gn");
    const int B = 2, C = 4, H = 3, W = 3, G = 2;
    Tensor x = rand_tensor({B, C, H, W}, rng, -3.0f, 3.0f);
    Tensor gamma = Tensor::full({C}, 1.0f);
    Tensor beta = Tensor::zeros({C});
    Tensor y = group_norm(x, G, gamma, beta);

    const int cs = C / G;
    for (int b = 0; b < B; ++b)
        for (int g = 0; g < G; ++g) {
            double mean = 0.0, var = 0.0;
            const int n = cs * H * W;
            for (int c = 0; c < cs; ++c)
                for (int i = 0; i < H * W; ++i) mean += y.data()[((b * C + g * cs + c) * H * W) + i];
            mean /= n;
            for (int c = 0; c < cs; ++c)
                for (int i = 0; i < H * W; ++i) {
                    const double d = y.data()[((b * C + g * cs + c) * H * W) + i] - mean;
                    var += d * d;
                }
            var /= n;
            CHECK(mean == doctest::Approx(0.0).epsilon(1e-4));
            CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
        }

    // affine shifts and scales per channel
    Tensor gamma2 = Tensor::from_data({C}, {2, 3, 4, 5});
    Tensor beta2 = Tensor::from_data({C}, {1, -1, 0, 2});
    Tensor y2 = group_norm(x, G, gamma2, beta2);
    for (int i = 0; i < H * W; ++i)
        CHECK(y2.data()[i] == doctest::Approx(y.data()[i] * 2.0 + 1.0).epsilon(1e-5));

    CHECK_THROWS(group_norm(x, 3, gamma, beta));

    Tensor gx = rand_tensor({2, 4, 2, 3}, rng);
    Tensor gg = rand_tensor({4}, rng, 0.5f, 1.5f);
    Tensor gb = rand_tensor({4}, rng);
    check_grads([&] { return weighted_sum(group_norm(gx, 2, gg, gb), rng); }, {gx, gg, gb}, 1e-2f, 3e-2f, 4e-3f);
}

TEST_CASE("spatial_norm equals per-channel group_norm with identity affine") {
    Rng rng = Rng::substream(11, "sn");
    Tensor x = rand_tensor({2, 3, 4, 5}, rng, -2.0f, 2.0f);
    Tensor y = spatial_norm(x);
    Tensor ref = group_norm(x, 3, Tensor::full({3}, 1.0f), Tensor::zeros({3}));
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-5));

    check_grads([&] { return weighted_sum(spatial_norm(x), rng); }, {x}, 1e-2f, 3e-2f, 4e-3f);
}

TEST_CASE("batch_norm train and eval") {
    Rng rng = Rng::substream(11, "bn");
    const int B = 3, C = 2, H = 2, W = 4;
    Tensor x = rand_tensor({B, C, H, W}, rng, -2.0f, 2.0f);
    Tensor gamma = Tensor::full({C}, 1.0f);
    Tensor beta = Tensor::zeros({C});
    std::vector<float> mu, var;
    Tensor y = batch_norm_train(x, gamma, beta, 1e-5f, &mu, &var);
    REQUIRE(mu.size() == static_cast<size_t>(C));

    for (int c = 0; c < C; ++c) {
        double m = 0.0;
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < H * W; ++i) m += x.data()[(b * C + c) * H * W + i];
        m /= B * H * W;
        CHECK(mu[c] == doctest::Approx(m).epsilon(1e-5));
        double om = 0.0;
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < H * W; ++i) om += y.data()[(b * C + c) * H * W + i];
        CHECK(om / (B * H * W) == doctest::Approx(0.0).epsilon(1e-4));
    }

    Tensor rm = Tensor::from_data({C}, std::vector<float>(mu));
    Tensor rv = Tensor::from_data({C}, std::vector<float>(var));
    Tensor ye = batch_norm_eval(x, gamma, beta, rm, rv, 1e-5f);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(ye.data()[i] == doctest::Approx(y.data()[i]).epsilon(1e-4));

    Tensor gg = rand_tensor({C}, rng, 0.5f, 1.5f);
    Tensor gb = rand_tensor({C}, rng);
    check_grads([&] {
        return weighted_sum(batch_norm_train(x, gg, gb, 1e-5f, nullptr, nullptr), rng);
    }, {x, gg, gb}, 1e-2f, 3e-2f, 4e-3f);
    check_grads([&] { return weighted_sum(batch_norm_eval(x, gg, gb, rm, rv, 1e-5f), rng); },
                {x, gg, gb});
}

TEST_CASE("embedding gathers rows and accumulates repeated ids") {
    Tensor table = Tensor::from_data({3, 2}, {10, 11, 20, 21, 30, 31});
    Tensor out = embedding(table, {2, 0, 2});
    CHECK(out.shape() == Shape{3, 2});
    CHECK(out.data()[0] == 30.0f);
    CHECK(out.data()[2] == 10.0f);
    CHECK(out.data()[5] == 31.0f);
    CHECK_THROWS(embedding(table, {3}));

    table.set_requires_grad(true);
    table.zero_grad();
    sum_all(embedding(table, {2, 0, 2})).backward();
    CHECK(table.grad()[0] == 1.0f);  // row 0 used once
    CHECK(table.grad()[2] == 0.0f);  // row 1 unused
    CHECK(table.grad()[4] == 2.0f);  // row 2 used twice
}

TEST_CASE("mse_loss value and gradient") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 2}, {1, 0, 3, 8});
    Tensor l = mse_loss(a, b);
    CHECK(l.item() == doctest::Approx((4.0 + 16.0) / 4.0));

    a.set_requires_grad(true);
    a.zero_grad();
    mse_loss(a, b).backward();
    CHECK(a.grad()[1] == doctest::Approx(2.0 * 2.0 / 4.0));
    CHECK(a.grad()[3] == doctest::Approx(2.0 * -4.0 / 4.0));

    Rng rng = Rng::substream(11, "mse");
    Tensor ga = rand_tensor({3, 4}, rng);
    Tensor gb = rand_tensor({3, 4}, rng);
    check_grads([&] { return mse_loss(ga, gb); }, {ga, gb});
}

TEST_CASE("randn is deterministic per stream with sane moments") {
    Rng r1 = Rng::substream(42, "noise");
    Rng r2 = Rng::substream(42, "noise");
    Tensor a = randn({10000}, r1);
    Tensor b = randn({10000}, r2);
    for (int i = 0; i < 100; ++i) CHECK(a.data()[i] == b.data()[i]);

    double mean = 0.0, var = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) mean += a.data()[i];
    mean /= a.numel();
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a.data()[i] - mean;
        var += d * d;
    }
    var /= a.numel();
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(0.05));

    Tensor c = randn({100}, r1, 3.0f);
    double s = 0.0;
    for (int64_t i = 0; i < c.numel(); ++i) s += c.data()[i] * c.data()[i];
    CHECK(std::sqrt(s / 100) == doctest::Approx(3.0).epsilon(0.35));
}

TEST_CASE("NoGradGuard suppresses graph recording") {
    Tensor a = Tensor::from_data({2}, {1.0f, 2.0f}, true);
    {
        NoGradGuard ng;
        Tensor y = add(a, a);
        CHECK(y.node()->parents.empty());
        CHECK_FALSE(y.requires_grad());
    }
    Tensor y = add(a, a);
    CHECK(y.node()->parents.size() == 2);
    CHECK(y.requires_grad());
}

TEST_CASE("gradient accumulates across two backward sweeps") {
    Tensor a = Tensor::from_data({2}, {1.0f, 2.0f}, true);
    a.zero_grad();
    sum_all(a).backward();
    sum_all(a).backward();
    CHECK(a.grad()[0] == 2.0f);
    CHECK(a.grad()[1] == 2.0f);
}

TEST_CASE("diamond graph gets both paths' contributions") {
    Tensor a = Tensor::from_data({1}, {3.0f}, true);
    a.zero_grad();
    Tensor y = add(mul(a, a), a);  // y = a^2 + a, dy/da = 2a + 1 = 7
    y.backward();
    CHECK(a.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("ParamStore: named init is order independent and shapes are pinned") {
    ParamStore s1(7), s2(7);
    Tensor a1 = s1.param("alpha", {4, 3}, Init::He);
    Tensor b1 = s1.param("beta", {4, 3}, Init::He);
    Tensor b2 = s2.param("beta", {4, 3}, Init::He);
    Tensor a2 = s2.param("alpha", {4, 3}, Init::He);
    for (int i = 0; i < 12; ++i) {
        CHECK(a1.data()[i] == a2.data()[i]);
        CHECK(b1.data()[i] == b2.data()[i]);
    }
    // distinct names draw differently
    bool same = true;
    for (int i = 0; i < 12; ++i) same = same && a1.data()[i] == b1.data()[i];
    CHECK_FALSE(same);

    // repeat request returns the same storage
    Tensor again = s1.param("alpha", {4, 3}, Init::He);
    CHECK(again.node() == a1.node());
    CHECK_THROWS(s1.param("alpha", {3, 4}, Init::He));

    CHECK(s1.param("z", {5}, Init::Zeros).data()[3] == 0.0f);
    CHECK(s1.param("o", {5}, Init::Ones).data()[2] == 1.0f);
    CHECK(s1.param_count() == 12 + 12 + 5 + 5);

    // parameters always require grad, even when created under the guard
    NoGradGuard ng;
    Tensor p = s2.param("gamma", {2}, Init::Zeros);
    CHECK(p.requires_grad());
}

TEST_CASE("He init variance tracks fan-in") {
    ParamStore s(123);
    Tensor w = s.param("w", {64, 32, 3, 3}, Init::He);
    const double expect = std::sqrt(2.0 / (32 * 3 * 3));
    double var = 0.0;
    for (int64_t i = 0; i < w.numel(); ++i) var += static_cast<double>(w.data()[i]) * w.data()[i];
    CHECK(std::sqrt(var / w.numel()) == doctest::Approx(expect).epsilon(0.05));
}

TEST_CASE("layers: Conv2d same padding, GroupNormLayer divisor fixup, BatchNorm2d buffers") {
    ParamStore s(9);
    Conv2d conv(s, "c", 3, 8, 3);
    Rng rng = Rng::substream(11, "layers");
    Tensor x = rand_tensor({2, 3, 6, 10}, rng);
    Tensor y = conv(x);
    CHECK(y.shape() == Shape{2, 8, 6, 10});
    Conv2d down(s, "d", 3, 8, 3, 2);
    CHECK(down(x).shape() == Shape{2, 8, 3, 5});

    GroupNormLayer gn(s, "g", 6);
    CHECK(gn.groups() == 6);
    GroupNormLayer gn2(s, "g2", 64);
    CHECK(gn2.groups() == 32);
    GroupNormLayer gn3(s, "g3", 48);
    CHECK(gn3.groups() == 24);

    BatchNorm2d bn(s, "b", 3, 0.5f);
    Tensor xb = rand_tensor({4, 3, 2, 2}, rng, 1.0f, 3.0f);
    bn(xb, true);
    const auto& rm = s.get_buffer("b.running_mean").values();
    CHECK(rm[0] > 0.3f);  // moved half-way from 0 toward a mean near 2
    Tensor ye = bn(xb, false);
    CHECK(ye.shape() == xb.shape());
}

TEST_CASE("AdamW drives a quadratic to its minimum") {
    ParamStore ps(5);
    Tensor p = ps.param("p", {4}, Init::Normal02);
    Tensor target = Tensor::from_data({4}, {1.0f, -2.0f, 0.5f, 3.0f});
    AdamWConfig cfg;
    cfg.lr = 0.1f;
    cfg.weight_decay = 0.0f;
    AdamW opt(ps, cfg);
    for (int it = 0; it < 300; ++it) {
        opt.zero_grad();
        mse_loss(p, target).backward();
        opt.step();
    }
    for (int i = 0; i < 4; ++i) CHECK(p.data()[i] == doctest::Approx(target.data()[i]).epsilon(0.02));
    CHECK(opt.step_count() == 300);
}

TEST_CASE("AdamW applies decoupled weight decay") {
    ParamStore ps(5);
    Tensor p = ps.param("p", {1}, Init::Zeros);
    p.data()[0] = 2.0f;
    AdamWConfig cfg;
    cfg.lr = 0.5f;
    cfg.weight_decay = 0.1f;
    AdamW opt(ps, cfg);
    opt.zero_grad();  // gradient identically zero
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(2.0f * (1.0f - 0.05f)));
}
