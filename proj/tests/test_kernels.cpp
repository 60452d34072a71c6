#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <tuple>
#include <vector>

#include "pf/kernels.hpp"
#include "pf/rng.hpp"

using namespace pf;

namespace {

std::vector<float> random_vec(std::size_t n, Rng& rng, float scale = 1.0f) {
    std::vector<float> v(n);
    for (auto& x : v) x = scale * (2.0f * static_cast<float>(rng.uniform()) - 1.0f);
    return v;
}

// max |a-b| / max(|a|,|b|,1)
float max_rel_diff(const std::vector<float>& a, const std::vector<float>& b) {
    REQUIRE(a.size() == b.size());
    float worst = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const float denom = std::max({std::fabs(a[i]), std::fabs(b[i]), 1.0f});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

void naive_gemm_nn(int m, int n, int k, const float* a, const float* b, double* c) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += static_cast<double>(a[i * k + p]) * b[p * n + j];
            c[i * n + j] = acc;
        }
}

}  // namespace

TEST_CASE("scalar gemm variants match a 64-bit triple-loop oracle") {
    Rng rng(11);
    const int m = 7, n = 13, k = 9;
    auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
    auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
    std::vector<double> want(static_cast<std::size_t>(m) * n);
    naive_gemm_nn(m, n, k, a.data(), b.data(), want.data());

    std::vector<float> got(static_cast<std::size_t>(m) * n);
    kern::scalar::gemm_nn(m, n, k, a.data(), b.data(), got.data(), false);
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-5));

    // nt: feed b transposed, expect the same product
    std::vector<float> bt(static_cast<std::size_t>(n) * k);
    for (int p = 0; p < k; ++p)
        for (int j = 0; j < n; ++j) bt[static_cast<std::size_t>(j) * k + p] = b[p * n + j];
    std::vector<float> got_nt(got.size());
    kern::scalar::gemm_nt(m, n, k, a.data(), bt.data(), got_nt.data(), false);
    CHECK(max_rel_diff(got, got_nt) < 1e-6f);

    // tn: feed a transposed
    std::vector<float> at(static_cast<std::size_t>(k) * m);
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) at[static_cast<std::size_t>(p) * m + i] = a[i * k + p];
    std::vector<float> got_tn(got.size());
    kern::scalar::gemm_tn(m, n, k, at.data(), b.data(), got_tn.data(), false);
    CHECK(max_rel_diff(got, got_tn) < 1e-6f);
}

TEST_CASE("gemm accumulate adds on top of existing values") {
    Rng rng(12);
    const int m = 3, n = 5, k = 4;
    auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
    auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
    std::vector<float> base = random_vec(static_cast<std::size_t>(m) * n, rng);
    std::vector<float> once(base), twice(base);
    kern::scalar::gemm_nn(m, n, k, a.data(), b.data(), once.data(), true);
    kern::scalar::gemm_nn(m, n, k, a.data(), b.data(), twice.data(), true);
    kern::scalar::gemm_nn(m, n, k, a.data(), b.data(), twice.data(), true);
    for (std::size_t i = 0; i < once.size(); ++i)
        CHECK(twice[i] == doctest::Approx(2.0f * once[i] - base[i]).epsilon(1e-4));
}

#if defined(PF_HAVE_AVX2)
TEST_CASE("avx2 kernels agree with the scalar reference") {
    if (!kern::backend_supported(kern::Backend::avx2)) {
        MESSAGE("avx2 not available on this CPU; skipping");
        return;
    }
    Rng rng(21);
    // deliberately awkward sizes to cover the vector tails
    for (auto [m, n, k] : {std::tuple{1, 1, 1}, {5, 9, 7}, {8, 16, 32}, {13, 17, 19}}) {
        auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
        auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
        std::vector<float> cs(static_cast<std::size_t>(m) * n), cv(cs.size());
        kern::scalar::gemm_nn(m, n, k, a.data(), b.data(), cs.data(), false);
        kern::avx2::gemm_nn(m, n, k, a.data(), b.data(), cv.data(), false);
        CHECK(max_rel_diff(cs, cv) < 1e-5f);

        auto bt = random_vec(static_cast<std::size_t>(n) * k, rng);
        kern::scalar::gemm_nt(m, n, k, a.data(), bt.data(), cs.data(), false);
        kern::avx2::gemm_nt(m, n, k, a.data(), bt.data(), cv.data(), false);
        CHECK(max_rel_diff(cs, cv) < 1e-5f);

        auto at = random_vec(static_cast<std::size_t>(k) * m, rng);
        kern::scalar::gemm_tn(m, n, k, at.data(), b.data(), cs.data(), false);
        kern::avx2::gemm_tn(m, n, k, at.data(), b.data(), cv.data(), false);
        CHECK(max_rel_diff(cs, cv) < 1e-5f);
    }

    for (std::size_t n : {1u, 7u, 8u, 31u, 64u, 100u}) {
        auto x = random_vec(n, rng, 3.0f);
        auto y = random_vec(n, rng, 3.0f);
        std::vector<float> os(n), ov(n);

        kern::scalar::add(n, x.data(), y.data(), os.data());
        kern::avx2::add(n, x.data(), y.data(), ov.data());
        CHECK(max_rel_diff(os, ov) == 0.0f);

        kern::scalar::mul(n, x.data(), y.data(), os.data());
        kern::avx2::mul(n, x.data(), y.data(), ov.data());
        CHECK(max_rel_diff(os, ov) == 0.0f);

        kern::scalar::silu(n, x.data(), os.data());
        kern::avx2::silu(n, x.data(), ov.data());
        CHECK(max_rel_diff(os, ov) < 1e-5f);

        std::vector<float> ds(n, 0.0f), dv(n, 0.0f);
        kern::scalar::silu_backward(n, x.data(), y.data(), ds.data());
        kern::avx2::silu_backward(n, x.data(), y.data(), dv.data());
        CHECK(max_rel_diff(ds, dv) < 1e-5f);

        const float dots = kern::scalar::dot(n, x.data(), y.data());
        const float dotv = kern::avx2::dot(n, x.data(), y.data());
        CHECK(dotv == doctest::Approx(dots).epsilon(1e-5));

        const float sums = kern::scalar::sum(n, x.data());
        const float sumv = kern::avx2::sum(n, x.data());
        CHECK(sumv == doctest::Approx(sums).epsilon(1e-5));

        const float sqs = kern::scalar::sq_diff_sum(n, x.data(), y.data());
        const float sqv = kern::avx2::sq_diff_sum(n, x.data(), y.data());
        CHECK(sqv == doctest::Approx(sqs).epsilon(1e-5));
    }
}

TEST_CASE("avx2 all_finite flags NaN and Inf in any lane") {
    if (!kern::backend_supported(kern::Backend::avx2)) return;
    for (std::size_t n : {3u, 8u, 17u}) {
        std::vector<float> x(n, 1.0f);
        CHECK(kern::avx2::all_finite(n, x.data()));
        for (std::size_t pos = 0; pos < n; ++pos) {
            x.assign(n, 1.0f);
            x[pos] = std::nanf("");
            CHECK_FALSE(kern::avx2::all_finite(n, x.data()));
            x[pos] = std::numeric_limits<float>::infinity();
            CHECK_FALSE(kern::avx2::all_finite(n, x.data()));
        }
    }
}
#endif

TEST_CASE("backend selection is sticky and reports a name") {
    const auto original = kern::active_backend();
    kern::set_backend(kern::Backend::scalar);
    CHECK(kern::active_backend() == kern::Backend::scalar);
    CHECK(std::string(kern::backend_name(kern::active_backend())) == "scalar");
    kern::set_backend(original);
}
