#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "ditl/tensor.hpp"

using namespace ditl;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("shape bookkeeping and scalar access") {
    Tensor t(Shape{2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(t.rank() == 3);
    CHECK(t[0] == 0.0);

    Tensor s = Tensor::scalar(7.5);
    CHECK(s.rank() == 0);
    CHECK(s.numel() == 1);
    CHECK(s.item() == 7.5);

    CHECK_THROWS_AS(Tensor(Shape{2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(t.item(), std::invalid_argument);
    CHECK_THROWS_AS(Tensor(Shape{3}, std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("finiteness detection") {
    Tensor t = Tensor::full(Shape{4}, 1.0);
    CHECK(t.all_finite());
    t[2] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
    t[2] = std::numeric_limits<double>::infinity();
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("binary round trip preserves shape and bits") {
    auto path = (std::filesystem::temp_directory_path() / "ditl_tensor_rt.t64").string();
    Tensor t(Shape{3, 2});
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = 0.1 * static_cast<double>(i) - 0.25;
    t[5] = 1.0 / 3.0;
    save_tensor(path, t);
    Tensor u = load_tensor(path);
    CHECK(u.shape() == t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(u[i] == t[i]);

    Tensor s = Tensor::scalar(42.0);
    save_tensor(path, s);
    CHECK(load_tensor(path).item() == 42.0);
    std::remove(path.c_str());

    CHECK_THROWS(load_tensor("/nonexistent/dir/x.t64"));
}

TEST_SUITE_END();
