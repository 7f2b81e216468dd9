#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ditl {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense float64 tensor, row-major, innermost extent last. Rank 0 is a scalar
// holding one element. Extents must be >= 1.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    const Shape& shape() const { return shape_; }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    std::int64_t extent(std::size_t axis) const { return shape_.at(axis); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Scalar access for rank-0 tensors.
    double item() const;

    // Flat offsets for the common ranks used by the model zoo.
    std::int64_t at3(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return (x * shape_[1] + y) * shape_[2] + z;
    }
    std::int64_t at4(std::int64_t c, std::int64_t x, std::int64_t y, std::int64_t z) const {
        return ((c * shape_[1] + x) * shape_[2] + y) * shape_[3] + z;
    }

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    double min_value() const;
    double max_value() const;
    double sum() const;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Self-describing binary format: 8 magic bytes, rank and extents as 64-bit
// little-endian unsigned integers, then the float64 payload in linear order.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace ditl
