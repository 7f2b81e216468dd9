#include "ditl/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace ditl {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) {
        if (e < 1) throw std::invalid_argument("tensor extent must be >= 1, got " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size()))
        throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str(shape_));
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
}

Tensor Tensor::scalar(double value) {
    Tensor t{Shape{}};
    t.data_[0] = value;
    return t;
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape_));
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor::min_value() const {
    if (data_.empty()) throw std::invalid_argument("min of empty tensor");
    double m = data_[0];
    for (double v : data_) m = std::min(m, v);
    return m;
}

double Tensor::max_value() const {
    if (data_.empty()) throw std::invalid_argument("max of empty tensor");
    double m = data_[0];
    for (double v : data_) m = std::max(m, v);
    return m;
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

namespace {

constexpr char kMagic[8] = {'D', 'T', 'L', 'T', 'N', 'S', 'R', '\0'};

void write_u64_le(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64_le(std::ifstream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(kMagic, 8);
    write_u64_le(out, static_cast<std::uint64_t>(t.rank()));
    for (auto e : t.shape()) write_u64_le(out, static_cast<std::uint64_t>(e));
    // double payload little-endian; this code targets little-endian hosts
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
    if (!out) throw std::runtime_error("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("not a tensor file (bad magic): " + path);
    std::uint64_t rank = read_u64_le(in);
    if (rank > 16) throw std::runtime_error("implausible tensor rank in " + path);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::int64_t>(read_u64_le(in));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
    if (!in) throw std::runtime_error("truncated tensor file: " + path);
    return t;
}

}  // namespace ditl
