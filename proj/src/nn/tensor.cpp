#include "fpsr/nn/tensor.hpp"

#include <algorithm>
#include <malloc.h>
#include <sstream>
#include <stdexcept>

namespace fpsr::nn {

namespace {

// Training allocates and frees many multi-megabyte buffers per step; serving them
// from fresh mmaps costs a page fault per 4 KiB on every step.
const bool kAllocatorTuned = [] {
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
    return true;
}();

}  // namespace

std::string Shape::str() const {
    std::ostringstream os;
    os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        throw std::invalid_argument("negative tensor extent " + shape.str());
    }
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape.numel()) {
        throw std::invalid_argument("tensor data size does not match shape " + shape.str());
    }
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw std::logic_error("item() on non-scalar tensor " + shape_.str());
    }
    return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
    if (shape.numel() != data_.size()) {
        throw std::invalid_argument("reshape " + shape_.str() + " -> " + shape.str());
    }
    return Tensor(shape, data_);
}

}  // namespace fpsr::nn
