#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pam/params.hpp"

namespace pam {

// Nonnegative per-coordinate curvature estimate. Entries outside the
// coordinates it was estimated on are exactly zero.
class FisherDiag {
public:
    FisherDiag() = default;
    FisherDiag(std::vector<double> values, std::size_t n_samples);

    std::size_t dim() const { return values_.size(); }
    std::size_t n_samples() const { return n_samples_; }
    double operator[](std::size_t j) const { return values_[j]; }
    std::span<const double> values() const { return values_; }
    const std::vector<double>& raw() const { return values_; }

    // Copy with every coordinate outside `keep` zeroed.
    FisherDiag restricted(const CoordMask& keep) const;

    bool operator==(const FisherDiag&) const = default;

private:
    std::vector<double> values_;
    std::size_t n_samples_ = 0;
};

}  // namespace pam
