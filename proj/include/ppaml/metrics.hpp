#pragma once

#include <cstddef>
#include <vector>

namespace ppaml {

/// Binary confusion counts with the positive (illicit) class as `true`.
struct Confusion {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const noexcept { return tp + fp + tn + fn; }
    double accuracy() const noexcept;
    double precision() const noexcept; ///< 0 when nothing is predicted positive
    double recall() const noexcept;    ///< 0 when there are no positives
    double f1() const noexcept;        ///< 0 when precision + recall == 0
    friend bool operator==(const Confusion&, const Confusion&) = default;
};

/// Throws LengthMismatch on unequal or empty inputs.
Confusion confusion(const std::vector<bool>& truth, const std::vector<bool>& predicted);

} // namespace ppaml
