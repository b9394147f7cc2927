#include "ppaml/metrics.hpp"

#include <string>

#include "ppaml/error.hpp"

namespace ppaml {

namespace {
double ratio(std::size_t num, std::size_t den) noexcept {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
} // namespace

double Confusion::accuracy() const noexcept { return ratio(tp + tn, total()); }
double Confusion::precision() const noexcept { return ratio(tp, tp + fp); }
double Confusion::recall() const noexcept { return ratio(tp, tp + fn); }

double Confusion::f1() const noexcept {
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

Confusion confusion(const std::vector<bool>& truth, const std::vector<bool>& predicted) {
    if (truth.size() != predicted.size()) {
        fail(Errc::LengthMismatch, std::to_string(truth.size()) + " labels vs " + std::to_string(predicted.size()) +
                                       " predictions");
    }
    if (truth.empty()) fail(Errc::LengthMismatch, "no labels");
    Confusion c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i]) {
            (predicted[i] ? c.tp : c.fn)++;
        } else {
            (predicted[i] ? c.fp : c.tn)++;
        }
    }
    return c;
}

} // namespace ppaml
