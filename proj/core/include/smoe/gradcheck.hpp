#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "smoe/params.hpp"
#include "smoe/tape.hpp"

namespace smoe {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // coordinates excluded as non-smooth
    std::string worst_param;
    std::size_t worst_index = 0;
};

// Builds the loss on the given tape, reading the current parameter values.
using LossBuilder = std::function<Tape<double>::Id(Tape<double>&)>;

// Central finite differences against the tape's analytic gradients, in f64.
// Relative error denominator is max(|analytic|, |numeric|, 1e-8). A second
// estimate at eps/2 flags non-smooth coordinates (e.g. a relu kink at 0),
// which are excluded rather than reported as failures. Set
// max_coords_per_param <= 0 to check every coordinate.
GradCheckReport grad_check(const LossBuilder& build, ParamStore<double>& params, double eps,
                           int max_coords_per_param = 0, std::uint64_t seed = 0x5eed);

}  // namespace smoe
