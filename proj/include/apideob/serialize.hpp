#pragma once

#include <string>
#include <string_view>

#include "apideob/hmm.hpp"
#include "apideob/mlr.hpp"
#include "apideob/vectorize.hpp"

namespace apideob {

// Linear-space probabilities; loading validates stochasticity.
std::string hmm_to_json(const HmmParams& p);
HmmParams hmm_from_json(std::string_view text);

std::string mlr_to_json(const MlrModel& m);
MlrModel mlr_from_json(std::string_view text);

std::string svd_to_json(const BowSvd& s);
BowSvd svd_from_json(std::string_view text);

}  // namespace apideob
