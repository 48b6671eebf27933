#pragma once

#include "apideob/hmm.hpp"
#include "apideob/mlr.hpp"
#include "apideob/vectorize.hpp"
#include "json.hpp"

namespace apideob::detail {

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j, std::size_t rows, std::size_t cols);

nlohmann::json to_json(const HmmParams& p);
HmmParams hmm_from_json(const nlohmann::json& j);

nlohmann::json to_json(const MlrModel& m);
MlrModel mlr_from_json(const nlohmann::json& j);

nlohmann::json to_json(const BowSvd& s);
BowSvd svd_from_json(const nlohmann::json& j);

}  // namespace apideob::detail
