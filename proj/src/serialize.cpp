#include "apideob/serialize.hpp"

#include "apideob/listing.hpp"
#include "json_io.hpp"

namespace apideob {

using nlohmann::json;

namespace detail {

json matrix_to_json(const Matrix& m) {
  json j = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    j.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return j;
}

Matrix matrix_from_json(const json& j, std::size_t rows, std::size_t cols) {
  if (!j.is_array() || j.size() != rows) throw ValidationError("matrix: expected " +
                                                               std::to_string(rows) + " rows");
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& row = j[r];
    if (!row.is_array() || row.size() != cols)
      throw ValidationError("matrix: expected " + std::to_string(cols) + " columns");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = row[c].get<double>();
  }
  return m;
}

json to_json(const HmmParams& p) {
  return {{"K", p.K},
          {"W_total", p.W_total},
          {"pi", p.pi},
          {"A", matrix_to_json(p.A)},
          {"B", matrix_to_json(p.B)},
          {"train_loglik_trace", p.train_loglik_trace}};
}

HmmParams hmm_from_json(const json& j) {
  HmmParams p;
  p.K = j.at("K").get<std::size_t>();
  p.W_total = j.at("W_total").get<std::size_t>();
  p.pi = j.at("pi").get<std::vector<double>>();
  p.A = matrix_from_json(j.at("A"), p.K, p.K);
  p.B = matrix_from_json(j.at("B"), p.K, p.W_total);
  p.train_loglik_trace = j.value("train_loglik_trace", std::vector<double>{});
  p.validate();
  return p;
}

json to_json(const MlrModel& m) {
  return {{"classes", m.classes},   {"mean", m.mean},
          {"stddev", m.stddev},     {"weights", matrix_to_json(m.weights)},
          {"epochs", m.epochs},     {"loss_trace", m.loss_trace}};
}

MlrModel mlr_from_json(const json& j) {
  MlrModel m;
  m.classes = j.at("classes").get<std::vector<std::string>>();
  m.mean = j.at("mean").get<std::vector<double>>();
  m.stddev = j.at("stddev").get<std::vector<double>>();
  m.weights = matrix_from_json(j.at("weights"), m.mean.size() + 1, m.classes.size());
  m.epochs = j.value("epochs", std::size_t{0});
  m.loss_trace = j.value("loss_trace", std::vector<double>{});
  m.validate();
  return m;
}

json to_json(const BowSvd& s) {
  return {{"vocab_size", s.vocab_size()},
          {"requested", s.requested()},
          {"singular_values", s.singular_values()},
          {"basis", matrix_to_json(s.basis())}};
}

BowSvd svd_from_json(const json& j) {
  const auto n = j.at("vocab_size").get<std::size_t>();
  const auto req = j.at("requested").get<std::size_t>();
  auto sv = j.at("singular_values").get<std::vector<double>>();
  auto basis = matrix_from_json(j.at("basis"), n, sv.size());
  return BowSvd(n, req, std::move(basis), std::move(sv));
}

}  // namespace detail

namespace {

template <class F>
auto parse_with(std::string_view text, const char* what, F&& f) {
  try {
    return f(json::parse(text));
  } catch (const json::exception& e) {
    throw ParseError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

std::string hmm_to_json(const HmmParams& p) { return detail::to_json(p).dump(); }
HmmParams hmm_from_json(std::string_view text) {
  return parse_with(text, "hmm", [](const json& j) { return detail::hmm_from_json(j); });
}

std::string mlr_to_json(const MlrModel& m) { return detail::to_json(m).dump(); }
MlrModel mlr_from_json(std::string_view text) {
  return parse_with(text, "mlr", [](const json& j) { return detail::mlr_from_json(j); });
}

std::string svd_to_json(const BowSvd& s) { return detail::to_json(s).dump(); }
BowSvd svd_from_json(std::string_view text) {
  return parse_with(text, "svd", [](const json& j) { return detail::svd_from_json(j); });
}

}  // namespace apideob
