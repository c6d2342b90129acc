#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "qpt/channels.hpp"
#include "qpt/measurements.hpp"
#include "qpt/reconstruct.hpp"
#include "qpt/types.hpp"

namespace qpt {

using Json = nlohmann::json;

/// {rows, cols, re, im} with entries in row-major order.
inline Json matrix_to_json(const ComplexMatrix& m) {
  Json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  Json re = Json::array(), im = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      re.push_back(m(r, c).real());
      im.push_back(m(r, c).imag());
    }
  j["re"] = std::move(re);
  j["im"] = std::move(im);
  return j;
}

inline ComplexMatrix matrix_from_json(const Json& j) {
  const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
  const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
  const auto& re = j.at("re");
  const auto& im = j.at("im");
  if (static_cast<Eigen::Index>(re.size()) != rows * cols ||
      static_cast<Eigen::Index>(im.size()) != rows * cols)
    throw DimensionError("matrix_from_json: entry count mismatch");
  ComplexMatrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      const std::size_t k = static_cast<std::size_t>(r * cols + c);
      m(r, c) = Complex(re[k].get<double>(), im[k].get<double>());
    }
  return m;
}

struct ChannelMeta {
  std::string kind = "unknown";
  std::uint64_t seed = 0;
  Eigen::Index rank = 0;
};

inline Json channel_to_json(const QuantumChannel& t,
                            const ChannelMeta& meta = {}) {
  Json j;
  j["dim"] = t.dim;
  j["choi"] = matrix_to_json(t.choi.matrix());
  j["meta"] = {{"kind", meta.kind}, {"seed", meta.seed}, {"rank", meta.rank}};
  return j;
}

inline QuantumChannel channel_from_json(const Json& j) {
  QuantumChannel t;
  t.dim = j.at("dim").get<Eigen::Index>();
  t.choi = HermitianOperator(matrix_from_json(j.at("choi")));
  return t;
}

inline Json state_to_json(const StateVector& psi) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < psi.dim(); ++i)
    arr.push_back(Json::array(
        {psi.amplitudes()(i).real(), psi.amplitudes()(i).imag()}));
  return arr;
}

inline StateVector state_from_json(const Json& j) {
  ComplexVector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i)
    v(static_cast<Eigen::Index>(i)) =
        Complex(j[i][0].get<double>(), j[i][1].get<double>());
  return StateVector(std::move(v));
}

inline Json ensemble_to_json(const MeasurementEnsemble& e) {
  Json j;
  j["n"] = e.n;
  j["kind"] = to_string(e.kind);
  j["seed"] = e.seed;
  j["A0"] = matrix_to_json(e.base_observable.matrix());
  Json settings = Json::array();
  for (const auto& s : e.settings)
    settings.push_back({{"psi", state_to_json(s.psi)},
                        {"observable", matrix_to_json(s.observable.matrix())}});
  j["settings"] = std::move(settings);
  return j;
}

inline MeasurementEnsemble ensemble_from_json(const Json& j) {
  MeasurementEnsemble e;
  e.n = j.at("n").get<Eigen::Index>();
  const std::string kind = j.at("kind").get<std::string>();
  e.kind = kind == "pauli"     ? EnsembleKind::Pauli
           : kind == "circuit" ? EnsembleKind::Circuit
                               : EnsembleKind::Generic;
  e.seed = j.at("seed").get<std::uint64_t>();
  e.base_observable = HermitianOperator(matrix_from_json(j.at("A0")));
  for (const auto& s : j.at("settings"))
    e.settings.push_back({state_from_json(s.at("psi")),
                          HermitianOperator(matrix_from_json(s.at("observable")))});
  return e;
}

/// CSV with (index, value) rows; the sidecar records noise strength and seed.
inline void write_measurements_csv(const std::string& path,
                                   const MeasurementVector& y,
                                   std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw Error("write_measurements_csv: cannot open " + path);
  out << "index,value\n";
  char buf[64];
  for (Eigen::Index i = 0; i < y.values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g\n", static_cast<long long>(i),
                  y.values(i));
    out << buf;
  }
  Json sidecar = {{"noise_strength", y.noise_strength}, {"seed", seed}};
  std::ofstream side(path + ".json");
  side << sidecar.dump(2) << "\n";
}

inline MeasurementVector read_measurements_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("read_measurements_csv: cannot open " + path);
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> vals;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    vals.push_back(std::stod(line.substr(comma + 1)));
  }
  MeasurementVector y;
  y.values = Eigen::Map<RealVector>(vals.data(),
                                    static_cast<Eigen::Index>(vals.size()));
  std::ifstream side(path + ".json");
  if (side) {
    Json sidecar;
    side >> sidecar;
    y.noise_strength = sidecar.value("noise_strength", 0.0);
  }
  return y;
}

inline Json result_to_json(const ReconstructionResult& r,
                           std::optional<double> error_vs_truth = {}) {
  Json j;
  j["method"] = to_string(r.method);
  j["eta"] = r.eta;
  j["status"] = to_string(r.status);
  j["objective"] = r.objective;
  j["residual"] = r.residual;
  if (error_vs_truth) j["error_vs_truth"] = *error_vs_truth;
  j["wall_ms"] = r.wall_ms;
  j["channel"] = matrix_to_json(r.choi);
  return j;
}

inline Json diagnostic_to_json(const std::string& quantity, Eigen::Index n,
                               const Json& params, double estimate,
                               double stderr_, long samples,
                               std::uint64_t seed) {
  return Json{{"quantity", quantity}, {"n", n},
              {"params", params},     {"estimate", estimate},
              {"stderr", stderr_},    {"samples", samples},
              {"seed", seed}};
}

}  // namespace qpt
