#pragma once

#include <map>
#include <string>

#include "deforge/core.hpp"

namespace deforge {

enum class Family { navier_stokes, navier_cauchy, elastic_wave, bouc_wen, lorenz };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::navier_stokes: return "navier_stokes";
    case Family::navier_cauchy: return "navier_cauchy";
    case Family::elastic_wave: return "elastic_wave";
    case Family::bouc_wen: return "bouc_wen";
    case Family::lorenz: return "lorenz";
  }
  throw std::invalid_argument("family_name: unknown family");
}

inline Family family_from_string(const std::string& s) {
  if (s == "navier_stokes") return Family::navier_stokes;
  if (s == "navier_cauchy") return Family::navier_cauchy;
  if (s == "elastic_wave") return Family::elastic_wave;
  if (s == "bouc_wen") return Family::bouc_wen;
  if (s == "lorenz") return Family::lorenz;
  throw std::invalid_argument("unknown equation family: " + s);
}

template <class Scalar = double>
struct NsParamsT {
  Scalar reynolds = Scalar(100);
  bool dealias = false;
};

template <class Scalar = double>
struct SncParamsT {
  Scalar young = Scalar(1);
  Scalar poisson = Scalar(0.3);
};

// Material coefficients may be uniform scalars or prescribed fields on the
// solution grid; an empty field means the scalar applies everywhere.
template <class Scalar = double>
struct WaveParamsT {
  Scalar rho = Scalar(1);
  Scalar lambda = Scalar(1);
  Scalar mu = Scalar(1);
  FieldT<Scalar> rho_field;
  FieldT<Scalar> lambda_field;
  FieldT<Scalar> mu_field;
};

template <class Scalar = double>
struct BoucWenParamsT {
  MatrixX<Scalar> mass;      // square, one row per degree of freedom
  MatrixX<Scalar> damping;
  ArrayX<Scalar> stiffness;  // per degree of freedom
  Scalar alpha = Scalar(0.1);  // post- to pre-yield stiffness ratio
  Scalar a = Scalar(1);        // hysteresis amplitude (A in the usual notation)
  Scalar beta = Scalar(0.5);
  Scalar gamma = Scalar(0.5);
  Scalar n = Scalar(3);        // sharpness exponent
};

template <class Scalar = double>
struct LorenzParamsT {
  Scalar sigma = Scalar(10);
  Scalar rho = Scalar(28);
  Scalar beta = Scalar(8) / Scalar(3);
  Scalar x_floor = Scalar(0.5);  // minimum admitted |x| along the path
};

using NsParams = NsParamsT<double>;
using SncParams = SncParamsT<double>;
using WaveParams = WaveParamsT<double>;
using BoucWenParams = BoucWenParamsT<double>;
using LorenzParams = LorenzParamsT<double>;

// One dataset sample: the named fields/series holding the manufactured
// solution and its balanced data terms, plus the scalar parameters needed to
// re-derive everything. Maps keep keys sorted, which the writers rely on.
template <class Scalar = double>
struct SampleT {
  std::string family;
  std::map<std::string, FieldT<Scalar>> fields;
  std::map<std::string, TimeSeriesT<Scalar>> series;
  std::map<std::string, BoundaryDataT<Scalar>> boundaries;
  std::map<std::string, Scalar> params;

  Scalar param(const std::string& key) const {
    auto it = params.find(key);
    if (it == params.end()) throw std::invalid_argument("sample: missing parameter " + key);
    return it->second;
  }

  const FieldT<Scalar>& field(const std::string& key) const {
    auto it = fields.find(key);
    if (it == fields.end()) throw std::invalid_argument("sample: missing field " + key);
    return it->second;
  }

  const TimeSeriesT<Scalar>& channel_set(const std::string& key) const {
    auto it = series.find(key);
    if (it == series.end()) throw std::invalid_argument("sample: missing series " + key);
    return it->second;
  }
};

using Sample = SampleT<double>;

}  // namespace deforge
