#pragma once

#include <Eigen/Dense>
#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace deforge {

using Index = Eigen::Index;

template <class Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
using ArrayXX = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Uniform tensor-product grid, optionally with a uniform time axis
// (time_points == 0 means static). Periodic axes exclude the right endpoint,
// non-periodic axes include it; the time axis always includes both endpoints.
template <class Scalar = double>
struct GridT {
  int dims = 1;
  std::array<Index, 3> points{1, 1, 1};
  std::array<Scalar, 3> extents{Scalar(1), Scalar(1), Scalar(1)};
  std::array<bool, 3> periodic{true, true, true};
  Index time_points = 0;
  Scalar duration = Scalar(0);

  void validate() const {
    if (dims < 1 || dims > 3) throw std::invalid_argument("grid: dims must be 1..3");
    for (int j = 0; j < dims; ++j) {
      if (points[j] < 2) throw std::invalid_argument("grid: need at least 2 points per axis");
      if (!(extents[j] > Scalar(0))) throw std::invalid_argument("grid: extents must be positive");
    }
    for (int j = dims; j < 3; ++j)
      if (points[j] != 1) throw std::invalid_argument("grid: unused axes must have 1 point");
    if (time_points < 0) throw std::invalid_argument("grid: negative time_points");
    if (time_points > 0 && !(duration > Scalar(0)))
      throw std::invalid_argument("grid: duration must be positive with a time axis");
  }
};

using Grid = GridT<double>;

template <class Scalar>
GridT<Scalar> grid_1d(Index n, Scalar extent, bool periodic = true) {
  GridT<Scalar> g;
  g.dims = 1;
  g.points = {n, 1, 1};
  g.extents = {extent, Scalar(1), Scalar(1)};
  g.periodic = {periodic, true, true};
  g.validate();
  return g;
}

template <class Scalar>
GridT<Scalar> grid_2d(Index n0, Index n1, Scalar l0, Scalar l1, bool periodic = true) {
  GridT<Scalar> g;
  g.dims = 2;
  g.points = {n0, n1, 1};
  g.extents = {l0, l1, Scalar(1)};
  g.periodic = {periodic, periodic, true};
  g.validate();
  return g;
}

template <class Scalar>
GridT<Scalar> grid_3d(Index n0, Index n1, Index n2, Scalar l0, Scalar l1, Scalar l2,
                      bool periodic = true) {
  GridT<Scalar> g;
  g.dims = 3;
  g.points = {n0, n1, n2};
  g.extents = {l0, l1, l2};
  g.periodic = {periodic, periodic, periodic};
  g.validate();
  return g;
}

template <class Scalar>
GridT<Scalar> with_time(GridT<Scalar> g, Index time_points, Scalar duration) {
  g.time_points = time_points;
  g.duration = duration;
  g.validate();
  if (time_points < 1) throw std::invalid_argument("with_time: need at least 1 time point");
  return g;
}

template <class Scalar>
Scalar spacing(const GridT<Scalar>& g, int dim) {
  if (dim < 0 || dim >= g.dims) throw std::invalid_argument("spacing: dim out of range");
  const Index n = g.points[dim];
  return g.periodic[dim] ? g.extents[dim] / Scalar(n) : g.extents[dim] / Scalar(n - 1);
}

template <class Scalar>
Scalar time_step(const GridT<Scalar>& g) {
  if (g.time_points < 2) throw std::invalid_argument("time_step: grid has no time axis");
  return g.duration / Scalar(g.time_points - 1);
}

template <class Scalar>
Index spatial_size(const GridT<Scalar>& g) {
  return g.points[0] * g.points[1] * g.points[2];
}

// Number of stored time slabs (static fields hold a single slab).
template <class Scalar>
Index time_slabs(const GridT<Scalar>& g) {
  return g.time_points > 0 ? g.time_points : 1;
}

template <class Scalar>
ArrayX<Scalar> coordinates(const GridT<Scalar>& g, int dim) {
  const Scalar h = spacing(g, dim);
  ArrayX<Scalar> x(g.points[dim]);
  for (Index i = 0; i < g.points[dim]; ++i) x[i] = Scalar(i) * h;
  return x;
}

template <class Scalar>
ArrayX<Scalar> times(const GridT<Scalar>& g) {
  const Scalar dt = time_step(g);
  ArrayX<Scalar> t(g.time_points);
  for (Index i = 0; i < g.time_points; ++i) t[i] = Scalar(i) * dt;
  return t;
}

template <class Scalar>
bool same_layout(const GridT<Scalar>& a, const GridT<Scalar>& b) {
  return a.dims == b.dims && a.points == b.points && a.time_points == b.time_points;
}

// Multi-component space(-time) field. Storage is one flat array, row-major in
// [component][time][x0][x1][x2]; each (component, time) spatial slab is
// contiguous.
template <class Scalar = double>
struct FieldT {
  GridT<Scalar> grid;
  int components = 1;
  std::string quantity = "state";
  ArrayX<Scalar> data;

  static FieldT zeros(const GridT<Scalar>& g, int components, std::string quantity = "state") {
    g.validate();
    if (components < 1) throw std::invalid_argument("field: components must be positive");
    FieldT f;
    f.grid = g;
    f.components = components;
    f.quantity = std::move(quantity);
    f.data = ArrayX<Scalar>::Zero(Index(components) * time_slabs(g) * spatial_size(g));
    return f;
  }

  Index slab_offset(int c, Index t) const {
    return (Index(c) * time_slabs(grid) + t) * spatial_size(grid);
  }

  auto slab(int c, Index t = 0) {
    return Eigen::Map<ArrayX<Scalar>>(data.data() + slab_offset(c, t), spatial_size(grid));
  }
  auto slab(int c, Index t = 0) const {
    return Eigen::Map<const ArrayX<Scalar>>(data.data() + slab_offset(c, t),
                                            spatial_size(grid));
  }

  Index flat_index(int c, Index t, Index i0, Index i1 = 0, Index i2 = 0) const {
    return slab_offset(c, t) + (i0 * grid.points[1] + i1) * grid.points[2] + i2;
  }

  Scalar& at(int c, Index t, Index i0, Index i1 = 0, Index i2 = 0) {
    return data[flat_index(c, t, i0, i1, i2)];
  }
  Scalar at(int c, Index t, Index i0, Index i1 = 0, Index i2 = 0) const {
    return data[flat_index(c, t, i0, i1, i2)];
  }
};

using Field = FieldT<double>;

// Values of a field restricted to one grid face, all components and times,
// row-major in [component][time][remaining axes in original order].
template <class Scalar = double>
struct FaceTraceT {
  int dim = 0;
  int side = 0;  // 0 = low end, 1 = high end
  ArrayX<Scalar> data;
};

template <class Scalar = double>
struct BoundaryDataT {
  GridT<Scalar> grid;
  int components = 1;
  std::string quantity;
  std::vector<FaceTraceT<Scalar>> faces;  // ordered (dim0 lo, dim0 hi, dim1 lo, ...)
};

using BoundaryData = BoundaryDataT<double>;

template <class Scalar>
BoundaryDataT<Scalar> boundary_trace(const FieldT<Scalar>& f) {
  const auto& g = f.grid;
  BoundaryDataT<Scalar> b;
  b.grid = g;
  b.components = f.components;
  b.quantity = f.quantity;
  for (int dim = 0; dim < g.dims; ++dim) {
    const Index face_size = spatial_size(g) / g.points[dim];
    for (int side = 0; side < 2; ++side) {
      FaceTraceT<Scalar> tr;
      tr.dim = dim;
      tr.side = side;
      tr.data.resize(Index(f.components) * time_slabs(g) * face_size);
      const Index edge = side == 0 ? 0 : g.points[dim] - 1;
      Index out = 0;
      for (int c = 0; c < f.components; ++c)
        for (Index t = 0; t < time_slabs(g); ++t)
          for (Index i0 = 0; i0 < g.points[0]; ++i0) {
            if (dim == 0 && i0 != edge) continue;
            for (Index i1 = 0; i1 < g.points[1]; ++i1) {
              if (dim == 1 && i1 != edge) continue;
              for (Index i2 = 0; i2 < g.points[2]; ++i2) {
                if (dim == 2 && i2 != edge) continue;
                tr.data[out++] = f.at(c, t, i0, i1, i2);
              }
            }
          }
      b.faces.push_back(std::move(tr));
    }
  }
  return b;
}

// Evenly sampled multi-channel series; values is (steps x channels).
template <class Scalar = double>
struct TimeSeriesT {
  Scalar dt = Scalar(0);
  ArrayXX<Scalar> values;

  static TimeSeriesT zeros(Index steps, int channels, Scalar dt) {
    if (steps < 1 || channels < 1) throw std::invalid_argument("time series: empty shape");
    if (!(dt > Scalar(0))) throw std::invalid_argument("time series: dt must be positive");
    TimeSeriesT s;
    s.dt = dt;
    s.values = ArrayXX<Scalar>::Zero(steps, channels);
    return s;
  }

  Index steps() const { return values.rows(); }
  int channels() const { return int(values.cols()); }
  auto channel(int j) { return values.col(j); }
  auto channel(int j) const { return values.col(j); }
};

using TimeSeries = TimeSeriesT<double>;

enum class NormKind { l1, l2, linf };

// Mean-normalized l1/l2 and plain max norm, so values are comparable across
// resolutions.
template <class Derived>
typename Derived::Scalar norm(const Eigen::ArrayBase<Derived>& a, NormKind kind) {
  if (a.size() == 0) throw std::invalid_argument("norm: empty array");
  switch (kind) {
    case NormKind::l1:
      return a.abs().mean();
    case NormKind::l2:
      return std::sqrt(a.square().mean());
    case NormKind::linf:
      return a.abs().maxCoeff();
  }
  throw std::invalid_argument("norm: unknown kind");
}

template <class Scalar>
Scalar norm(const FieldT<Scalar>& f, NormKind kind) {
  return norm(f.data, kind);
}

template <class Scalar>
Scalar norm(const TimeSeriesT<Scalar>& s, NormKind kind) {
  return norm(s.values, kind);
}

template <class DerivedA, class DerivedB>
typename DerivedA::Scalar relative_l1(const Eigen::ArrayBase<DerivedA>& ref,
                                      const Eigen::ArrayBase<DerivedB>& approx) {
  if (ref.rows() != approx.rows() || ref.cols() != approx.cols())
    throw std::invalid_argument("relative_l1: shape mismatch");
  const auto denom = ref.abs().sum();
  if (!(denom > 0)) throw std::invalid_argument("relative_l1: zero reference");
  return (ref - approx).abs().sum() / denom;
}

template <class Scalar>
Scalar relative_l1(const FieldT<Scalar>& ref, const FieldT<Scalar>& approx) {
  if (!same_layout(ref.grid, approx.grid) || ref.components != approx.components)
    throw std::invalid_argument("relative_l1: field layout mismatch");
  return relative_l1(ref.data, approx.data);
}

template <class Scalar>
Scalar relative_l1(const TimeSeriesT<Scalar>& ref, const TimeSeriesT<Scalar>& approx) {
  return relative_l1(ref.values, approx.values);
}

}  // namespace deforge
