#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfrl/core/error.hpp"
#include "cfrl/core/random.hpp"

namespace cfrl::nn {

/// Row-major dense matrix. Rows index the batch, columns the features.
using Tensor2 = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// A named trainable parameter and its gradient accumulator.
struct ParamRef {
  std::string name;
  Tensor2* value;
  Tensor2* grad;
};

inline void check_cols(const Tensor2& x, Eigen::Index cols, const char* what) {
  if (x.cols() != cols) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(cols) +
                         " columns, got " + std::to_string(x.cols()));
  }
}

inline void check_same_shape(const Tensor2& a, const Tensor2& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) +
                         "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                         "x" + std::to_string(b.cols()));
  }
}

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline bool all_finite(const Tensor2& x) { return x.allFinite(); }

inline Tensor2 randn(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev = 1.0) {
  Tensor2 out(rows, cols);
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = dist(rng);
  return out;
}

/// Horizontal concatenation of equally tall blocks.
inline Tensor2 hcat(std::initializer_list<const Tensor2*> blocks) {
  Eigen::Index rows = -1, cols = 0;
  for (const Tensor2* b : blocks) {
    if (b->cols() == 0) continue;
    if (rows < 0) rows = b->rows();
    if (b->rows() != rows) throw DimensionError("hcat: row count mismatch");
    cols += b->cols();
  }
  Tensor2 out(rows < 0 ? 0 : rows, cols);
  Eigen::Index at = 0;
  for (const Tensor2* b : blocks) {
    if (b->cols() == 0) continue;
    out.middleCols(at, b->cols()) = *b;
    at += b->cols();
  }
  return out;
}

inline Tensor2 row_of(const Vector& v) { return v.transpose(); }

inline nlohmann::json tensor_to_json(const Tensor2& t) {
  std::vector<double> data(t.data(), t.data() + t.size());
  return {{"rows", t.rows()}, {"cols", t.cols()}, {"data", std::move(data)}};
}

inline Tensor2 tensor_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw IoError("tensor payload length does not match its shape");
  }
  Tensor2 t(rows, cols);
  std::copy(data.begin(), data.end(), t.data());
  return t;
}

/// Per-column affine standardization frozen from a data sample.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const Tensor2& x, double floor = 1e-6) {
    Standardizer s;
    s.mean = x.colwise().mean();
    s.scale.resize(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double var = (x.col(c).array() - s.mean(c)).square().mean();
      s.scale(c) = std::max(std::sqrt(var), floor);
    }
    return s;
  }

  static Standardizer identity(Eigen::Index dim) {
    return {Eigen::RowVectorXd::Zero(dim), Eigen::RowVectorXd::Ones(dim)};
  }

  Eigen::Index dim() const { return mean.size(); }

  Tensor2 apply(const Tensor2& x) const {
    check_cols(x, dim(), "Standardizer::apply");
    return ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix();
  }

  Tensor2 invert(const Tensor2& z) const {
    check_cols(z, dim(), "Standardizer::invert");
    return ((z.array().rowwise() * scale.array()).rowwise() + mean.array()).matrix();
  }

  nlohmann::json to_json() const {
    return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
            {"scale", std::vector<double>(scale.data(), scale.data() + scale.size())}};
  }

  static Standardizer from_json(const nlohmann::json& j) {
    const auto m = j.at("mean").get<std::vector<double>>();
    const auto s = j.at("scale").get<std::vector<double>>();
    Standardizer out;
    out.mean = Eigen::Map<const Eigen::RowVectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    out.scale = Eigen::Map<const Eigen::RowVectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    return out;
  }
};

}  // namespace cfrl::nn
