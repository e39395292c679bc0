#pragma once

#include <Eigen/Dense>

#include "mixopt/errors.hpp"

namespace mixopt {

/// Differentiable scalar objective on the simplex.
struct Objective {
  virtual ~Objective() = default;
  virtual int dim() const = 0;
  virtual double value(const Eigen::VectorXd& p) const = 0;
  /// Returns the value and fills grad.
  virtual double value_grad(const Eigen::VectorXd& p, Eigen::VectorXd& grad) const = 0;
  virtual bool has_hessian() const { return false; }
  virtual void hessian(const Eigen::VectorXd&, Eigen::MatrixXd&) const {
    throw Error(Error::Kind::InvalidArgument, "objective has no analytic hessian");
  }
};

/// Weighted sum of exponential-affine terms,
///   F(p) = sum_i w_i * (c_i + exp(a_i . p)).
/// Convex; used both for ground-truth landscapes and fitted surrogates.
class LogLinearAggregate : public Objective {
 public:
  LogLinearAggregate(Eigen::VectorXd weights, Eigen::VectorXd offsets, Eigen::MatrixXd slopes)
      : w_(std::move(weights)), c_(std::move(offsets)), a_(std::move(slopes)) {
    if (w_.size() != c_.size() || a_.rows() != w_.size()) {
      throw Error(Error::Kind::DimensionMismatch, "log-linear aggregate shape mismatch");
    }
  }

  int dim() const override { return static_cast<int>(a_.cols()); }
  int terms() const { return static_cast<int>(w_.size()); }
  const Eigen::MatrixXd& slopes() const { return a_; }
  const Eigen::VectorXd& offsets() const { return c_; }
  const Eigen::VectorXd& weights() const { return w_; }

  double value(const Eigen::VectorXd& p) const override {
    const Eigen::VectorXd e = (a_ * p).array().exp();
    return w_.dot(c_ + e);
  }

  double value_grad(const Eigen::VectorXd& p, Eigen::VectorXd& grad) const override {
    const Eigen::VectorXd e = (a_ * p).array().exp();
    grad = a_.transpose() * (w_.array() * e.array()).matrix();
    return w_.dot(c_ + e);
  }

  bool has_hessian() const override { return true; }

  void hessian(const Eigen::VectorXd& p, Eigen::MatrixXd& h) const override {
    const Eigen::VectorXd e = (a_ * p).array().exp();
    h.setZero(dim(), dim());
    for (int i = 0; i < terms(); ++i) {
      h.noalias() += w_(i) * e(i) * a_.row(i).transpose() * a_.row(i);
    }
  }

  /// Objective without the constant offsets: F(p) - sum_i w_i c_i.
  double value_no_offset(const Eigen::VectorXd& p) const {
    const Eigen::VectorXd e = (a_ * p).array().exp();
    return w_.dot(e);
  }

 private:
  Eigen::VectorXd w_;
  Eigen::VectorXd c_;
  Eigen::MatrixXd a_;
};

}  // namespace mixopt
