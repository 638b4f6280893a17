#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "resmpc/types.hpp"

namespace resmpc {

/// 99% quantile of the chi-square distribution with 3 degrees of freedom.
inline constexpr double kChiSquare3Q99 = 11.345;

struct KalmanConfig {
  Mat Q_f;
  Mat R_meas;
  Mat P_init;
  double t_sample = 0.01;
  double T = kChiSquare3Q99;

  void validate() const;
};

class DetectorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed-capacity ring buffer of detection flags, oldest overwritten first.
class FlagHistory {
 public:
  explicit FlagHistory(std::size_t capacity = 1);

  void push(bool flag);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return buf_.size(); }
  /// k = 0 is the most recent flag.
  bool recent(std::size_t k) const;

 private:
  std::vector<char> buf_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

struct DetectorState {
  Vec x_hat;
  Mat P;
  Vec residual;
  double stat = 0.0;
  FlagHistory flags;
  double omega_hat = 0.0;

  static DetectorState initial(const Vec& x0, const KalmanConfig& config, std::size_t history);
};

struct KfOutput {
  Vec residual;
  double stat = 0.0;
};

/// One predict/update cycle with C = I. The prediction uses the commanded
/// input. Throws DetectorError when the innovation covariance is singular.
KfOutput kf_step(DetectorState& state, const Vec& u, const Vec& y, const Mat& A_s, const Mat& B_s,
                 const KalmanConfig& config);

/// True iff stat > T.
bool test_attack(double stat, double T);

/// Share of raised flags among the most recent min(window, size) entries.
double estimate_intensity(const FlagHistory& history, std::size_t window);

/// Filter + test + moving average, advanced once per detector sample.
class Detector {
 public:
  Detector(Mat A_s, Mat B_s, KalmanConfig config, std::size_t window, const Vec& x0);

  struct Sample {
    Vec residual;
    double stat = 0.0;
    bool flag = false;
    double omega_hat = 0.0;
  };

  Sample step(const Vec& u, const Vec& y);
  const DetectorState& state() const { return state_; }
  std::size_t window() const { return window_; }

 private:
  Mat A_s_;
  Mat B_s_;
  KalmanConfig config_;
  std::size_t window_;
  DetectorState state_;
};

}  // namespace resmpc
