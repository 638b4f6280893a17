#include "resmpc/detect.hpp"

#include <algorithm>

#include <Eigen/Eigenvalues>

namespace resmpc {
namespace {

void require_sym(const Mat& M, Index n, bool strict, const char* name) {
  if (M.rows() != n || M.cols() != n) throw std::invalid_argument(std::string(name) + " must be n x n");
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, M.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument(std::string(name) + " must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(M, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  if (strict ? !(lo > 0.0) : lo < -1e-12) {
    throw std::invalid_argument(std::string(name) + (strict ? " must be positive definite" : " must be PSD"));
  }
}

}  // namespace

void KalmanConfig::validate() const {
  const Index n = P_init.rows();
  require_sym(Q_f, n, false, "Q_f");
  require_sym(R_meas, n, true, "R_meas");
  require_sym(P_init, n, true, "P_init");
  if (!(t_sample > 0.0)) throw std::invalid_argument("t_sample must be positive");
  if (!(T > 0.0)) throw std::invalid_argument("detection threshold T must be positive");
}

FlagHistory::FlagHistory(std::size_t capacity) : buf_(std::max<std::size_t>(capacity, 1), 0) {}

void FlagHistory::push(bool flag) {
  buf_[head_] = flag ? 1 : 0;
  head_ = (head_ + 1) % buf_.size();
  size_ = std::min(size_ + 1, buf_.size());
}

bool FlagHistory::recent(std::size_t k) const {
  if (k >= size_) throw std::out_of_range("FlagHistory::recent");
  return buf_[(head_ + buf_.size() - 1 - k) % buf_.size()] != 0;
}

DetectorState DetectorState::initial(const Vec& x0, const KalmanConfig& config, std::size_t history) {
  DetectorState s;
  s.x_hat = x0;
  s.P = config.P_init;
  s.residual = Vec::Zero(x0.size());
  s.flags = FlagHistory(history);
  return s;
}

KfOutput kf_step(DetectorState& state, const Vec& u, const Vec& y, const Mat& A_s, const Mat& B_s,
                 const KalmanConfig& config) {
  const Index n = state.x_hat.size();
  if (y.size() != n || A_s.rows() != n || B_s.rows() != n || u.size() != B_s.cols()) {
    throw std::invalid_argument("kf_step: dimension mismatch");
  }
  const Vec x_pred = A_s * state.x_hat + B_s * u;
  Mat P_pred = A_s * state.P * A_s.transpose() + config.Q_f;
  P_pred = 0.5 * (P_pred + P_pred.transpose());

  KfOutput out;
  out.residual = y - x_pred;
  Mat S = P_pred + config.R_meas;
  S = 0.5 * (S + S.transpose());
  Eigen::LDLT<Mat> ldlt(S);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-14 * std::max(1.0, S.cwiseAbs().maxCoeff()))) {
    throw DetectorError("kf_step: innovation covariance is singular");
  }
  out.stat = out.residual.dot(ldlt.solve(out.residual));

  // K = P_pred S^-1, Joseph form for the covariance.
  const Mat K = ldlt.solve(P_pred).transpose();
  state.x_hat = x_pred + K * out.residual;
  const Mat IK = Mat::Identity(n, n) - K;
  Mat P = IK * P_pred * IK.transpose() + K * config.R_meas * K.transpose();
  state.P = 0.5 * (P + P.transpose());
  state.residual = out.residual;
  state.stat = out.stat;
  return out;
}

bool test_attack(double stat, double T) { return stat > T; }

double estimate_intensity(const FlagHistory& history, std::size_t window) {
  if (window < 1) throw std::invalid_argument("estimate_intensity: window must be >= 1");
  const std::size_t count = std::min(window, history.size());
  if (count == 0) return 0.0;
  std::size_t raised = 0;
  for (std::size_t k = 0; k < count; ++k) raised += history.recent(k) ? 1 : 0;
  return static_cast<double>(raised) / static_cast<double>(count);
}

Detector::Detector(Mat A_s, Mat B_s, KalmanConfig config, std::size_t window, const Vec& x0)
    : A_s_(std::move(A_s)), B_s_(std::move(B_s)), config_(std::move(config)), window_(window) {
  if (window_ < 1) throw std::invalid_argument("Detector: window must be >= 1");
  config_.validate();
  state_ = DetectorState::initial(x0, config_, window_);
}

Detector::Sample Detector::step(const Vec& u, const Vec& y) {
  const KfOutput kf = kf_step(state_, u, y, A_s_, B_s_, config_);
  Sample s;
  s.residual = kf.residual;
  s.stat = kf.stat;
  s.flag = test_attack(kf.stat, config_.T);
  state_.flags.push(s.flag);
  state_.omega_hat = estimate_intensity(state_.flags, window_);
  s.omega_hat = state_.omega_hat;
  return s;
}

}  // namespace resmpc
