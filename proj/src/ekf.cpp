#include "ptz/ekf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include <Eigen/Cholesky>
#include <Eigen/Geometry>
#include <Eigen/LU>

#include "ptz/error.hpp"

namespace ptz {

void validate(const EkfParams& p) {
  if (!(p.meas_noise_px > 0 && p.process_noise_angle > 0 && p.process_noise_focal > 0 &&
        p.init_landmark_angle_std > 0 && p.gate_px > 0 && p.descriptor_match_max_dist > 0 &&
        p.init_angle_std > 0 && p.init_focal_std > 0 && p.init_velocity_angle_std > 0 &&
        p.init_velocity_focal_std > 0))
    throw Error(ErrorCode::InvalidArgument, "EKF parameters must be positive");
}

namespace {

// One 2-row measurement touching a camera block at column 0 and a landmark
// block of width two.
struct MeasurementBlock {
  Eigen::Matrix<double, 2, Eigen::Dynamic> camera;
  Eigen::Index landmark_col = 0;
  Eigen::Matrix2d landmark;
  Eigen::Vector2d innovation;
};

// Kalman update exploiting the sparsity of H, with the Joseph form
// P' = (I - KH) P (I - KH)^T + K R K^T evaluated as
// AP = P - K (HP);  P' = AP - (AP H^T) K^T + r^2 K K^T.
void kalman_update(Eigen::VectorXd& mean, Eigen::MatrixXd& cov, std::span<const MeasurementBlock> blocks,
                   double meas_var) {
  const Eigen::Index n = mean.size();
  const Eigen::Index m = 2 * static_cast<Eigen::Index>(blocks.size());
  if (m == 0) return;
  const Eigen::Index cw = blocks.front().camera.cols();

  Eigen::MatrixXd hp(m, n);
  Eigen::VectorXd innovation(m);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& b = blocks[k];
    hp.middleRows(2 * k, 2).noalias() = b.camera * cov.topRows(cw);
    hp.middleRows(2 * k, 2).noalias() += b.landmark * cov.middleRows(b.landmark_col, 2);
    innovation.segment<2>(2 * k) = b.innovation;
  }
  Eigen::MatrixXd s(m, m);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& b = blocks[k];
    s.middleCols(2 * k, 2).noalias() = hp.leftCols(cw) * b.camera.transpose();
    s.middleCols(2 * k, 2).noalias() += hp.middleCols(b.landmark_col, 2) * b.landmark.transpose();
  }
  s = 0.5 * (s + s.transpose()).eval();
  s.diagonal().array() += meas_var;

  const Eigen::LLT<Eigen::MatrixXd> llt(s);
  const Eigen::MatrixXd gain_t = llt.solve(hp);  // K^T, m x n
  mean.noalias() += gain_t.transpose() * innovation;

  Eigen::MatrixXd ap = cov;
  ap.noalias() -= gain_t.transpose() * hp;
  Eigen::MatrixXd ap_ht(n, m);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& b = blocks[k];
    ap_ht.middleCols(2 * k, 2).noalias() = ap.leftCols(cw) * b.camera.transpose();
    ap_ht.middleCols(2 * k, 2).noalias() += ap.middleCols(b.landmark_col, 2) * b.landmark.transpose();
  }
  // AP - (AP H^T) K^T + r^2 K K^T = AP - (AP H^T - r^2 K) K^T
  ap_ht.noalias() -= meas_var * gain_t.transpose();
  cov = ap;
  cov.noalias() -= ap_ht * gain_t;
  cov = 0.5 * (cov + cov.transpose()).eval();
}

// Keeps the listed state indices (in order) of mean and covariance.
void select_state(Eigen::VectorXd& mean, Eigen::MatrixXd& cov, const std::vector<Eigen::Index>& keep) {
  const auto k = static_cast<Eigen::Index>(keep.size());
  Eigen::VectorXd new_mean(k);
  Eigen::MatrixXd new_cov(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    new_mean(i) = mean(keep[i]);
    for (Eigen::Index j = 0; j < k; ++j) new_cov(i, j) = cov(keep[i], keep[j]);
  }
  mean = std::move(new_mean);
  cov = std::move(new_cov);
}

// Appends landmarks y = g(camera, z) given the stacked Jacobian rows with
// respect to the camera block (width cw) and the per-landmark extra noise.
void augment_state(Eigen::VectorXd& mean, Eigen::MatrixXd& cov, const std::vector<Eigen::Vector2d>& values,
                   const Eigen::MatrixXd& camera_jacobian, const std::vector<Eigen::Matrix2d>& extra_cov) {
  const Eigen::Index n = mean.size();
  const Eigen::Index k = 2 * static_cast<Eigen::Index>(values.size());
  const Eigen::Index cw = camera_jacobian.cols();
  if (k == 0) return;

  const Eigen::MatrixXd cross = camera_jacobian * cov.topRows(cw);  // k x n
  Eigen::MatrixXd block = cross.leftCols(cw) * camera_jacobian.transpose();
  for (std::size_t i = 0; i < values.size(); ++i) block.block<2, 2>(2 * i, 2 * i) += extra_cov[i];

  mean.conservativeResize(n + k);
  for (std::size_t i = 0; i < values.size(); ++i) mean.segment<2>(n + 2 * i) = values[i];
  cov.conservativeResize(n + k, n + k);
  cov.bottomLeftCorner(k, n) = cross;
  cov.topRightCorner(n, k) = cross.transpose();
  cov.bottomRightCorner(k, k) = 0.5 * (block + block.transpose());
}

double descriptor_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).norm(); }

// Greedy one-to-one matching over candidate (descriptor distance, pixel
// distance, landmark, observation) tuples, best descriptor first.
std::vector<Match> greedy_match(std::vector<std::tuple<double, double, std::size_t, std::size_t>>& candidates,
                                std::size_t num_landmarks, std::size_t num_observations) {
  std::sort(candidates.begin(), candidates.end());
  std::vector<char> used_landmark(num_landmarks, 0), used_obs(num_observations, 0);
  std::vector<Match> matches;
  for (const auto& [dd, pd, l, o] : candidates) {
    if (used_landmark[l] || used_obs[o]) continue;
    used_landmark[l] = used_obs[o] = 1;
    matches.push_back({l, o});
  }
  std::sort(matches.begin(), matches.end(),
            [](const Match& a, const Match& b) { return a.landmark < b.landmark; });
  return matches;
}

}  // namespace

// --- EKF-PTZ ----------------------------------------------------------------

PtzTrackerState make_tracker_state(const CameraPose& pose, const EkfParams& params) {
  validate(pose);
  validate(params);
  PtzTrackerState state;
  state.mean = Eigen::VectorXd::Zero(PtzTrackerState::kCameraDim);
  state.mean.head<3>() << pose.pan, pose.tilt, pose.focal;
  Eigen::VectorXd var(PtzTrackerState::kCameraDim);
  var << params.init_angle_std, params.init_angle_std, params.init_focal_std,
      params.init_velocity_angle_std, params.init_velocity_angle_std, params.init_velocity_focal_std;
  state.covariance = var.array().square().matrix().asDiagonal();
  return state;
}

PtzTrackerState ekf_predict(PtzTrackerState state, double dt, const EkfParams& params) {
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "prediction step must be positive");
  auto& x = state.mean;
  auto& p = state.covariance;
  x.head<3>() += dt * x.segment<3>(3);
  x(0) = normalize_pan(x(0));

  // F = [I dt*I; 0 I] on the camera block, identity elsewhere.
  const Eigen::Index n = x.size();
  p.topRows<3>() += dt * p.middleRows<3>(3);
  p.leftCols<3>() += dt * p.middleCols<3>(3);
  (void)n;
  const double qa = params.process_noise_angle * params.process_noise_angle * dt;
  const double qf = params.process_noise_focal * params.process_noise_focal * dt;
  p(3, 3) += qa;
  p(4, 4) += qa;
  p(5, 5) += qf;
  return state;
}

std::vector<Match> associate(PtzTrackerState& state, const ImageSize& size,
                             std::span<const Observation> observations, const EkfParams& params) {
  const CameraPose pose = state.pose();
  std::vector<std::tuple<double, double, std::size_t, std::size_t>> candidates;
  std::vector<char> in_view(state.landmarks.size(), 0);
  for (std::size_t l = 0; l < state.landmarks.size(); ++l) {
    Pixel predicted;
    try {
      predicted = project_ray(pose, size, state.landmark_ray(l));
    } catch (const Error&) {
      continue;
    }
    if (!size.contains(predicted)) continue;
    in_view[l] = 1;
    for (std::size_t o = 0; o < observations.size(); ++o) {
      const double pd = (observations[o].pixel - predicted).norm();
      if (pd > params.gate_px) continue;
      const double dd = descriptor_distance(observations[o].descriptor, state.landmarks[l].descriptor);
      if (dd > params.descriptor_match_max_dist) continue;
      candidates.emplace_back(dd, pd, l, o);
    }
  }
  auto matches = greedy_match(candidates, state.landmarks.size(), observations.size());
  std::vector<char> matched(state.landmarks.size(), 0);
  for (const auto& m : matches) matched[m.landmark] = 1;
  for (std::size_t l = 0; l < state.landmarks.size(); ++l) {
    if (matched[l]) {
      state.landmarks[l].observation_count += 1;
      state.landmarks[l].miss_count = 0;
    } else if (in_view[l]) {
      state.landmarks[l].miss_count += 1;
    }
  }
  return matches;
}

std::pair<PtzTrackerState, UpdateDiagnostics> ekf_update(PtzTrackerState state, const ImageSize& size,
                                                         std::span<const Match> matches,
                                                         std::span<const Observation> observations,
                                                         const EkfParams& params) {
  UpdateDiagnostics diag;
  const CameraPose pose = state.pose();
  std::vector<MeasurementBlock> blocks;
  blocks.reserve(matches.size());
  double innovation_sum = 0.0;
  for (const auto& m : matches) {
    const Ray ray = state.landmark_ray(m.landmark);
    Eigen::Matrix<double, 2, 5> j;
    Pixel predicted;
    try {
      j = projection_jacobian(pose, size, ray);
      predicted = project_ray(pose, size, ray);
    } catch (const Error&) {
      continue;
    }
    MeasurementBlock b;
    b.camera = j.leftCols<3>();
    b.landmark = j.rightCols<2>();
    b.landmark_col = PtzTrackerState::landmark_index(m.landmark);
    b.innovation = observations[m.observation].pixel - predicted;
    innovation_sum += b.innovation.norm();
    blocks.push_back(std::move(b));
  }
  diag.num_matches = static_cast<int>(blocks.size());
  if (blocks.empty()) return {std::move(state), diag};
  diag.mean_innovation = innovation_sum / static_cast<double>(blocks.size());

  // The camera block is [pan, tilt, focal, velocities]; pad the Jacobian to
  // the full six columns so that velocities take part in the gain.
  for (auto& b : blocks) {
    Eigen::Matrix<double, 2, Eigen::Dynamic> padded = Eigen::Matrix<double, 2, Eigen::Dynamic>::Zero(2, 6);
    padded.leftCols<3>() = b.camera;
    b.camera = padded;
  }
  kalman_update(state.mean, state.covariance, blocks, params.meas_noise_px * params.meas_noise_px);
  state.mean(0) = normalize_pan(state.mean(0));

  const CameraPose updated = state.pose();
  double sq = 0.0;
  for (const auto& m : matches) {
    const double r = reprojection_error(updated, size, observations[m.observation].pixel,
                                        state.landmark_ray(m.landmark));
    diag.residuals.push_back(r);
    if (std::isfinite(r)) sq += r * r;
  }
  diag.rms = std::sqrt(sq / static_cast<double>(diag.residuals.size()));
  return {std::move(state), diag};
}

PtzTrackerState add_landmarks(PtzTrackerState state, const ImageSize& size,
                              std::span<const Observation> observations, const EkfParams& params) {
  const CameraPose pose = state.pose();
  std::vector<Eigen::Vector2d> values;
  std::vector<Eigen::Matrix<double, 2, 3>> pose_jacobians;
  std::vector<Eigen::Matrix2d> extra;
  const double init_var = params.init_landmark_angle_std * params.init_landmark_angle_std;
  const double pixel_var = params.meas_noise_px * params.meas_noise_px;
  for (const auto& obs : observations) {
    Ray ray;
    Eigen::Matrix<double, 2, 5> j;
    try {
      ray = back_project(pose, size, obs.pixel);
      j = back_projection_jacobian(pose, size, obs.pixel);
    } catch (const Error&) {
      continue;
    }
    values.emplace_back(ray.theta, ray.phi);
    pose_jacobians.push_back(j.leftCols<3>());
    const Eigen::Matrix2d jp = j.rightCols<2>();
    extra.push_back(pixel_var * jp * jp.transpose() + init_var * Eigen::Matrix2d::Identity());
    Landmark lm;
    lm.id = state.next_landmark_id++;
    lm.descriptor = obs.descriptor;
    lm.observation_count = 1;
    state.landmarks.push_back(std::move(lm));
  }
  Eigen::MatrixXd camera_jacobian = Eigen::MatrixXd::Zero(2 * values.size(), PtzTrackerState::kCameraDim);
  for (std::size_t i = 0; i < values.size(); ++i) camera_jacobian.block<2, 3>(2 * i, 0) = pose_jacobians[i];
  augment_state(state.mean, state.covariance, values, camera_jacobian, extra);
  return state;
}

PtzTrackerState remove_landmarks(PtzTrackerState state, std::span<const std::size_t> slots) {
  if (slots.empty()) return state;
  std::vector<char> drop(state.landmarks.size(), 0);
  for (auto s : slots) drop.at(s) = 1;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < PtzTrackerState::kCameraDim; ++i) keep.push_back(i);
  std::vector<Landmark> kept;
  for (std::size_t l = 0; l < state.landmarks.size(); ++l) {
    if (drop[l]) continue;
    keep.push_back(PtzTrackerState::landmark_index(l));
    keep.push_back(PtzTrackerState::landmark_index(l) + 1);
    kept.push_back(std::move(state.landmarks[l]));
  }
  select_state(state.mean, state.covariance, keep);
  state.landmarks = std::move(kept);
  return state;
}

PtzTrackerState prune_landmarks(PtzTrackerState state, int max_misses) {
  std::vector<std::size_t> slots;
  for (std::size_t l = 0; l < state.landmarks.size(); ++l)
    if (state.landmarks[l].miss_count > max_misses) slots.push_back(l);
  return remove_landmarks(std::move(state), slots);
}

PtzTrackerState manage_landmarks(PtzTrackerState state, const ImageSize& size,
                                 std::span<const Observation> observations, std::span<const Match> matches,
                                 int tracked, const EkfParams& params, const LandmarkPolicy& policy) {
  state = prune_landmarks(std::move(state), policy.max_misses);

  const int budget = std::min(policy.max_new_per_frame, policy.target_matches - tracked);
  if (budget > 0) {
    std::vector<char> used(observations.size(), 0);
    for (const auto& m : matches) used[m.observation] = 1;
    std::vector<Observation> fresh;
    for (std::size_t o = 0; o < observations.size() && static_cast<int>(fresh.size()) < budget; ++o)
      if (!used[o]) fresh.push_back(observations[o]);
    state = add_landmarks(std::move(state), size, fresh, params);
  }

  const int excess = static_cast<int>(state.landmarks.size()) - policy.max_landmarks;
  if (excess > 0) {
    const CameraPose pose = state.pose();
    std::vector<std::pair<int, std::size_t>> out_of_view;
    for (std::size_t l = 0; l < state.landmarks.size(); ++l) {
      bool visible = false;
      try {
        visible = size.contains(project_ray(pose, size, state.landmark_ray(l)));
      } catch (const Error&) {
      }
      if (!visible) out_of_view.emplace_back(state.landmarks[l].observation_count, l);
    }
    std::sort(out_of_view.begin(), out_of_view.end());
    std::vector<std::size_t> slots;
    for (std::size_t k = 0; k < out_of_view.size() && static_cast<int>(k) < excess; ++k)
      slots.push_back(out_of_view[k].second);
    std::sort(slots.begin(), slots.end());
    state = remove_landmarks(std::move(state), slots);
  }
  return state;
}

// --- EKF-H ------------------------------------------------------------------

Eigen::Matrix3d HomographyTrackerState::homography() const {
  Eigen::Matrix3d h;
  h << mean(0), mean(1), mean(2), mean(3), mean(4), mean(5), mean(6), mean(7), 1.0;
  return h;
}

namespace {

Eigen::Matrix<double, 8, 1> homography_params(const Eigen::Matrix3d& h) {
  const Eigen::Matrix3d n = h / h(2, 2);
  Eigen::Matrix<double, 8, 1> v;
  v << n(0, 0), n(0, 1), n(0, 2), n(1, 0), n(1, 1), n(1, 2), n(2, 0), n(2, 1);
  return v;
}

// Standard deviation of each homography parameter induced by independent
// pan/tilt/focal perturbations of the given size around `pose`, pooled per
// entry type: linear (0,1,3,4), translation (2,5), perspective (6,7).
Eigen::Matrix<double, 8, 1> pooled_homography_std(const CameraPose& pose, const ImageSize& size,
                                                  double angle_std, double focal_std) {
  Eigen::Matrix<double, 8, 1> var = Eigen::Matrix<double, 8, 1>::Zero();
  const double steps[3] = {1e-4, 1e-4, 1e-2};
  const double stds[3] = {angle_std, angle_std, focal_std};
  for (int k = 0; k < 3; ++k) {
    CameraPose plus = pose, minus = pose;
    double* pp = k == 0 ? &plus.pan : k == 1 ? &plus.tilt : &plus.focal;
    double* pm = k == 0 ? &minus.pan : k == 1 ? &minus.tilt : &minus.focal;
    *pp += steps[k];
    *pm -= steps[k];
    const Eigen::Matrix<double, 8, 1> d =
        (homography_params(relative_homography(pose, plus, size)) -
         homography_params(relative_homography(pose, minus, size))) / (2 * steps[k]);
    var += (d * stds[k]).array().square().matrix();
  }
  const auto pool = [&](std::initializer_list<int> idx) {
    double m = 0.0;
    for (int i : idx) m = std::max(m, var(i));
    for (int i : idx) var(i) = m;
  };
  pool({0, 1, 3, 4});
  pool({2, 5});
  pool({6, 7});
  return var.array().sqrt();
}

// Jacobians of p = dehom(H m) with respect to the eight parameters and m.
void plane_projection_jacobian(const Eigen::Matrix3d& h, const Eigen::Vector2d& m, Eigen::Vector2d& p,
                               Eigen::Matrix<double, 2, 8>& jh, Eigen::Matrix2d& jm) {
  const Eigen::Vector3d q = h * m.homogeneous();
  if (q.z() <= kDepthEpsilon * q.norm()) throw Error(ErrorCode::BehindCamera, "plane point at infinity");
  p = q.hnormalized();
  Eigen::Matrix<double, 2, 3> dp_dq;
  dp_dq << 1.0, 0.0, -p.x(), 0.0, 1.0, -p.y();
  dp_dq /= q.z();
  Eigen::Matrix<double, 3, 8> dq_dh = Eigen::Matrix<double, 3, 8>::Zero();
  dq_dh.block<1, 3>(0, 0) = m.homogeneous().transpose();
  dq_dh.block<1, 3>(1, 3) = m.homogeneous().transpose();
  dq_dh.block<1, 2>(2, 6) = m.transpose();
  jh = dp_dq * dq_dh;
  Eigen::Matrix<double, 3, 2> dq_dm;
  dq_dm << h(0, 0), h(0, 1), h(1, 0), h(1, 1), h(2, 0), h(2, 1);
  jm = dp_dq * dq_dm;
}

HomographyTrackerState remove_plane_landmarks(HomographyTrackerState state, const std::vector<char>& drop) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < HomographyTrackerState::kCameraDim; ++i) keep.push_back(i);
  std::vector<PlaneLandmark> kept;
  for (std::size_t l = 0; l < state.landmarks.size(); ++l) {
    if (drop[l]) continue;
    keep.push_back(HomographyTrackerState::landmark_index(l));
    keep.push_back(HomographyTrackerState::landmark_index(l) + 1);
    kept.push_back(std::move(state.landmarks[l]));
  }
  if (kept.size() == state.landmarks.size()) return state;
  select_state(state.mean, state.covariance, keep);
  state.landmarks = std::move(kept);
  return state;
}

}  // namespace

HomographyTrackerState make_homography_state(const CameraPose& first_pose, const ImageSize& size,
                                             const EkfParams& params) {
  validate(first_pose);
  validate(params);
  HomographyTrackerState state;
  state.mean = Eigen::VectorXd::Zero(HomographyTrackerState::kCameraDim);
  state.mean.head<8>() = homography_params(Eigen::Matrix3d::Identity());
  state.process_std =
      pooled_homography_std(first_pose, size, params.process_noise_angle, params.process_noise_focal);
  const auto prior = pooled_homography_std(first_pose, size, params.init_angle_std, params.init_focal_std);
  const auto vel_prior =
      pooled_homography_std(first_pose, size, params.init_velocity_angle_std, params.init_velocity_focal_std);
  Eigen::VectorXd var(HomographyTrackerState::kCameraDim);
  var << prior, vel_prior;
  state.covariance = var.array().square().matrix().asDiagonal();
  state.landmark_init_std = deg2rad(params.init_landmark_angle_std) * first_pose.focal;
  return state;
}

HomographyTrackerState add_plane_landmarks(HomographyTrackerState state,
                                           std::span<const Observation> observations,
                                           const EkfParams& params) {
  const Eigen::Matrix3d h = state.homography();
  const Eigen::Matrix3d g = h.inverse();
  const double pixel_var = params.meas_noise_px * params.meas_noise_px;
  const double init_var = state.landmark_init_std * state.landmark_init_std;
  std::vector<Eigen::Vector2d> values;
  std::vector<Eigen::Matrix<double, 2, 8>> jacobians;
  std::vector<Eigen::Matrix2d> extra;
  for (const auto& obs : observations) {
    const Eigen::Vector3d r = g * obs.pixel.homogeneous();
    if (r.z() <= kDepthEpsilon * r.norm()) continue;
    const Eigen::Vector2d m = r.hnormalized();
    Eigen::Matrix<double, 2, 3> dm_dr;
    dm_dr << 1.0, 0.0, -m.x(), 0.0, 1.0, -m.y();
    dm_dr /= r.z();
    // d(G p) / d h_k = -G E_k G p = -G[:, i] * r_j for entry (i, j).
    Eigen::Matrix<double, 3, 8> dr_dh;
    const int rows[8] = {0, 0, 0, 1, 1, 1, 2, 2};
    const int cols[8] = {0, 1, 2, 0, 1, 2, 0, 1};
    for (int k = 0; k < 8; ++k) dr_dh.col(k) = -g.col(rows[k]) * r(cols[k]);
    const Eigen::Matrix<double, 2, 2> jp = dm_dr * g.leftCols<2>();
    values.push_back(m);
    jacobians.push_back(dm_dr * dr_dh);
    extra.push_back(pixel_var * jp * jp.transpose() + init_var * Eigen::Matrix2d::Identity());
    PlaneLandmark lm;
    lm.id = state.next_landmark_id++;
    lm.descriptor = obs.descriptor;
    lm.observation_count = 1;
    state.landmarks.push_back(std::move(lm));
  }
  Eigen::MatrixXd camera_jacobian = Eigen::MatrixXd::Zero(2 * values.size(), HomographyTrackerState::kCameraDim);
  for (std::size_t i = 0; i < values.size(); ++i) camera_jacobian.block<2, 8>(2 * i, 0) = jacobians[i];
  augment_state(state.mean, state.covariance, values, camera_jacobian, extra);
  return state;
}

HomographyTrackerState ekfh_predict(HomographyTrackerState state) {
  state.mean.head<8>() += state.mean.segment<8>(8);
  state.covariance.topRows<8>() += state.covariance.middleRows<8>(8);
  state.covariance.leftCols<8>() += state.covariance.middleCols<8>(8);
  for (int k = 0; k < 8; ++k) state.covariance(8 + k, 8 + k) += state.process_std(k) * state.process_std(k);
  return state;
}

std::pair<HomographyTrackerState, HomographyStepDiagnostics> ekfh_step(
    HomographyTrackerState state, const ImageSize& size, std::span<const Observation> observations,
    const EkfParams& params, const RansacParams& ransac, const LandmarkPolicy& policy) {
  HomographyStepDiagnostics diag;
  state = ekfh_predict(std::move(state));

  // Match plane landmarks projected through the predicted homography.
  const Eigen::Matrix3d h = state.homography();
  std::vector<std::tuple<double, double, std::size_t, std::size_t>> candidates;
  std::vector<char> in_view(state.landmarks.size(), 0);
  std::vector<Pixel> predicted(state.landmarks.size());
  for (std::size_t l = 0; l < state.landmarks.size(); ++l) {
    try {
      predicted[l] = apply_homography(h, state.landmark_point(l));
    } catch (const Error&) {
      continue;
    }
    if (!size.contains(predicted[l])) continue;
    in_view[l] = 1;
    for (std::size_t o = 0; o < observations.size(); ++o) {
      const double pd = (observations[o].pixel - predicted[l]).norm();
      if (pd > params.gate_px) continue;
      const double dd = descriptor_distance(observations[o].descriptor, state.landmarks[l].descriptor);
      if (dd > params.descriptor_match_max_dist) continue;
      candidates.emplace_back(dd, pd, l, o);
    }
  }
  const auto matches = greedy_match(candidates, state.landmarks.size(), observations.size());
  diag.num_matches = static_cast<int>(matches.size());
  if (matches.size() < 4) throw Error(ErrorCode::TrackingLost, "fewer than four plane matches");

  // Outlier rejection with a fresh homography fit.
  std::vector<PixelPair> pairs;
  for (const auto& m : matches) pairs.push_back({state.landmark_point(m.landmark), observations[m.observation].pixel});
  RansacParams rp = ransac;
  rp.min_inliers = std::max(4, std::min(ransac.min_inliers, static_cast<int>(pairs.size())));
  HomographyRansacResult fit;
  try {
    fit = ransac_homography(pairs, rp);
  } catch (const Error& e) {
    throw Error(ErrorCode::TrackingLost, e.what());
  }
  if (fit.num_inliers < 4) throw Error(ErrorCode::TrackingLost, "fewer than four homography inliers");
  diag.num_inliers = fit.num_inliers;

  std::vector<char> matched(state.landmarks.size(), 0), obs_used(observations.size(), 0);
  std::vector<MeasurementBlock> blocks;
  double innovation_sum = 0.0;
  for (std::size_t k = 0; k < matches.size(); ++k) {
    const auto& m = matches[k];
    obs_used[m.observation] = 1;
    if (!fit.inliers[k]) continue;
    matched[m.landmark] = 1;
    diag.inlier_observations.push_back(m.observation);
    MeasurementBlock b;
    Eigen::Vector2d p;
    Eigen::Matrix<double, 2, 8> jh;
    Eigen::Matrix2d jm;
    plane_projection_jacobian(h, state.landmark_point(m.landmark), p, jh, jm);
    b.camera = Eigen::Matrix<double, 2, Eigen::Dynamic>::Zero(2, HomographyTrackerState::kCameraDim);
    b.camera.leftCols<8>() = jh;
    b.landmark = jm;
    b.landmark_col = HomographyTrackerState::landmark_index(m.landmark);
    b.innovation = observations[m.observation].pixel - p;
    innovation_sum += b.innovation.norm();
    blocks.push_back(std::move(b));
  }
  diag.mean_innovation = innovation_sum / static_cast<double>(blocks.size());
  kalman_update(state.mean, state.covariance, blocks, params.meas_noise_px * params.meas_noise_px);

  const Eigen::Matrix3d updated = state.homography();
  double sq = 0.0;
  int counted = 0;
  for (std::size_t k = 0; k < matches.size(); ++k) {
    if (!fit.inliers[k]) continue;
    try {
      const double r = (apply_homography(updated, state.landmark_point(matches[k].landmark)) -
                        observations[matches[k].observation].pixel).norm();
      sq += r * r;
      ++counted;
    } catch (const Error&) {
    }
  }
  diag.rms = counted ? std::sqrt(sq / counted) : 0.0;

  // Counters and pruning.
  std::vector<char> drop(state.landmarks.size(), 0);
  for (std::size_t l = 0; l < state.landmarks.size(); ++l) {
    auto& lm = state.landmarks[l];
    if (matched[l]) {
      lm.observation_count += 1;
      lm.miss_count = 0;
    } else if (in_view[l]) {
      lm.miss_count += 1;
    }
    drop[l] = lm.miss_count > policy.max_misses;
  }
  state = remove_plane_landmarks(std::move(state), drop);

  // New landmarks from unmatched observations.
  const int tracked = static_cast<int>(blocks.size());
  const int budget = std::min(policy.max_new_per_frame, policy.target_matches - tracked);
  if (budget > 0) {
    std::vector<Observation> fresh;
    for (std::size_t o = 0; o < observations.size() && static_cast<int>(fresh.size()) < budget; ++o)
      if (!obs_used[o]) fresh.push_back(observations[o]);
    state = add_plane_landmarks(std::move(state), fresh, params);
  }
  if (static_cast<int>(state.landmarks.size()) > policy.max_landmarks) {
    const Eigen::Matrix3d hn = state.homography();
    std::vector<std::pair<int, std::size_t>> out_of_view;
    for (std::size_t l = 0; l < state.landmarks.size(); ++l) {
      bool visible = false;
      try {
        visible = size.contains(apply_homography(hn, state.landmark_point(l)));
      } catch (const Error&) {
      }
      if (!visible) out_of_view.emplace_back(state.landmarks[l].observation_count, l);
    }
    std::sort(out_of_view.begin(), out_of_view.end());
    std::vector<char> evict(state.landmarks.size(), 0);
    auto excess = state.landmarks.size() - static_cast<std::size_t>(policy.max_landmarks);
    for (std::size_t i = 0; i < out_of_view.size() && i < excess; ++i) evict[out_of_view[i].second] = 1;
    state = remove_plane_landmarks(std::move(state), evict);
  }
  return {std::move(state), diag};
}

CameraPose homography_to_pose(const Eigen::Matrix3d& h, const CameraPose& first_pose, const ImageSize& size) {
  std::vector<PixelRay> pairs;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      const Pixel p(size.width * (i + 0.5) / 5.0, size.height * (j + 0.5) / 5.0);
      try {
        pairs.push_back({apply_homography(h, p), back_project(first_pose, size, p)});
      } catch (const Error&) {
      }
    }
  }
  return refine_pose(first_pose, pairs, size);
}

}  // namespace ptz
