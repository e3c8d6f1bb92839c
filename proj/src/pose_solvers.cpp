#include "ptz/pose_solvers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "ptz/error.hpp"
#include "ptz/random.hpp"

namespace ptz {

void validate(const RansacParams& params) {
  if (params.max_iterations < 1 || !(params.inlier_threshold > 0.0) || params.min_inliers < 2 ||
      !(params.confidence > 0.0 && params.confidence < 1.0))
    throw Error(ErrorCode::InvalidArgument, "invalid RANSAC parameters");
}

namespace {

Eigen::Vector3d camera_direction(const Pixel& p, const ImageSize& size, double focal) {
  return {(p.x() - size.cx()) / focal, (p.y() - size.cy()) / focal, 1.0};
}

}  // namespace

double two_point_angle_gap(const PixelRay& first, const PixelRay& second, const ImageSize& size,
                           double focal) {
  return vector_angle(camera_direction(first.pixel, size, focal),
                      camera_direction(second.pixel, size, focal)) -
         ray_angle(first.ray, second.ray);
}

double reprojection_error(const CameraPose& pose, const ImageSize& size, const Pixel& pixel,
                          const Ray& ray) {
  try {
    return (project_ray(pose, size, ray) - pixel).norm();
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
}

CameraPose solve_two_point(const PixelRay& first, const PixelRay& second, const ImageSize& size,
                           double max_residual) {
  if ((first.pixel - second.pixel).norm() <= 1.0)
    throw Error(ErrorCode::Degenerate, "two-point solver needs distinct pixels");
  if (ray_angle(first.ray, second.ray) <= 0.01)
    throw Error(ErrorCode::Degenerate, "two-point solver needs distinct rays");

  // Focal length: g(f) falls monotonically once the pixel offsets point away
  // from each other, but two pixels on the same side of the principal point
  // make it rise first, giving up to two roots. Scan for sign changes and
  // bisect every bracket.
  std::vector<double> focal_roots;
  constexpr int kScanSteps = 400;
  const double log_ratio = std::log(kMaxFocal / kMinFocal);
  double f_prev = kMinFocal;
  double g_prev = two_point_angle_gap(first, second, size, f_prev);
  for (int step = 1; step <= kScanSteps; ++step) {
    const double f_next = kMinFocal * std::exp(log_ratio * step / kScanSteps);
    const double g_next = two_point_angle_gap(first, second, size, f_next);
    if (g_prev == 0.0) {
      focal_roots.push_back(f_prev);
    } else if ((g_prev > 0.0) != (g_next > 0.0) && g_next != 0.0) {
      double lo = f_prev, hi = f_next;
      const bool falling = g_prev > 0.0;
      for (int it = 0; it < 200 && hi - lo > 1e-3 * kTwoPointTolerance; ++it) {
        const double mid = 0.5 * (lo + hi);
        if ((two_point_angle_gap(first, second, size, mid) > 0.0) == falling)
          lo = mid;
        else
          hi = mid;
      }
      focal_roots.push_back(0.5 * (lo + hi));
    }
    f_prev = f_next;
    g_prev = g_next;
  }
  if (g_prev == 0.0) focal_roots.push_back(f_prev);
  if (focal_roots.empty())
    throw Error(ErrorCode::NoSolution, "focal length outside the search bracket");

  const Eigen::Vector3d u1 = ray_direction(first.ray);
  CameraPose best;
  double best_residual = std::numeric_limits<double>::infinity();
  for (const double focal : focal_roots) {
    // Pan and tilt: R_y(pan) R_x(tilt) c1 = u1, where R_x keeps x and R_y keeps y.
    const Eigen::Vector3d c1 = camera_direction(first.pixel, size, focal).normalized();
    const double a = c1.y(), b = c1.z();
    const double rho = std::hypot(a, b);
    const double k = u1.y();
    if (std::abs(k) > rho * (1.0 + 1e-12)) continue;
    const double alpha = std::atan2(b, a);
    const double spread = std::acos(std::clamp(k / rho, -1.0, 1.0));
    for (const double tilt_rad : {-alpha + spread, -alpha - spread}) {
      const double tilt = rad2deg(std::remainder(tilt_rad, 2.0 * std::numbers::pi));
      if (!(tilt > -90.0 && tilt < 90.0)) continue;
      const double vx = c1.x();
      const double vz = std::sin(tilt_rad) * a + std::cos(tilt_rad) * b;
      const double pan = normalize_pan(rad2deg(std::atan2(u1.x(), u1.z()) - std::atan2(vx, vz)));
      const CameraPose candidate{pan, tilt, focal};
      const double residual = std::max(reprojection_error(candidate, size, first.pixel, first.ray),
                                       reprojection_error(candidate, size, second.pixel, second.ray));
      if (residual < best_residual) {
        best_residual = residual;
        best = candidate;
      }
    }
  }
  if (!std::isfinite(best_residual))
    throw Error(ErrorCode::NoSolution, "no pan/tilt solution in front of the camera");
  if (best_residual > max_residual)
    throw Error(ErrorCode::Inconsistent, "second correspondence is not reproduced");
  return best;
}

double reprojection_cost(const CameraPose& pose, std::span<const PixelRay> correspondences,
                         const ImageSize& size) {
  double cost = 0.0;
  for (const auto& c : correspondences) {
    const Pixel p = project_ray(pose, size, c.ray);
    cost += (p - c.pixel).squaredNorm();
  }
  return cost;
}

namespace {

double safe_cost(const CameraPose& pose, std::span<const PixelRay> correspondences,
                 const ImageSize& size) {
  if (!(pose.focal > 0.0)) return std::numeric_limits<double>::infinity();
  try {
    return reprojection_cost(pose, correspondences, size);
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace

CameraPose refine_pose(const CameraPose& initial, std::span<const PixelRay> correspondences,
                       const ImageSize& size, RefineSummary* summary) {
  constexpr int kMaxIterations = 100;
  constexpr double kMinStep = 1e-10;

  if (correspondences.size() < 2)
    throw Error(ErrorCode::SingularNormalEquations, "refinement needs at least two correspondences");

  CameraPose pose = initial;
  double cost = reprojection_cost(pose, correspondences, size);
  double lambda = 1e-3;
  RefineSummary local;
  local.cost_history.push_back(cost);

  for (int it = 0; it < kMaxIterations; ++it) {
    local.iterations = it + 1;
    Eigen::Matrix3d normal = Eigen::Matrix3d::Zero();
    Eigen::Vector3d gradient = Eigen::Vector3d::Zero();
    for (const auto& c : correspondences) {
      const auto j = projection_jacobian(pose, size, c.ray);
      const Eigen::Matrix<double, 2, 3> jp = j.leftCols<3>();
      const Eigen::Vector2d r = c.pixel - project_ray(pose, size, c.ray);
      normal.noalias() += jp.transpose() * jp;
      gradient.noalias() += jp.transpose() * r;
    }
    if (it == 0) {
      const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(normal);
      const double max_ev = eig.eigenvalues().maxCoeff();
      if (!(max_ev > 0.0) || eig.eigenvalues().minCoeff() <= 1e-12 * max_ev)
        throw Error(ErrorCode::SingularNormalEquations, "rank-deficient pose Jacobian");
    }
    if (cost == 0.0) break;

    Eigen::Matrix3d damped = normal;
    damped.diagonal() += lambda * normal.diagonal();
    const Eigen::Vector3d step = damped.ldlt().solve(gradient);
    if (!step.allFinite()) break;
    const CameraPose trial{pose.pan + step(0), pose.tilt + step(1), pose.focal + step(2)};
    const double trial_cost = safe_cost(trial, correspondences, size);
    if (trial_cost <= cost) {
      pose = trial;
      cost = trial_cost;
      local.cost_history.push_back(cost);
      lambda = std::max(lambda / 10.0, 1e-12);
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
    if (step.norm() < kMinStep) break;
  }
  pose.pan = normalize_pan(pose.pan);
  if (summary) *summary = std::move(local);
  return pose;
}

namespace {

struct PoseHypothesisSample {
  int first, second;
  int first_candidate, second_candidate;
};

int score_pose(const CameraPose& pose, std::span<const Correspondence> corrs, const ImageSize& size,
               double threshold, std::vector<char>* mask, std::vector<int>* best_candidate,
               double* sample_weight = nullptr) {
  int count = 0;
  double weight = 0.0;
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_index = 0;
    int good = 0;
    for (std::size_t k = 0; k < corrs[i].candidates.size(); ++k) {
      const double e = reprojection_error(pose, size, corrs[i].pixel, corrs[i].candidates[k]);
      good += e < threshold;
      if (e < best) {
        best = e;
        best_index = static_cast<int>(k);
      }
    }
    if (good) weight += static_cast<double>(good) / static_cast<double>(corrs[i].candidates.size());
    const bool inlier = best < threshold;
    count += inlier;
    if (mask) (*mask)[i] = inlier;
    if (best_candidate) (*best_candidate)[i] = best_index;
  }
  if (sample_weight) *sample_weight = weight;
  return count;
}

int required_iterations(double inlier_ratio, int sample_size, double confidence, int max_iterations) {
  const double good = std::pow(inlier_ratio, sample_size);
  if (good >= 1.0) return 1;
  if (good <= 0.0) return max_iterations;
  const double n = std::log(1.0 - confidence) / std::log(1.0 - good);
  return static_cast<int>(std::min<double>(max_iterations, std::ceil(n)));
}

}  // namespace

PoseRansacResult ransac_pose(std::span<const Correspondence> corrs, const ImageSize& size,
                             const RansacParams& params) {
  validate(params);
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < corrs.size(); ++i)
    if (!corrs[i].candidates.empty()) usable.push_back(i);
  if (usable.size() < 2 || static_cast<int>(usable.size()) < params.min_inliers)
    throw Error(ErrorCode::NotEnoughInliers, "too few correspondences for pose RANSAC");

  Rng rng(params.seed);
  std::vector<PoseHypothesisSample> samples(params.max_iterations);
  const auto n = usable.size();
  for (auto& s : samples) {
    const auto i = rng.uniform_index(n);
    auto j = rng.uniform_index(n - 1);
    if (j >= i) ++j;
    s.first = static_cast<int>(usable[i]);
    s.second = static_cast<int>(usable[j]);
    s.first_candidate = static_cast<int>(rng.uniform_index(corrs[s.first].candidates.size()));
    s.second_candidate = static_cast<int>(rng.uniform_index(corrs[s.second].candidates.size()));
  }

  int best_count = -1;
  CameraPose best_pose;
  int iterations = 0;
  int budget = params.max_iterations;
  for (int it = 0; it < budget; ++it) {
    iterations = it + 1;
    const auto& s = samples[it];
    const PixelRay a{corrs[s.first].pixel, corrs[s.first].candidates[s.first_candidate]};
    const PixelRay b{corrs[s.second].pixel, corrs[s.second].candidates[s.second_candidate]};
    CameraPose hypothesis;
    try {
      hypothesis = solve_two_point(a, b, size, params.inlier_threshold);
    } catch (const Error&) {
      continue;
    }
    double weight = 0.0;
    const int count = score_pose(hypothesis, corrs, size, params.inlier_threshold, nullptr, nullptr, &weight);
    if (count > best_count) {
      best_count = count;
      best_pose = hypothesis;
      // The chance that a uniformly sampled (correspondence, candidate) is
      // an inlier, so that several candidates per pixel are accounted for.
      if (params.early_exit)
        budget = std::min(params.max_iterations,
                          std::max(it + 1, required_iterations(weight / static_cast<double>(n), 2,
                                                               params.confidence, params.max_iterations)));
    }
  }
  if (best_count < params.min_inliers)
    throw Error(ErrorCode::NotEnoughInliers, "best pose hypothesis has too few inliers");

  PoseRansacResult result;
  result.iterations = iterations;
  result.inliers.assign(corrs.size(), 0);
  result.best_candidate.assign(corrs.size(), 0);
  result.pose = best_pose;
  result.num_inliers = score_pose(best_pose, corrs, size, params.inlier_threshold, &result.inliers,
                                  &result.best_candidate);

  // Refine on the inlier set, and once more if the refined pose gathers more inliers.
  for (int round = 0; round < 2; ++round) {
    std::vector<PixelRay> inlier_pairs;
    for (std::size_t i = 0; i < corrs.size(); ++i)
      if (result.inliers[i])
        inlier_pairs.push_back({corrs[i].pixel, corrs[i].candidates[result.best_candidate[i]]});
    CameraPose refined;
    try {
      refined = refine_pose(result.pose, inlier_pairs, size);
    } catch (const Error&) {
      break;
    }
    std::vector<char> mask(corrs.size(), 0);
    std::vector<int> cand(corrs.size(), 0);
    const int count = score_pose(refined, corrs, size, params.inlier_threshold, &mask, &cand);
    if (count < params.min_inliers) break;
    const bool grew = count > result.num_inliers;
    result.pose = refined;
    result.inliers = std::move(mask);
    result.best_candidate = std::move(cand);
    result.num_inliers = count;
    if (!grew) break;
  }
  return result;
}

namespace {

Eigen::Matrix3d normalizing_transform(std::span<const Pixel> points) {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  double spread = 0.0;
  for (const auto& p : points) spread += (p - mean).norm();
  spread /= static_cast<double>(points.size());
  const double s = spread > 0.0 ? std::sqrt(2.0) / spread : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
  return t;
}

bool collinear(const Pixel& a, const Pixel& b, const Pixel& c) {
  const Eigen::Vector2d u = b - a, v = c - a;
  const double cross = u.x() * v.y() - u.y() * v.x();
  return std::abs(cross) <= 1e-6 * u.norm() * v.norm();
}

bool degenerate_sample(const std::array<Pixel, 4>& p) {
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      for (int k = j + 1; k < 4; ++k)
        if (collinear(p[i], p[j], p[k])) return true;
  return false;
}

double transfer_error(const Eigen::Matrix3d& h, const Eigen::Matrix3d& h_inv, const PixelPair& pair) {
  try {
    const double forward = (apply_homography(h, pair.from) - pair.to).norm();
    const double backward = (apply_homography(h_inv, pair.to) - pair.from).norm();
    return std::max(forward, backward);
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
}

int score_homography(const Eigen::Matrix3d& h, std::span<const PixelPair> pairs, double threshold,
                     std::vector<char>* mask) {
  const Eigen::Matrix3d h_inv = h.inverse();
  int count = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const bool inlier = transfer_error(h, h_inv, pairs[i]) < threshold;
    count += inlier;
    if (mask) (*mask)[i] = inlier;
  }
  return count;
}

}  // namespace

Eigen::Matrix3d fit_homography(std::span<const PixelPair> pairs) {
  if (pairs.size() < 4) throw Error(ErrorCode::Degenerate, "homography needs four pairs");
  std::vector<Pixel> from, to;
  for (const auto& p : pairs) {
    from.push_back(p.from);
    to.push_back(p.to);
  }
  const Eigen::Matrix3d t_from = normalizing_transform(from);
  const Eigen::Matrix3d t_to = normalizing_transform(to);

  Eigen::MatrixXd a(2 * pairs.size(), 9);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Eigen::Vector3d x = t_from * from[i].homogeneous();
    const Eigen::Vector3d y = t_to * to[i].homogeneous();
    a.row(2 * i) << 0, 0, 0, -y.z() * x.transpose(), y.y() * x.transpose();
    a.row(2 * i + 1) << y.z() * x.transpose(), 0, 0, 0, -y.x() * x.transpose();
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd v = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  const Eigen::Matrix3d h = t_to.inverse() * hn * t_from;
  if (std::abs(h(2, 2)) < 1e-12 || !h.allFinite())
    throw Error(ErrorCode::Degenerate, "homography with vanishing H(2,2)");
  return h / h(2, 2);
}

HomographyRansacResult ransac_homography(std::span<const PixelPair> pairs, const RansacParams& params) {
  validate(params);
  const auto n = pairs.size();
  if (n < 4 || static_cast<int>(n) < params.min_inliers)
    throw Error(ErrorCode::NotEnoughInliers, "too few pairs for homography RANSAC");

  Rng rng(params.seed);
  std::vector<std::array<int, 4>> samples(params.max_iterations);
  std::vector<int> order(n);
  for (auto& s : samples) {
    std::iota(order.begin(), order.end(), 0);
    for (int k = 0; k < 4; ++k) {
      const auto pick = k + rng.uniform_index(n - k);
      std::swap(order[k], order[pick]);
      s[k] = order[k];
    }
  }

  int best_count = -1;
  Eigen::Matrix3d best_h = Eigen::Matrix3d::Identity();
  int budget = params.max_iterations;
  for (int it = 0; it < budget; ++it) {
    std::array<Pixel, 4> from, to;
    std::array<PixelPair, 4> sample;
    for (int k = 0; k < 4; ++k) {
      sample[k] = pairs[samples[it][k]];
      from[k] = sample[k].from;
      to[k] = sample[k].to;
    }
    if (degenerate_sample(from) || degenerate_sample(to)) continue;
    Eigen::Matrix3d h;
    try {
      h = fit_homography(sample);
    } catch (const Error&) {
      continue;
    }
    if (std::abs(h.determinant()) < 1e-12) continue;
    const int count = score_homography(h, pairs, params.inlier_threshold, nullptr);
    if (count > best_count) {
      best_count = count;
      best_h = h;
      if (params.early_exit)
        budget = std::min(params.max_iterations,
                          std::max(it + 1, required_iterations(static_cast<double>(count) / n, 4,
                                                               params.confidence, params.max_iterations)));
    }
  }
  if (best_count < 0) throw Error(ErrorCode::Degenerate, "every homography sample was degenerate");
  if (best_count < params.min_inliers)
    throw Error(ErrorCode::NotEnoughInliers, "best homography has too few inliers");

  HomographyRansacResult result;
  result.inliers.assign(n, 0);
  result.h = best_h;
  result.num_inliers = score_homography(best_h, pairs, params.inlier_threshold, &result.inliers);

  std::vector<PixelPair> inlier_pairs;
  for (std::size_t i = 0; i < n; ++i)
    if (result.inliers[i]) inlier_pairs.push_back(pairs[i]);
  try {
    const Eigen::Matrix3d refit = fit_homography(inlier_pairs);
    std::vector<char> mask(n, 0);
    const int count = score_homography(refit, pairs, params.inlier_threshold, &mask);
    if (count >= result.num_inliers) {
      result.h = refit;
      result.inliers = std::move(mask);
      result.num_inliers = count;
    }
  } catch (const Error&) {
    // Keep the sampled hypothesis.
  }
  return result;
}

}  // namespace ptz
