#pragma once
// Pan-tilt regression forest: maps a keypoint descriptor to candidate rays.
// Also the two relocalization baselines (keyframe matching, nearest
// neighbour search over stored examples).

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "ptz/camera.hpp"
#include "ptz/ekf.hpp"
#include "ptz/pose_solvers.hpp"
#include "ptz/random.hpp"

namespace ptz {

struct TrainingExample {
  Eigen::VectorXd descriptor;
  Ray ray;
};

struct ForestParams {
  int num_trees_initial = 5;
  int max_depth = 32;
  int min_samples_leaf = 1;
  int candidate_splits_per_node = 32;
  double correctness_angle_deg = 0.1;
  double correctness_ratio = 0.5;
  int max_trees = 20;
  std::uint64_t seed = 0;
};

void validate(const ForestParams& params);

struct TreeNode {
  int split_dim = -1;  // -1 for a leaf
  double threshold = 0.0;
  int left = -1, right = -1;
  int depth = 0;
  // Leaf payload.
  Eigen::VectorXd mean_descriptor;
  Ray mean_ray;
  int count = 0;
  std::vector<int> members;  // example indices, kept so leaves can split later

  bool is_leaf() const { return split_dim < 0; }
};

/// Nodes in a flat array, root at 0. Member indices refer to the example
/// list the tree was trained on (for a forest: its example pool).
struct Tree {
  std::vector<TreeNode> nodes;
  int leaf_for(const Eigen::VectorXd& descriptor) const;
  int depth() const;
};

/// Sum over theta and phi of squared deviations from the mean (deg^2).
double ray_sse(std::span<const TrainingExample> examples, std::span<const int> members);

Tree train_tree(std::span<const TrainingExample> examples, const ForestParams& params, Rng& rng);

struct Forest {
  std::vector<Tree> trees;
  std::vector<TrainingExample> pool;  // every example referenced by a leaf
  std::uint64_t trees_created = 0;   // seeds per-tree streams
  std::uint64_t updates = 0;         // seeds per-update streams
  int descriptor_dim = 0;
};

/// Examples from accepted keyframes, append-only.
struct ExampleReservoir {
  std::vector<TrainingExample> examples;
  std::vector<int> keyframe_ids;
  void append(std::span<const TrainingExample> batch, int keyframe_id);
  std::size_t size() const { return examples.size(); }
};

Forest train_forest(std::span<const TrainingExample> examples, const ForestParams& params);

/// One ray per tree, in tree order.
std::vector<Ray> forest_predict(const Forest& forest, const Eigen::VectorXd& descriptor);

struct UpdateDecision {
  enum class Branch { UpdateTree, AddTree };
  Branch branch = Branch::UpdateTree;
  double correctness = 0.0;
  int tree = -1;              // tree updated, or index of the new tree
  int dropped_tree = -1;      // oldest tree removed to respect max_trees
  int leaves_split = 0;
};

const char* to_string(UpdateDecision::Branch branch);

/// Inserts a keyframe's examples. An empty forest is simply trained.
UpdateDecision online_update(Forest& forest, ExampleReservoir& reservoir,
                             std::span<const TrainingExample> new_examples, int keyframe_id,
                             const ForestParams& params);

/// Fraction of examples with at least one tree prediction within the angle.
double forest_correctness(const Forest& forest, std::span<const TrainingExample> examples, double angle_deg);

void save_forest(const Forest& forest, const std::filesystem::path& path);
Forest load_forest(const std::filesystem::path& path);

// --- relocalization --------------------------------------------------------

PoseRansacResult relocalize_forest(const Forest& forest, std::span<const Observation> observations,
                                   const ImageSize& size, const RansacParams& ransac);

struct Keyframe {
  int id = 0;
  int frame = 0;
  CameraPose pose;
  std::vector<Observation> observations;
};

/// Index of the keyframe with the most nearest-descriptor matches (within
/// max_dist) to the query; ties go to the earliest. -1 if none match.
int select_keyframe(std::span<const Keyframe> keyframes, std::span<const Observation> query, double max_dist);

PoseRansacResult relocalize_keyframe(std::span<const Keyframe> keyframes, std::span<const Observation> query,
                                     const ImageSize& size, const RansacParams& ransac, double max_dist);

PoseRansacResult relocalize_nns(const ExampleReservoir& reservoir, std::span<const Observation> query,
                                const ImageSize& size, const RansacParams& ransac);

}  // namespace ptz
