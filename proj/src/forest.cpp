#include "ptz/forest.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "ptz/error.hpp"

namespace ptz {

void validate(const ForestParams& p) {
  if (p.num_trees_initial < 1 || p.max_depth < 1 || p.min_samples_leaf < 1 || p.candidate_splits_per_node < 1 ||
      p.max_trees < 1)
    throw Error(ErrorCode::InvalidArgument, "forest counts must be at least 1");
  if (!(p.correctness_ratio > 0.0 && p.correctness_ratio < 1.0))
    throw Error(ErrorCode::InvalidArgument, "correctness_ratio must be in (0, 1)");
  if (!(p.correctness_angle_deg > 0.0)) throw Error(ErrorCode::InvalidArgument, "correctness angle must be positive");
}

double ray_sse(std::span<const TrainingExample> examples, std::span<const int> members) {
  if (members.empty()) return 0.0;
  double st = 0, sp = 0, st2 = 0, sp2 = 0;
  for (int i : members) {
    const Ray& r = examples[i].ray;
    st += r.theta;
    sp += r.phi;
  }
  const double n = static_cast<double>(members.size());
  const double mt = st / n, mp = sp / n;
  for (int i : members) {
    const Ray& r = examples[i].ray;
    st2 += (r.theta - mt) * (r.theta - mt);
    sp2 += (r.phi - mp) * (r.phi - mp);
  }
  return st2 + sp2;
}

int Tree::leaf_for(const Eigen::VectorXd& descriptor) const {
  int n = 0;
  while (!nodes[n].is_leaf()) n = descriptor(nodes[n].split_dim) < nodes[n].threshold ? nodes[n].left : nodes[n].right;
  return n;
}

int Tree::depth() const {
  int d = 0;
  for (const auto& n : nodes) d = std::max(d, n.depth);
  return d;
}

namespace {

void set_leaf_means(TreeNode& leaf, std::span<const TrainingExample> examples) {
  leaf.count = static_cast<int>(leaf.members.size());
  leaf.mean_descriptor = Eigen::VectorXd::Zero(examples[leaf.members.front()].descriptor.size());
  double t = 0, p = 0;
  for (int i : leaf.members) {
    leaf.mean_descriptor += examples[i].descriptor;
    t += examples[i].ray.theta;
    p += examples[i].ray.phi;
  }
  const double n = leaf.count;
  leaf.mean_descriptor /= n;
  leaf.mean_ray = {t / n, p / n};
}

// Splits leaf `node` by the best of the sampled candidates and keeps
// growing its children; does nothing when no candidate has positive gain.
// Returns the number of splits made.
int grow(Tree& tree, int node, std::span<const TrainingExample> examples, const ForestParams& params, Rng& rng) {
  const int min_leaf = params.min_samples_leaf;
  {
    const TreeNode& n = tree.nodes[node];
    if (n.depth >= params.max_depth || static_cast<int>(n.members.size()) < 2 * min_leaf) return 0;
  }
  const std::vector<int> members = tree.nodes[node].members;
  const auto dim = examples[members.front()].descriptor.size();
  const double total = ray_sse(examples, members);

  double best_gain = 0.0;
  int best_dim = -1;
  double best_threshold = 0.0;
  std::vector<int> left, right;
  for (int c = 0; c < params.candidate_splits_per_node; ++c) {
    const int d = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(dim)));
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int i : members) {
      lo = std::min(lo, examples[i].descriptor(d));
      hi = std::max(hi, examples[i].descriptor(d));
    }
    const double threshold = rng.uniform(lo, hi);
    if (!(hi > lo)) continue;
    left.clear();
    right.clear();
    for (int i : members) (examples[i].descriptor(d) < threshold ? left : right).push_back(i);
    if (static_cast<int>(left.size()) < min_leaf || static_cast<int>(right.size()) < min_leaf) continue;
    const double gain = total - ray_sse(examples, left) - ray_sse(examples, right);
    if (gain > best_gain + 1e-12 * (1.0 + total)) {
      best_gain = gain;
      best_dim = d;
      best_threshold = threshold;
    }
  }
  if (best_dim < 0) return 0;

  TreeNode l, r;
  l.depth = r.depth = tree.nodes[node].depth + 1;
  for (int i : members) (examples[i].descriptor(best_dim) < best_threshold ? l : r).members.push_back(i);
  set_leaf_means(l, examples);
  set_leaf_means(r, examples);
  const int li = static_cast<int>(tree.nodes.size());
  tree.nodes.push_back(std::move(l));
  tree.nodes.push_back(std::move(r));
  TreeNode& parent = tree.nodes[node];
  parent.split_dim = best_dim;
  parent.threshold = best_threshold;
  parent.left = li;
  parent.right = li + 1;
  parent.members.clear();
  parent.members.shrink_to_fit();
  parent.mean_descriptor.resize(0);
  int splits = 1;
  splits += grow(tree, li, examples, params, rng);
  splits += grow(tree, li + 1, examples, params, rng);
  return splits;
}

Tree train_on(std::span<const TrainingExample> examples, std::vector<int> members, const ForestParams& params,
              Rng& rng) {
  Tree tree;
  TreeNode root;
  root.members = std::move(members);
  set_leaf_means(root, examples);
  tree.nodes.push_back(std::move(root));
  grow(tree, 0, examples, params, rng);
  return tree;
}

Rng tree_rng(const ForestParams& params, std::uint64_t index) { return Rng(params.seed, 0x7000000000ULL + index); }
Rng update_rng(const ForestParams& params, std::uint64_t index) { return Rng(params.seed, 0x9000000000ULL + index); }

void check_dims(std::span<const TrainingExample> examples, int dim) {
  for (const auto& e : examples)
    if (e.descriptor.size() != dim) throw Error(ErrorCode::InvalidArgument, "descriptor dimension mismatch");
}

}  // namespace

Tree train_tree(std::span<const TrainingExample> examples, const ForestParams& params, Rng& rng) {
  validate(params);
  if (examples.empty()) throw Error(ErrorCode::InvalidArgument, "train_tree needs at least one example");
  check_dims(examples, static_cast<int>(examples.front().descriptor.size()));
  std::vector<int> members(examples.size());
  std::iota(members.begin(), members.end(), 0);
  return train_on(examples, std::move(members), params, rng);
}

void ExampleReservoir::append(std::span<const TrainingExample> batch, int keyframe_id) {
  examples.insert(examples.end(), batch.begin(), batch.end());
  keyframe_ids.insert(keyframe_ids.end(), batch.size(), keyframe_id);
}

Forest train_forest(std::span<const TrainingExample> examples, const ForestParams& params) {
  validate(params);
  if (examples.empty()) throw Error(ErrorCode::InvalidArgument, "train_forest needs at least one example");
  Forest forest;
  forest.descriptor_dim = static_cast<int>(examples.front().descriptor.size());
  check_dims(examples, forest.descriptor_dim);
  forest.pool.assign(examples.begin(), examples.end());
  std::vector<int> members(examples.size());
  std::iota(members.begin(), members.end(), 0);
  for (int t = 0; t < params.num_trees_initial; ++t) {
    Rng rng = tree_rng(params, forest.trees_created++);
    forest.trees.push_back(train_on(forest.pool, members, params, rng));
  }
  return forest;
}

std::vector<Ray> forest_predict(const Forest& forest, const Eigen::VectorXd& descriptor) {
  std::vector<Ray> rays;
  rays.reserve(forest.trees.size());
  for (const auto& t : forest.trees) rays.push_back(t.nodes[t.leaf_for(descriptor)].mean_ray);
  return rays;
}

double forest_correctness(const Forest& forest, std::span<const TrainingExample> examples, double angle_deg) {
  if (examples.empty()) return 0.0;
  int correct = 0;
  for (const auto& e : examples) {
    for (const auto& r : forest_predict(forest, e.descriptor)) {
      if (ray_angle(r, e.ray) <= angle_deg) {
        ++correct;
        break;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

const char* to_string(UpdateDecision::Branch branch) {
  return branch == UpdateDecision::Branch::UpdateTree ? "update_tree" : "add_tree";
}

UpdateDecision online_update(Forest& forest, ExampleReservoir& reservoir,
                             std::span<const TrainingExample> new_examples, int keyframe_id,
                             const ForestParams& params) {
  validate(params);
  if (new_examples.empty()) throw Error(ErrorCode::InvalidArgument, "online_update needs new examples");
  UpdateDecision decision;
  if (forest.trees.empty()) {
    forest = train_forest(new_examples, params);
    reservoir.append(new_examples, keyframe_id);
    decision.branch = UpdateDecision::Branch::AddTree;
    decision.tree = 0;
    return decision;
  }
  check_dims(new_examples, forest.descriptor_dim);
  decision.correctness = forest_correctness(forest, new_examples, params.correctness_angle_deg);
  Rng rng = update_rng(params, forest.updates++);

  if (decision.correctness >= params.correctness_ratio) {
    decision.branch = UpdateDecision::Branch::UpdateTree;
    decision.tree = static_cast<int>(rng.uniform_index(forest.trees.size()));
    Tree& tree = forest.trees[decision.tree];
    std::vector<int> touched;
    for (const auto& e : new_examples) {
      const int idx = static_cast<int>(forest.pool.size());
      forest.pool.push_back(e);
      const int leaf = tree.leaf_for(e.descriptor);
      TreeNode& n = tree.nodes[leaf];
      n.members.push_back(idx);
      n.count += 1;
      const double inv = 1.0 / n.count;
      n.mean_descriptor += (e.descriptor - n.mean_descriptor) * inv;
      n.mean_ray.theta += (e.ray.theta - n.mean_ray.theta) * inv;
      n.mean_ray.phi += (e.ray.phi - n.mean_ray.phi) * inv;
      touched.push_back(leaf);
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    for (int leaf : touched) {
      const TreeNode& n = tree.nodes[leaf];
      if (n.count > 2 * params.min_samples_leaf && n.depth < params.max_depth)
        decision.leaves_split += grow(tree, leaf, forest.pool, params, rng);
    }
  } else {
    decision.branch = UpdateDecision::Branch::AddTree;
    std::vector<int> members;
    const int offset = static_cast<int>(forest.pool.size());
    for (std::size_t i = 0; i < new_examples.size(); ++i) {
      forest.pool.push_back(new_examples[i]);
      members.push_back(offset + static_cast<int>(i));
    }
    // Uniform sample without replacement from earlier keyframes.
    std::vector<std::size_t> order(reservoir.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t take = std::min(order.size(), new_examples.size());
    for (std::size_t i = 0; i < take; ++i) {
      std::swap(order[i], order[i + rng.uniform_index(order.size() - i)]);
      members.push_back(static_cast<int>(forest.pool.size()));
      forest.pool.push_back(reservoir.examples[order[i]]);
    }
    Rng trng = tree_rng(params, forest.trees_created++);
    forest.trees.push_back(train_on(forest.pool, std::move(members), params, trng));
    if (static_cast<int>(forest.trees.size()) > params.max_trees) {
      forest.trees.erase(forest.trees.begin());
      decision.dropped_tree = 0;
    }
    decision.tree = static_cast<int>(forest.trees.size()) - 1;
  }
  reservoir.append(new_examples, keyframe_id);
  return decision;
}

// --- serialization ---------------------------------------------------------

namespace {

using nlohmann::json;
constexpr int kForestVersion = 1;

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void save_forest(const Forest& forest, const std::filesystem::path& path) {
  json j;
  j["format"] = "ptz-forest";
  j["version"] = kForestVersion;
  j["descriptor_dim"] = forest.descriptor_dim;
  j["trees_created"] = forest.trees_created;
  j["updates"] = forest.updates;
  // Only examples still referenced by a leaf are written; indices remapped.
  std::vector<int> remap(forest.pool.size(), -1);
  json pool = json::array();
  for (const auto& t : forest.trees)
    for (const auto& n : t.nodes)
      for (int m : n.members)
        if (remap[m] < 0) {
          remap[m] = static_cast<int>(pool.size());
          pool.push_back({{"descriptor", vec_json(forest.pool[m].descriptor)},
                          {"ray", {forest.pool[m].ray.theta, forest.pool[m].ray.phi}}});
        }
  j["pool"] = std::move(pool);
  json trees = json::array();
  for (const auto& t : forest.trees) {
    json nodes = json::array();
    for (const auto& n : t.nodes) {
      json jn{{"depth", n.depth}};
      if (n.is_leaf()) {
        std::vector<int> members;
        for (int m : n.members) members.push_back(remap[m]);
        jn["count"] = n.count;
        jn["mean_ray"] = {n.mean_ray.theta, n.mean_ray.phi};
        jn["mean_descriptor"] = vec_json(n.mean_descriptor);
        jn["members"] = members;
      } else {
        jn["split_dim"] = n.split_dim;
        jn["threshold"] = n.threshold;
        jn["left"] = n.left;
        jn["right"] = n.right;
      }
      nodes.push_back(std::move(jn));
    }
    trees.push_back({{"nodes", std::move(nodes)}});
  }
  j["trees"] = std::move(trees);

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp);
    out << j.dump();
    if (!out) throw Error(ErrorCode::Io, "write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Forest load_forest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
    if (j.at("format") != "ptz-forest") throw Error(ErrorCode::Io, "not a forest file: " + path.string());
    if (j.at("version").get<int>() != kForestVersion)
      throw Error(ErrorCode::Io, "unsupported forest version in " + path.string());
    Forest f;
    f.descriptor_dim = j.at("descriptor_dim");
    f.trees_created = j.at("trees_created");
    f.updates = j.at("updates");
    for (const auto& e : j.at("pool"))
      f.pool.push_back({json_vec(e.at("descriptor")), {e.at("ray")[0], e.at("ray")[1]}});
    for (const auto& jt : j.at("trees")) {
      Tree t;
      for (const auto& jn : jt.at("nodes")) {
        TreeNode n;
        n.depth = jn.at("depth");
        if (jn.contains("split_dim")) {
          n.split_dim = jn.at("split_dim");
          n.threshold = jn.at("threshold");
          n.left = jn.at("left");
          n.right = jn.at("right");
        } else {
          n.count = jn.at("count");
          n.mean_ray = {jn.at("mean_ray")[0], jn.at("mean_ray")[1]};
          n.mean_descriptor = json_vec(jn.at("mean_descriptor"));
          n.members = jn.at("members").get<std::vector<int>>();
        }
        t.nodes.push_back(std::move(n));
      }
      f.trees.push_back(std::move(t));
    }
    return f;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, "malformed forest file " + path.string() + ": " + e.what());
  }
}

// --- relocalization --------------------------------------------------------

namespace {

// Column-per-descriptor matrix.
Eigen::MatrixXd stack_descriptors(std::span<const Eigen::VectorXd> descriptors, Eigen::Index dim) {
  Eigen::MatrixXd m(dim, static_cast<Eigen::Index>(descriptors.size()));
  for (std::size_t i = 0; i < descriptors.size(); ++i) m.col(i) = descriptors[i];
  return m;
}

struct Nearest {
  std::vector<int> index;
  std::vector<double> distance;
};

// For each query column, the nearest database column.
Nearest nearest_neighbours(const Eigen::MatrixXd& database, const Eigen::MatrixXd& queries) {
  Nearest out;
  out.index.assign(queries.cols(), -1);
  out.distance.assign(queries.cols(), std::numeric_limits<double>::infinity());
  if (database.cols() == 0) return out;
  const Eigen::VectorXd db_sq = database.colwise().squaredNorm().transpose();
  const Eigen::MatrixXd dots = database.transpose() * queries;
  for (Eigen::Index q = 0; q < queries.cols(); ++q) {
    const double qn = queries.col(q).squaredNorm();
    Eigen::Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < database.cols(); ++i) {
      const double d = db_sq(i) - 2.0 * dots(i, q) + qn;
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    out.index[q] = static_cast<int>(best);
    out.distance[q] = std::sqrt(std::max(0.0, best_d));
  }
  return out;
}

Eigen::MatrixXd query_matrix(std::span<const Observation> query, Eigen::Index dim) {
  Eigen::MatrixXd m(dim, static_cast<Eigen::Index>(query.size()));
  for (std::size_t i = 0; i < query.size(); ++i) {
    if (query[i].descriptor.size() != dim) throw Error(ErrorCode::InvalidArgument, "descriptor dimension mismatch");
    m.col(i) = query[i].descriptor;
  }
  return m;
}

Eigen::MatrixXd keyframe_matrix(const Keyframe& kf, Eigen::Index dim) {
  std::vector<Eigen::VectorXd> d;
  for (const auto& o : kf.observations) d.push_back(o.descriptor);
  return stack_descriptors(d, dim);
}

[[noreturn]] void not_enough(const char* what) { throw Error(ErrorCode::NotEnoughInliers, what); }

}  // namespace

PoseRansacResult relocalize_forest(const Forest& forest, std::span<const Observation> observations,
                                   const ImageSize& size, const RansacParams& ransac) {
  if (forest.trees.empty()) not_enough("empty forest");
  if (observations.size() < 2) not_enough("fewer than two observations");
  std::vector<Correspondence> corr;
  corr.reserve(observations.size());
  for (const auto& o : observations) corr.push_back({o.pixel, forest_predict(forest, o.descriptor)});
  return ransac_pose(corr, size, ransac);
}

int select_keyframe(std::span<const Keyframe> keyframes, std::span<const Observation> query, double max_dist) {
  if (query.empty()) return -1;
  const auto dim = query.front().descriptor.size();
  const Eigen::MatrixXd q = query_matrix(query, dim);
  int best = -1, best_count = 0;
  for (std::size_t k = 0; k < keyframes.size(); ++k) {
    const auto nn = nearest_neighbours(keyframe_matrix(keyframes[k], dim), q);
    const int count = static_cast<int>(
        std::count_if(nn.distance.begin(), nn.distance.end(), [&](double d) { return d <= max_dist; }));
    if (count > best_count) {
      best_count = count;
      best = static_cast<int>(k);
    }
  }
  return best;
}

PoseRansacResult relocalize_keyframe(std::span<const Keyframe> keyframes, std::span<const Observation> query,
                                     const ImageSize& size, const RansacParams& ransac, double max_dist) {
  if (keyframes.empty()) throw Error(ErrorCode::InvalidArgument, "no keyframes");
  const int k = select_keyframe(keyframes, query, max_dist);
  if (k < 0) not_enough("no descriptor matches to any keyframe");
  const auto& kf = keyframes[k];
  const auto dim = query.front().descriptor.size();
  const auto nn = nearest_neighbours(keyframe_matrix(kf, dim), query_matrix(query, dim));
  std::vector<Correspondence> corr;
  for (std::size_t i = 0; i < query.size(); ++i) {
    if (nn.distance[i] > max_dist) continue;
    try {
      corr.push_back({query[i].pixel, {back_project(kf.pose, size, kf.observations[nn.index[i]].pixel)}});
    } catch (const Error&) {
    }
  }
  return ransac_pose(corr, size, ransac);
}

PoseRansacResult relocalize_nns(const ExampleReservoir& reservoir, std::span<const Observation> query,
                                const ImageSize& size, const RansacParams& ransac) {
  if (reservoir.examples.empty()) throw Error(ErrorCode::InvalidArgument, "empty reservoir");
  if (query.empty()) not_enough("empty query");
  const auto dim = reservoir.examples.front().descriptor.size();
  Eigen::MatrixXd db(dim, static_cast<Eigen::Index>(reservoir.size()));
  for (std::size_t i = 0; i < reservoir.size(); ++i) db.col(i) = reservoir.examples[i].descriptor;
  const auto nn = nearest_neighbours(db, query_matrix(query, dim));
  std::vector<Correspondence> corr;
  for (std::size_t i = 0; i < query.size(); ++i) corr.push_back({query[i].pixel, {reservoir.examples[nn.index[i]].ray}});
  return ransac_pose(corr, size, ransac);
}

}  // namespace ptz
