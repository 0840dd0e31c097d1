#include "fedglmm/kmeans.hpp"

#include <random>
#include <vector>

#include "fedglmm/errors.hpp"
#include "fedglmm/log.hpp"

namespace fedglmm::sim {

std::vector<int> kmeans_partition(const Eigen::MatrixXd& features, int k, std::uint64_t seed,
                                  int max_iterations) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (k < 1) throw ParamError("kmeans: k must be >= 1");
  if (static_cast<Eigen::Index>(k) > n) throw ParamError("kmeans: k exceeds the sample count");
  if (d < 1) throw ParamError("kmeans: features need at least one column");
  if (!features.allFinite()) throw ParamError("kmeans: features must be finite");
  if (max_iterations < 1) throw ParamError("kmeans: max_iterations must be >= 1");

  std::mt19937_64 rng(seed);
  Eigen::MatrixXd centers(k, d);

  // Seeding: first center uniform, every further center sampled with
  // probability proportional to the squared distance to the nearest center
  // already chosen.
  {
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centers.row(0) = features.row(first(rng));
    Eigen::VectorXd d2 = (features.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
      const double total = d2.sum();
      Eigen::Index chosen = n - 1;
      if (total > 0.0) {
        std::uniform_real_distribution<double> u(0.0, total);
        const double target = u(rng);
        double acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          acc += d2[i];
          if (target < acc) {
            chosen = i;
            break;
          }
        }
      } else {
        // every point coincides with an existing center
        std::uniform_int_distribution<Eigen::Index> any(0, n - 1);
        chosen = any(rng);
      }
      centers.row(c) = features.row(chosen);
      d2 = d2.cwiseMin((features.rowwise() - centers.row(c)).rowwise().squaredNorm());
    }
  }

  std::vector<int> labels(static_cast<size_t>(n), -1);
  std::vector<long> count(static_cast<size_t>(k), 0);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (features.row(i) - centers.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double dist = (features.row(i) - centers.row(c)).squaredNorm();
        if (dist < best_d) {  // ties keep the lowest center index
          best_d = dist;
          best = c;
        }
      }
      if (labels[static_cast<size_t>(i)] != best) {
        labels[static_cast<size_t>(i)] = best;
        changed = true;
      }
    }

    count.assign(static_cast<size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) ++count[static_cast<size_t>(labels[i])];
    for (int c = 0; c < k; ++c) {
      if (count[static_cast<size_t>(c)] != 0) continue;
      // Re-seed the emptied cluster from the farthest point of a cluster
      // that can spare one.
      Eigen::Index far = -1;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (count[static_cast<size_t>(labels[i])] <= 1) continue;
        const double dist = (features.row(i) - centers.row(labels[i])).squaredNorm();
        if (dist > far_d) {
          far_d = dist;
          far = i;
        }
      }
      if (far >= 0) {
        --count[static_cast<size_t>(labels[far])];
        labels[static_cast<size_t>(far)] = c;
        count[static_cast<size_t>(c)] = 1;
        centers.row(c) = features.row(far);
        changed = true;
      }
    }

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
    std::vector<long> members(static_cast<size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(labels[static_cast<size_t>(i)]) += features.row(i);
      ++members[static_cast<size_t>(labels[i])];
    }
    for (int c = 0; c < k; ++c) {
      if (members[static_cast<size_t>(c)] > 0) {
        centers.row(c) = sums.row(c) / static_cast<double>(members[static_cast<size_t>(c)]);
      }
    }
    if (!changed) {
      FEDGLMM_DEBUG("kmeans converged after %d iteration(s)", iter + 1);
      break;
    }
  }
  return labels;
}

}  // namespace fedglmm::sim
