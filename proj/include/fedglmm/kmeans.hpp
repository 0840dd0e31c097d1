#pragma once

// Lloyd's k-means with deterministic k-means++ style seeding, used to split
// simulated samples into sites along their ancestry structure.

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace fedglmm::sim {

// `features` is n x d (one row per sample). Returns one label in [0, k) per
// sample; every cluster is non-empty (an emptied cluster is re-seeded from
// the point farthest from its center). Iterates until the assignment is
// stable or max_iterations is hit. Throws ParamError when k < 1, k > n, or
// d < 1.
std::vector<int> kmeans_partition(const Eigen::MatrixXd& features, int k, std::uint64_t seed,
                                  int max_iterations = 300);

}  // namespace fedglmm::sim
