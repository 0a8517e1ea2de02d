#pragma once

#include <string>
#include <utility>
#include <vector>

#include "poselift/errors.hpp"

namespace poselift {

/// Kinematic tree metadata shared by poses, metrics and the data generator.
struct Skeleton {
    std::vector<std::string> joint_names;
    std::vector<int> parent; // parent[root] == root
    std::vector<std::pair<int, int>> left_right_pairs; // (left, right)

    int num_joints() const { return static_cast<int>(parent.size()); }
    int root() const;

    /// Joints that have a parent other than themselves, ascending; one per bone.
    std::vector<int> bone_children() const;
    int num_bones() const { return num_joints() - 1; }

    void validate() const;
};

/// The 17-joint skeleton used by the synthetic generator and the defaults.
Skeleton h36m_skeleton();

} // namespace poselift
