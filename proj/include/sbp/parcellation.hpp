#pragma once

#include <string>
#include <vector>

#include "sbp/common.hpp"

namespace sbp {

// Disjoint, exhaustive assignment of p voxels to K nodes.
struct Parcellation {
    std::vector<int> labels;  // values in [0, k)
    int k = 0;

    int p() const { return static_cast<int>(labels.size()); }

    void validate() const {
        require(k >= 1, "InvalidLabels", "parcellation needs k >= 1");
        require(!labels.empty(), "InvalidLabels", "parcellation has no voxels");
        for (int v : labels)
            require(v >= 0 && v < k, "InvalidLabels",
                    "label " + std::to_string(v) + " outside [0," + std::to_string(k) + ")");
    }

    std::vector<int> node_sizes() const {
        std::vector<int> sizes(static_cast<size_t>(k), 0);
        for (int v : labels) ++sizes[static_cast<size_t>(v)];
        return sizes;
    }

    // Member voxel indices per node, ascending within each node.
    std::vector<std::vector<int>> node_members() const {
        std::vector<std::vector<int>> members(static_cast<size_t>(k));
        for (size_t j = 0; j < labels.size(); ++j)
            members[static_cast<size_t>(labels[j])].push_back(static_cast<int>(j));
        return members;
    }
};

}  // namespace sbp
