#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "segfuse/tensor.hpp"

namespace segfuse {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Checkpoint file: magic, 8-byte little-endian header length, JSON header
// (topology, shapes, seed, payload offsets), then raw little-endian float64
// parameter payloads.
void save_checkpoint(const std::string& path, const nlohmann::json& topology,
                     const std::vector<NamedTensor>& params, std::uint64_t seed);

struct Checkpoint {
    nlohmann::json topology;
    std::uint64_t seed = 0;
    std::map<std::string, Tensor> params;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace segfuse
