#pragma once

// Checkpoint layout:
//
//   SNSTEG1
//   config <k>            followed by k lines key=value (network config, seed, epoch, meta.*)
//   arrays <m>            followed by m blocks:
//   array <name> <n> <c> <h> <w>
//   <n*c*h*w little-endian float32 values>
//   end
//
// Arrays are the trainable parameters, the normalization statistics and the momentum
// buffers (prefixed "velocity/").

#include <filesystem>
#include <map>
#include <string>

#include "snsteg/training.hpp"

namespace snsteg {

inline constexpr const char* kCheckpointMagic = "SNSTEG1";

struct Checkpoint {
    TrainState state;
    std::map<std::string, std::string> meta;  // free-form run metadata
};

std::string encode_checkpoint(TrainState& state, const std::map<std::string, std::string>& meta = {});
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, TrainState& state,
                     const std::map<std::string, std::string>& meta = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace snsteg
