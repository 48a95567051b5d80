#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ninv/tensor.hpp"

namespace ninv {

class CheckpointMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class CheckpointVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class CheckpointCrcError : public FormatError {
 public:
  using FormatError::FormatError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// On-disk model. The seed and metadata travel inside the descriptor string
/// as "seed=..." and "meta.<key>=..." tokens.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string architecture;  // whitespace-separated key=value tokens
  std::uint64_t seed = 0;
  std::map<std::string, std::string> metadata;
  std::vector<NamedTensor> tensors;

  const Tensor& tensor(const std::string& name) const;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Splits "kind k1=v1 k2=v2" into {"": kind, "k1": v1, ...}.
std::map<std::string, std::string> parse_descriptor(const std::string& descriptor);

}  // namespace ninv
