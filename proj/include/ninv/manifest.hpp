#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ninv/config.hpp"

namespace ninv {

inline constexpr int kManifestVersion = 1;

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// manifest.json for one run directory: resolved config, seed, artifact
/// hashes, wall-clock per phase and headline metrics.
class RunManifest {
 public:
  using Metric = std::variant<double, std::int64_t, bool, std::string>;

  RunManifest(std::string command, const RunConfig& config, std::filesystem::path out_dir);

  // Path relative to the run directory; hashed when the manifest is written.
  void artifact(const std::filesystem::path& relative);
  void metric(const std::string& name, Metric value);
  void phase(const std::string& name, double seconds);

  void write() const;
  std::filesystem::path path() const { return out_dir_ / "manifest.json"; }

 private:
  std::string command_;
  const RunConfig& config_;
  std::filesystem::path out_dir_;
  std::vector<std::filesystem::path> artifacts_;
  std::vector<std::pair<std::string, Metric>> metrics_;
  std::vector<std::pair<std::string, double>> phases_;
};

/// Records the wall-clock time of a scope as a manifest phase.
class PhaseTimer {
 public:
  PhaseTimer(RunManifest& manifest, std::string name)
      : manifest_(manifest), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
  ~PhaseTimer() {
    manifest_.phase(name_, std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count());
  }
  PhaseTimer(const PhaseTimer&) = delete;
  PhaseTimer& operator=(const PhaseTimer&) = delete;

 private:
  RunManifest& manifest_;
  std::string name_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace ninv
