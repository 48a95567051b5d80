#include "ninv/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <json.hpp>
#include <memory>

namespace ninv {

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "' for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("sha256 init failed");
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

RunManifest::RunManifest(std::string command, const RunConfig& config, std::filesystem::path out_dir)
    : command_(std::move(command)), config_(config), out_dir_(std::move(out_dir)) {}

void RunManifest::artifact(const std::filesystem::path& relative) { artifacts_.push_back(relative); }

void RunManifest::metric(const std::string& name, Metric value) { metrics_.emplace_back(name, std::move(value)); }

void RunManifest::phase(const std::string& name, double seconds) { phases_.emplace_back(name, seconds); }

void RunManifest::write() const {
  nlohmann::ordered_json j;
  j["format_version"] = kManifestVersion;
  j["command"] = command_;
  j["seed"] = config_.count("seed");
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& k : config_keys()) cfg[k.name] = config_.get(k.name);
  j["config"] = cfg;
  nlohmann::ordered_json arts = nlohmann::ordered_json::array();
  for (const auto& a : artifacts_) {
    arts.push_back({{"path", a.generic_string()}, {"sha256", sha256_file(out_dir_ / a)}});
  }
  j["artifacts"] = arts;
  nlohmann::ordered_json phases = nlohmann::ordered_json::array();
  for (const auto& [name, secs] : phases_) phases.push_back({{"name", name}, {"seconds", secs}});
  j["phases"] = phases;
  nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
  for (const auto& [name, value] : metrics_) {
    std::visit([&](const auto& v) { metrics[name] = v; }, value);
  }
  j["metrics"] = metrics;
  std::ofstream out(path(), std::ios::binary);
  if (!out) throw IoError("cannot write '" + path().string() + "'");
  out << j.dump(2) << "\n";
}

}  // namespace ninv
