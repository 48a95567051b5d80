#include "ninv/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ninv/data.hpp"

namespace ninv {

namespace {

using K = KeyType;

std::vector<KeyDef> build_keys() {
  return {
      {"seed", K::Count, "1", {}},

      {"data.source", K::Choice, "synth", {"synth", "idx"}},
      {"data.name", K::Text, "", {}},
      {"data.family", K::Choice, "bars", {"bars", "crosses", "blobs", "rings"}},
      {"data.classes", K::Count, "3", {}},
      {"data.shape", K::Shape, "1x12x12", {}},
      {"data.noise", K::Weight, "0.1", {}},
      {"data.train_size", K::Count, "300", {}},
      {"data.test_size", K::Count, "300", {}},
      {"data.train_images", K::Path, "", {}},
      {"data.train_labels", K::Path, "", {}},
      {"data.test_images", K::Path, "", {}},
      {"data.test_labels", K::Path, "", {}},

      {"classifier.kind", K::Choice, "mlp", {"mlp", "cnn"}},
      {"classifier.mlp_hidden", K::Counts, "256,128", {}},
      {"classifier.cnn_hidden", K::Counts, "64", {}},
      {"classifier.filters", K::Counts, "8,16", {}},
      {"classifier.kernel", K::Count, "3", {}},
      {"classifier.slope", K::Weight, "0.01", {}},
      {"classifier.checkpoint", K::Path, "", {}},

      {"train.epochs", K::Count, "20", {}},
      {"train.batch_size", K::Count, "64", {}},
      {"train.lr", K::Weight, "0.001", {}},
      {"train.weight_decay", K::Weight, "0", {}},

      {"generator.z_dim", K::Count, "64", {}},
      {"generator.condition", K::Choice, "hidden", {"hidden", "hot"}},
      {"generator.condition_dim", K::Count, "32", {}},
      {"generator.dropout", K::Weight, "0.5", {}},
      {"generator.hidden", K::Counts, "128,256", {}},
      {"generator.slope", K::Weight, "0.2", {}},

      {"inversion.alpha", K::Weight, "1", {}},
      {"inversion.beta", K::Weight, "1", {}},
      {"inversion.gamma", K::Weight, "0.5", {}},
      {"inversion.delta", K::Weight, "0.1", {}},
      {"inversion.smoothing", K::Weight, "0.1", {}},
      {"inversion.batch_size", K::Count, "32", {}},
      {"inversion.steps", K::Count, "2000", {}},
      {"inversion.lr", K::Weight, "0.001", {}},
      {"inversion.eval_every", K::Count, "250", {}},
      {"inversion.eval_samples", K::Count, "300", {}},
      {"inversion.target_accuracy", K::Weight, "0.9", {}},
      {"inversion.grid_per_class", K::Count, "10", {}},

      {"recon.condition", K::Choice, "hot", {"hidden", "hot"}},
      {"recon.gamma", K::Weight, "0.25", {}},
      {"recon.alpha_pert", K::Weight, "1", {}},
      {"recon.beta_pert", K::Weight, "1", {}},
      {"recon.eta_var", K::Weight, "0.1", {}},
      {"recon.eta_pix", K::Weight, "1", {}},
      {"recon.eta_grad", K::Weight, "0.01", {}},
      {"recon.eps_pert", K::Weight, "0.05", {}},
      {"recon.steps", K::Count, "1500", {}},
      {"recon.per_class", K::Count, "20", {}},
      {"recon.holdout", K::Bool, "true", {}},

      {"ood.cycles", K::Count, "5", {}},
      {"ood.base_epochs", K::Count, "20", {}},
      {"ood.cycle_epochs", K::Count, "10", {}},
      {"ood.inversion_steps", K::Count, "500", {}},
      {"ood.noise_count", K::Count, "0", {}},
      {"ood.budget", K::Count, "0", {}},
      {"ood.capacity_factor", K::Count, "4", {}},
      {"ood.sample_dropout", K::Bool, "true", {}},
      {"ood.warmup_cycles", K::Count, "1", {}},
      {"ood.probes", K::Text, "noise,crosses", {}},
      {"ood.probe_size", K::Count, "300", {}},
      {"ood.grid_per_class", K::Count, "8", {}},

      {"evaluate.models", K::Text, "", {}},
      {"evaluate.trained_on", K::Text, "", {}},
      {"evaluate.datasets", K::Text, "", {}},
      {"evaluate.threshold_ood", K::Text, "", {}},
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const KeyDef* find_key(const std::string& name) {
  const auto& keys = config_keys();
  const auto it = std::find_if(keys.begin(), keys.end(), [&](const KeyDef& k) { return k.name == name; });
  return it == keys.end() ? nullptr : &*it;
}

bool parse_u64(const std::string& s, std::uint64_t& out) {
  if (s.empty() || s[0] == '-' || s[0] == '+') return false;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.data() + (s[0] == '+' ? 1 : 0);
  const auto [p, ec] = std::from_chars(begin, s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) out.push_back(trim(item));
  return out;
}

// Empty string when value fits the key, otherwise the reason.
std::string check_value(const KeyDef& k, const std::string& v) {
  switch (k.type) {
    case K::Count: {
      std::uint64_t u;
      return parse_u64(v, u) ? "" : "expected a non-negative integer";
    }
    case K::Weight: {
      double d;
      if (!parse_double(v, d)) return "expected a number";
      return std::isfinite(d) && d >= 0 ? "" : "must be finite and >= 0";
    }
    case K::Bool:
      return v == "true" || v == "false" ? "" : "expected true or false";
    case K::Text:
    case K::Path:
      return "";
    case K::Counts: {
      const auto items = split_commas(v);
      if (items.empty()) return "expected a comma-separated list of positive integers";
      for (const auto& item : items) {
        std::uint64_t u;
        if (!parse_u64(item, u) || u == 0) return "expected a comma-separated list of positive integers";
      }
      return "";
    }
    case K::Choice: {
      if (std::find(k.choices.begin(), k.choices.end(), v) != k.choices.end()) return "";
      std::string allowed;
      for (const auto& c : k.choices) allowed += (allowed.empty() ? "" : ", ") + c;
      return "expected one of: " + allowed;
    }
    case K::Shape:
      try {
        ImageShape::parse(v);
        return "";
      } catch (const Error&) {
        return "expected an image shape CxHxW";
      }
  }
  return "unsupported key type";
}

std::string join_errors(const std::vector<std::string>& errors) {
  std::string msg = std::to_string(errors.size()) + " configuration error" + (errors.size() == 1 ? "" : "s") + ":";
  for (const auto& e : errors) msg += "\n  " + e;
  return msg;
}

}  // namespace

const std::vector<KeyDef>& config_keys() {
  static const std::vector<KeyDef> keys = build_keys();
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::vector<std::string> errors;
  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back(where + "expected 'key = value', got '" + line + "'");
      continue;
    }
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const KeyDef* def = find_key(key);
    if (def == nullptr) {
      errors.push_back(where + "unknown key '" + key + "'");
      continue;
    }
    if (const auto it = seen.find(key); it != seen.end()) {
      errors.push_back(where + "duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
      continue;
    }
    seen[key] = lineno;
    if (const auto why = check_value(*def, value); !why.empty()) {
      errors.push_back(where + key + " = '" + value + "': " + why);
      continue;
    }
    cfg.values_[key] = value;
  }
  if (!errors.empty()) throw ConfigError(join_errors(errors));
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeyDef* def = find_key(key);
  if (def == nullptr) throw ConfigError("unknown key '" + key + "'");
  if (const auto why = check_value(*def, value); !why.empty()) {
    throw ConfigError(key + " = '" + value + "': " + why);
  }
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

std::uint64_t RunConfig::count(const std::string& key) const {
  std::uint64_t v = 0;
  if (!parse_u64(get(key), v)) throw ConfigError(key + " is not a non-negative integer");
  return v;
}

double RunConfig::real(const std::string& key) const {
  double v = 0;
  if (!parse_double(get(key), v)) throw ConfigError(key + " is not a number");
  return v;
}

bool RunConfig::flag(const std::string& key) const { return get(key) == "true"; }

std::vector<std::size_t> RunConfig::counts(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& item : split_commas(get(key))) {
    std::uint64_t v = 0;
    if (!parse_u64(item, v)) throw ConfigError(key + " is not a list of integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::vector<std::string> RunConfig::list(const std::string& key) const { return split_commas(get(key)); }

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + values_.at(k.name) + "\n";
  return out;
}

}  // namespace ninv
