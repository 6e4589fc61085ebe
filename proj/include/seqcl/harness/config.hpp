#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "seqcl/error.hpp"
#include "seqcl/harness/experiment.hpp"
#include "seqcl/taskforge/dataset_io.hpp"

// Experiment files are INI documents:
//
//   [experiment]  method, seeds, lambda (number or "auto"), output
//   [method]      temperature, importance_samples, csqn_pairs, bt_rank, memory_batch
//   [memory]      policy (growing|fixed), size
//   [lambda_search] lambda0, a, p, probe_epochs, lambda_min
//   [model]       feature_dim, hidden, enc_layers, alphabet, ctc_weight
//   [train]       max_epochs, patience, snapshot_count, batch_size, lr_factor_first,
//                 lr_factor_later, warmup_steps, noam_dim, clip_norm,
//                 valid_decode, test_decode (ctc|hybrid), beam
//   [tasks]       paths (comma separated, relative to the file)
//   [family]      seed, similarity, train, valid, test, noise, rest_perturbation,
//                 jitter_scale, bias_scale, bigram_sharpness, min_tokens, max_tokens
//
// Exactly one of [tasks] and [family] must be present. Unknown sections or
// keys are errors.
namespace seqcl {

struct FamilyConfig {
  std::uint64_t seed = 1;
  double similarity = 0.5;
  SplitSizes sizes;
  FamilyOptions options;
};

struct ExperimentFile {
  ExperimentConfig exp;
  std::vector<std::string> task_paths;
  std::optional<FamilyConfig> family;

  std::vector<TaskDataset> load_tasks() const {
    if (family) {
      const auto fam = generate_family(family->seed, family->similarity, family->sizes, family->options);
      return {fam.begin(), fam.end()};
    }
    std::vector<TaskDataset> out;
    for (const auto& p : task_paths) out.push_back(load_dataset(p));
    return out;
  }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

class IniReader {
 public:
  explicit IniReader(const boost::property_tree::ptree& tree) : tree_(tree) {}

  bool has_section(const std::string& s) const { return tree_.get_child_optional(s).has_value(); }

  template <class T>
  void get(const std::string& section, const std::string& key, T& out) {
    used_[section].insert(key);
    const auto v = tree_.get_optional<std::string>(section + "." + key);
    if (!v) return;
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        out = *v;
      } else {
        std::size_t pos = 0;
        if constexpr (std::is_floating_point_v<T>) {
          out = static_cast<T>(std::stod(*v, &pos));
        } else {
          if (!v->empty() && (*v)[0] == '-') throw std::invalid_argument("negative");
          out = static_cast<T>(std::stoull(*v, &pos));
        }
        if (pos != v->size()) throw std::invalid_argument("trailing characters");
      }
    } catch (const std::logic_error&) {
      throw ConfigError("config: bad value '" + *v + "' for " + section + "." + key);
    }
  }

  std::optional<std::string> raw(const std::string& section, const std::string& key) {
    used_[section].insert(key);
    const auto v = tree_.get_optional<std::string>(section + "." + key);
    return v ? std::optional<std::string>(*v) : std::nullopt;
  }

  void reject_unknown() const {
    for (const auto& [section, child] : tree_) {
      const auto it = used_.find(section);
      if (it == used_.end()) throw ConfigError("config: unknown section [" + section + "]");
      for (const auto& [key, value] : child)
        if (!it->second.count(key)) throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
    }
  }

 private:
  const boost::property_tree::ptree& tree_;
  std::map<std::string, std::set<std::string>> used_;
};

inline DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "ctc") return DecodeMode::CtcGreedy;
  if (s == "hybrid") return DecodeMode::Hybrid;
  throw ConfigError("config: decode mode must be 'ctc' or 'hybrid', got '" + s + "'");
}

}  // namespace detail

inline ExperimentFile parse_experiment(std::istream& is, const std::filesystem::path& base_dir = {}) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  detail::IniReader ini(tree);
  ExperimentFile f;
  auto& x = f.exp;

  ini.get("experiment", "method", x.method);
  ini.get("experiment", "output", x.output_dir);
  if (const auto seeds = ini.raw("experiment", "seeds")) {
    x.seeds.clear();
    for (const auto& s : detail::split_list(*seeds)) {
      try {
        x.seeds.push_back(std::stoull(s));
      } catch (const std::logic_error&) {
        throw ConfigError("config: bad seed '" + s + "'");
      }
    }
    if (x.seeds.empty()) throw ConfigError("config: empty seed list");
  }
  if (const auto lambda = ini.raw("experiment", "lambda")) {
    if (*lambda == "auto") {
      x.hyper.lambda_auto = true;
    } else {
      double v = 0.0;
      detail::IniReader sub(tree);
      sub.get("experiment", "lambda", v);
      x.hyper.lambda = v;
    }
  }

  ini.get("method", "temperature", x.hyper.temperature);
  ini.get("method", "importance_samples", x.hyper.importance_samples);
  ini.get("method", "csqn_pairs", x.hyper.csqn_pairs);
  ini.get("method", "bt_rank", x.hyper.bt_rank);
  ini.get("method", "memory_batch", x.hyper.memory_batch);

  std::string policy = "growing";
  ini.get("memory", "policy", policy);
  ini.get("memory", "size", x.memory.amount);
  if (policy == "growing") x.memory.kind = MemoryPolicy::Kind::Growing;
  else if (policy == "fixed") x.memory.kind = MemoryPolicy::Kind::Fixed;
  else throw ConfigError("config: memory policy must be 'growing' or 'fixed'");

  ini.get("lambda_search", "lambda0", x.lambda_search.lambda0);
  ini.get("lambda_search", "a", x.lambda_search.a);
  ini.get("lambda_search", "p", x.lambda_search.p);
  ini.get("lambda_search", "probe_epochs", x.lambda_search.probe_epochs);
  ini.get("lambda_search", "lambda_min", x.lambda_search.lambda_min);

  ini.get("model", "feature_dim", x.model.feature_dim);
  ini.get("model", "hidden", x.model.hidden);
  ini.get("model", "enc_layers", x.model.enc_layers);
  ini.get("model", "alphabet", x.model.alphabet);
  ini.get("model", "ctc_weight", x.model.ctc_weight);

  auto& t = x.train;
  ini.get("train", "max_epochs", t.max_epochs);
  ini.get("train", "patience", t.patience);
  ini.get("train", "snapshot_count", t.snapshot_count);
  ini.get("train", "batch_size", t.batch_size);
  ini.get("train", "lr_factor_first", t.lr_factor_first);
  ini.get("train", "lr_factor_later", t.lr_factor_later);
  ini.get("train", "warmup_steps", t.warmup_steps);
  ini.get("train", "noam_dim", t.noam_dim);
  ini.get("train", "clip_norm", t.clip_norm);
  if (const auto m = ini.raw("train", "valid_decode")) t.valid_decode.mode = detail::parse_decode_mode(*m);
  if (const auto m = ini.raw("train", "test_decode")) t.test_decode.mode = detail::parse_decode_mode(*m);
  std::size_t beam = t.test_decode.beam;
  ini.get("train", "beam", beam);
  t.test_decode.beam = t.valid_decode.beam = beam;

  if (const auto paths = ini.raw("tasks", "paths")) {
    for (const auto& p : detail::split_list(*paths)) {
      const std::filesystem::path path(p);
      f.task_paths.push_back((path.is_absolute() || base_dir.empty() ? path : base_dir / path).string());
    }
  }
  if (ini.has_section("family")) {
    FamilyConfig fc;
    ini.get("family", "seed", fc.seed);
    ini.get("family", "similarity", fc.similarity);
    ini.get("family", "train", fc.sizes.train);
    ini.get("family", "valid", fc.sizes.valid);
    ini.get("family", "test", fc.sizes.test);
    ini.get("family", "noise", fc.options.noise);
    ini.get("family", "rest_perturbation", fc.options.rest_perturbation);
    ini.get("family", "jitter_scale", fc.options.jitter_scale);
    ini.get("family", "bias_scale", fc.options.bias_scale);
    ini.get("family", "bigram_sharpness", fc.options.bigram_sharpness);
    ini.get("family", "min_tokens", fc.options.min_tokens);
    ini.get("family", "max_tokens", fc.options.max_tokens);
    fc.options.feature_dim = x.model.feature_dim;
    fc.options.alphabet = x.model.alphabet;
    f.family = fc;
  }
  ini.reject_unknown();

  if (f.family && !f.task_paths.empty()) throw ConfigError("config: give either [tasks] or [family], not both");
  if (!f.family && f.task_paths.empty()) throw ConfigError("config: no tasks ([tasks] paths or [family])");
  x.model.validate();
  x.train.validate();
  if (baseline_of(x.method) == Baseline::None) make_strategy(x.method, x.hyper);
  return f;
}

inline ExperimentFile load_experiment(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config '" + path + "'");
  return parse_experiment(is, std::filesystem::path(path).parent_path());
}

}  // namespace seqcl
