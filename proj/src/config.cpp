#include "prunegcrn/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <utility>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "prunegcrn/csv.hpp"
#include "prunegcrn/errors.hpp"

namespace prunegcrn {

namespace {

using json = nlohmann::json;

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& field, const std::string& value, const std::string& want) {
  throw ConfigError(field + ": expected " + want + ", got '" + value + "'");
}

std::uint64_t to_u64(const std::string& field, const std::string& v) {
  const std::string s = trim(v);
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) bad(field, v, "a non-negative integer");
  return out;
}

std::size_t to_size(const std::string& field, const std::string& v) {
  return static_cast<std::size_t>(to_u64(field, v));
}

double to_real(const std::string& field, const std::string& v) {
  const std::string s = trim(v);
  double out = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) bad(field, v, "a number");
  return out;
}

bool to_bool(const std::string& field, const std::string& v) {
  const std::string s = trim(v);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad(field, v, "a boolean");
}

template <typename E>
using Names = std::vector<std::pair<E, const char*>>;

template <typename E>
E to_enum(const std::string& field, const std::string& v, const Names<E>& names) {
  const std::string s = trim(v);
  std::string options;
  for (const auto& [e, name] : names) {
    if (s == name) return e;
    options += (options.empty() ? "" : "|") + std::string(name);
  }
  bad(field, v, "one of " + options);
}

template <typename E>
std::string enum_name(E e, const Names<E>& names) {
  for (const auto& [x, name] : names) {
    if (x == e) return name;
  }
  return "?";
}

const Names<GateMode> kGateNames{{GateMode::kStandard, "standard"}, {GateMode::kLiteral, "literal"}};
const Names<ProjectionMode> kProjectionNames{{ProjectionMode::kShared, "shared"},
                                             {ProjectionMode::kPerNode, "per_node"}};
const Names<OptimizerKind> kOptimizerNames{
    {OptimizerKind::kRAdam, "radam"}, {OptimizerKind::kAdam, "adam"}, {OptimizerKind::kSgd, "sgd"}};
const Names<MaskBudgetMode> kBudgetNames{{MaskBudgetMode::kCoupled, "coupled"},
                                         {MaskBudgetMode::kDecoupled, "decoupled"}};
const Names<PruningMethod> kMethodNames{{PruningMethod::kLearned, "learned"},
                                        {PruningMethod::kRandom, "random"},
                                        {PruningMethod::kCorrelation, "correlation"}};
const Names<CorrelationMode> kCorrelationNames{{CorrelationMode::kAbsolute, "absolute"},
                                               {CorrelationMode::kSigned, "signed"}};
const Names<PValueMode> kPValueNames{{PValueMode::kPermutation, "permutation"},
                                     {PValueMode::kNormal, "normal"}};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, const std::string& field, const std::string&)> set;
  std::function<json(const ExperimentConfig&)> get;
};

#define PG_SIZE(sec, name, member)                                                                  \
  Field{sec, name, [](ExperimentConfig& c, const std::string& f, const std::string& v) {          \
          c.member = to_size(f, v);                                                                 \
        },                                                                                          \
        [](const ExperimentConfig& c) { return json(c.member); }}
#define PG_U64(sec, name, member)                                                                   \
  Field{sec, name, [](ExperimentConfig& c, const std::string& f, const std::string& v) {          \
          c.member = to_u64(f, v);                                                                  \
        },                                                                                          \
        [](const ExperimentConfig& c) { return json(c.member); }}
#define PG_REAL(sec, name, member)                                                                  \
  Field{sec, name, [](ExperimentConfig& c, const std::string& f, const std::string& v) {          \
          c.member = to_real(f, v);                                                                 \
        },                                                                                          \
        [](const ExperimentConfig& c) { return json(c.member); }}
#define PG_BOOL(sec, name, member)                                                                  \
  Field{sec, name, [](ExperimentConfig& c, const std::string& f, const std::string& v) {          \
          c.member = to_bool(f, v);                                                                 \
        },                                                                                          \
        [](const ExperimentConfig& c) { return json(c.member); }}
#define PG_TEXT(sec, name, member)                                                                  \
  Field{sec, name, [](ExperimentConfig& c, const std::string&, const std::string& v) {            \
          c.member = trim(v);                                                                       \
        },                                                                                          \
        [](const ExperimentConfig& c) { return json(c.member); }}
#define PG_ENUM(sec, name, member, names)                                                           \
  Field{sec, name, [](ExperimentConfig& c, const std::string& f, const std::string& v) {          \
          c.member = to_enum(f, v, names);                                                          \
        },                                                                                          \
        [](const ExperimentConfig& c) { return json(enum_name(c.member, names)); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      PG_TEXT("data", "series", data.series),
      PG_TEXT("data", "coords", data.coords),
      PG_SIZE("data", "synthetic_nodes", data.synthetic_nodes),
      PG_SIZE("data", "synthetic_steps", data.synthetic_steps),
      PG_SIZE("data", "synthetic_drivers", data.synthetic_drivers),
      PG_U64("data", "synthetic_seed", data.synthetic_seed),
      PG_BOOL("data", "vary_synthetic_seed", data.vary_synthetic_seed),
      PG_SIZE("data", "window", data.window),
      PG_SIZE("data", "horizon", data.horizon),

      PG_SIZE("model", "embed_dim", model.embed_dim),
      PG_SIZE("model", "units", model.units),
      PG_SIZE("model", "layers", model.layers),
      PG_ENUM("model", "gate_mode", model.gate_mode, kGateNames),
      PG_ENUM("model", "projection", model.projection, kProjectionNames),
      PG_REAL("model", "ste_window", model.ste_window),

      PG_SIZE("training", "batch_size", training.batch_size),
      PG_SIZE("training", "max_epochs", training.max_epochs),
      PG_SIZE("training", "patience", training.patience),
      PG_SIZE("training", "finetune_epochs", training.finetune_epochs),
      PG_BOOL("training", "exact_k", training.exact_k),
      PG_SIZE("training", "batches_per_epoch", training.batches_per_epoch),
      PG_REAL("training", "grad_clip", training.grad_clip),
      PG_REAL("training", "mask_clip", training.mask_clip),
      PG_BOOL("training", "clamped_mask_loss", training.clamped_mask_loss),
      PG_REAL("training", "budget_tolerance", training.budget_tolerance),
      PG_ENUM("training", "optimizer", training.optimizer.kind, kOptimizerNames),
      PG_REAL("training", "learning_rate", training.optimizer.learning_rate),
      PG_REAL("training", "beta1", training.optimizer.beta1),
      PG_REAL("training", "beta2", training.optimizer.beta2),
      PG_REAL("training", "epsilon", training.optimizer.epsilon),
      PG_REAL("training", "momentum", training.optimizer.momentum),
      PG_ENUM("training", "mask_optimizer", training.mask_optimizer.kind, kOptimizerNames),
      PG_REAL("training", "mask_learning_rate", training.mask_optimizer.learning_rate),
      PG_REAL("training", "mask_momentum", training.mask_optimizer.momentum),
      PG_SIZE("training", "mask_warmup_epochs", training.mask_warmup_epochs),
      PG_ENUM("training", "mask_budget", training.mask_budget, kBudgetNames),
      PG_REAL("training", "budget_rate", training.budget_rate),
      PG_REAL("training", "mask_dropout", training.mask_dropout),

      PG_ENUM("pruning", "method", pruning.method, kMethodNames),
      PG_REAL("pruning", "fraction", pruning.fraction),
      PG_ENUM("pruning", "correlation_mode", pruning.correlation_mode, kCorrelationNames),

      PG_SIZE("run", "runs", run.runs),
      PG_U64("run", "seed", run.seed),
      PG_SIZE("run", "workers", run.workers),
      PG_TEXT("run", "out_dir", run.out_dir),
      Field{"run", "methods",
            [](ExperimentConfig& c, const std::string&, const std::string& v) {
              c.run.methods = parse_method_list(v);
            },
            [](const ExperimentConfig& c) {
              std::string s;
              for (auto m : c.run.methods) s += (s.empty() ? "" : ",") + std::string(to_string(m));
              return json(s);
            }},
      Field{"run", "fractions",
            [](ExperimentConfig& c, const std::string&, const std::string& v) {
              c.run.fractions = parse_fraction_list(v);
            },
            [](const ExperimentConfig& c) {
              std::string s;
              for (double f : c.run.fractions) s += (s.empty() ? "" : ",") + format_double(f);
              return json(s);
            }},

      PG_REAL("analysis", "distance_km", analysis.distance_km),
      PG_SIZE("analysis", "knn_k", analysis.knn_k),
      PG_SIZE("analysis", "permutations", analysis.permutations),
      PG_BOOL("analysis", "row_standardize", analysis.row_standardize),
      PG_ENUM("analysis", "p_value_mode", analysis.p_value_mode, kPValueNames),

      PG_SIZE("benchmark", "nodes", benchmark.nodes),
      PG_SIZE("benchmark", "steps", benchmark.steps),
      PG_SIZE("benchmark", "repetitions", benchmark.repetitions),
      PG_SIZE("benchmark", "batch_size", benchmark.batch_size),
  };
  return table;
}

#undef PG_SIZE
#undef PG_U64
#undef PG_REAL
#undef PG_BOOL
#undef PG_TEXT
#undef PG_ENUM

std::string json_scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) return format_double(v.get<double>());
  if (v.is_array()) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + json_scalar_text(x);
    return s;
  }
  return v.dump();
}

}  // namespace

const char* to_string(PruningMethod m) {
  switch (m) {
    case PruningMethod::kLearned: return "learned";
    case PruningMethod::kRandom: return "random";
    case PruningMethod::kCorrelation: return "correlation";
  }
  return "?";
}

PruningMethod parse_method(const std::string& s) { return to_enum("pruning.method", s, kMethodNames); }

std::vector<double> parse_fraction_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    const double f = to_real("run.fractions", item);
    if (!(f >= 0.0 && f < 1.0)) throw ConfigError("run.fractions: " + item + " is outside [0, 1)");
    out.push_back(f);
  }
  if (out.empty()) throw ConfigError("run.fractions: empty list");
  return out;
}

std::vector<PruningMethod> parse_method_list(const std::string& s) {
  std::vector<PruningMethod> out;
  for (const auto& item : split_list(s)) out.push_back(to_enum("run.methods", item, kMethodNames));
  if (out.empty()) throw ConfigError("run.methods: empty list");
  return out;
}

void set_field(ExperimentConfig& config, const std::string& section, const std::string& key,
               const std::string& value) {
  const std::string name = section + "." + key;
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) {
      f.set(config, name, value);
      return;
    }
  }
  throw ConfigError(name + ": unknown field");
}

json config_to_json(const ExperimentConfig& config) {
  json j = json::object();
  for (const auto& f : fields()) j[f.section][f.key] = f.get(config);
  return j;
}

ExperimentConfig config_from_json(const json& j, ExperimentConfig base) {
  if (!j.is_object()) throw ConfigError("config: expected an object of sections");
  for (const auto& [section, body] : j.items()) {
    if (!body.is_object()) throw ConfigError(section + ": expected a section object");
    for (const auto& [key, value] : body.items()) set_field(base, section, key, json_scalar_text(value));
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError("config: " + path.string() + ": " + e.what());
    }
    return config_from_json(j.contains("config") ? j.at("config") : j, std::move(base));
  }
  boost::property_tree::ptree tree;
  try {
    std::istringstream ini(text);
    boost::property_tree::ini_parser::read_ini(ini, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config: " + path.string() + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(section + ": key outside of a [section]");
    for (const auto& [key, value] : body) set_field(base, section, key, value.data());
  }
  return base;
}

void ExperimentConfig::validate() const {
  if (data.series.empty()) {
    if (data.synthetic_nodes < 2) throw ConfigError("data.synthetic_nodes must be at least 2");
    if (data.synthetic_drivers < 1 || data.synthetic_drivers > data.synthetic_nodes) {
      throw ConfigError("data.synthetic_drivers must lie in [1, synthetic_nodes]");
    }
  }
  if (data.window == 0) throw ConfigError("data.window must be positive");
  if (data.horizon == 0) throw ConfigError("data.horizon must be positive");
  if (model.units == 0) throw ConfigError("model.units must be positive");
  if (model.layers == 0) throw ConfigError("model.layers must be positive");
  if (model.embed_dim == 0) throw ConfigError("model.embed_dim must be positive");
  if (!(model.ste_window > 0)) throw ConfigError("model.ste_window must be positive");
  if (!(pruning.fraction >= 0 && pruning.fraction < 1)) throw ConfigError("pruning.fraction must lie in [0, 1)");
  for (double f : run.fractions) {
    if (!(f >= 0 && f < 1)) throw ConfigError("run.fractions: each fraction must lie in [0, 1)");
  }
  if (run.runs == 0) throw ConfigError("run.runs must be positive");
  if (run.workers == 0) throw ConfigError("run.workers must be positive");
  if (analysis.knn_k == 0) throw ConfigError("analysis.knn_k must be positive");
  if (!(analysis.distance_km >= 0)) throw ConfigError("analysis.distance_km must be non-negative");
  if (benchmark.repetitions == 0) throw ConfigError("benchmark.repetitions must be positive");
  if (benchmark.nodes < 2) throw ConfigError("benchmark.nodes must be at least 2");
  if (benchmark.batch_size == 0) throw ConfigError("benchmark.batch_size must be positive");
  training.validate();
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  // splitmix64 finalizer over base and index
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace prunegcrn
