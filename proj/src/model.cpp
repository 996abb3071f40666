#include "prunegcrn/model.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "prunegcrn/csv.hpp"
#include "prunegcrn/errors.hpp"

namespace prunegcrn {

namespace {

constexpr const char* kCheckpointMagic = "PRUNEGCRN-CKPT-1";

ad::Var copy_of(const ad::Var& v) { return ad::leaf(v->shape, v->value, v->requires_grad, v->name); }

WeightPool copy_of(const WeightPool& p) { return WeightPool{copy_of(p.weights), copy_of(p.bias)}; }

ad::Var identity_matrix(std::size_t n) {
  std::vector<double> eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  return ad::constant({n, n}, std::move(eye));
}

void check_finite(const ad::Var& v, std::size_t step, std::size_t layer) {
  for (double x : v->value) {
    if (!std::isfinite(x)) {
      throw NumericError("non-finite hidden state at step " + std::to_string(step) + ", layer " +
                         std::to_string(layer));
    }
  }
}

const char* to_string(GateMode m) { return m == GateMode::kStandard ? "standard" : "literal"; }
const char* to_string(ProjectionMode m) { return m == ProjectionMode::kShared ? "shared" : "per_node"; }

}  // namespace

void ModelConfig::validate() const {
  if (nodes == 0) throw ConfigError("model.nodes must be positive");
  if (channels == 0) throw ConfigError("model.channels must be positive");
  if (embed_dim == 0) throw ConfigError("model.embed_dim must be positive");
  if (units == 0) throw ConfigError("model.units must be positive");
  if (layers == 0) throw ConfigError("model.layers must be at least 1");
  if (window == 0) throw ConfigError("model.window must be positive");
  if (horizon == 0) throw ConfigError("model.horizon must be positive");
  if (!(ste_window > 0)) throw ConfigError("model.ste_window must be positive");
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ModelParams p;
  p.config = config;
  const std::size_t n = config.nodes, d = config.embed_dim, u = config.units;
  std::vector<double> e(n * d);
  for (double& v : e) v = gauss(rng);
  p.embeddings = ad::leaf({n, d}, std::move(e), true, "embeddings");
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::size_t cin = (l == 0 ? config.channels : u) + u;
    const std::string prefix = "layer" + std::to_string(l);
    p.layers.push_back(GruLayerParams{make_weight_pool(d, cin, 2 * u, rng, prefix + ".gate"),
                                      make_weight_pool(d, cin, u, rng, prefix + ".candidate")});
  }
  if (config.projection == ProjectionMode::kShared) {
    const double limit = std::sqrt(6.0 / static_cast<double>(u + config.horizon));
    std::uniform_real_distribution<double> uni(-limit, limit);
    std::vector<double> w(u * config.horizon);
    for (double& v : w) v = uni(rng);
    p.proj_weight = ad::leaf({u, config.horizon}, std::move(w), true, "proj.weights");
    p.proj_bias = ad::zeros({config.horizon}, true, "proj.bias");
  } else {
    auto pool = make_weight_pool(d, u, config.horizon, rng, "proj");
    p.proj_weight = pool.weights;
    p.proj_bias = pool.bias;
  }
  if (config.masked) {
    p.mask = NodeMask::initial(n, config.channels);
    p.mask->ste_window = config.ste_window;
  }
  return p;
}

std::vector<std::pair<std::string, ad::Var>> ModelParams::named() const {
  std::vector<std::pair<std::string, ad::Var>> out;
  out.emplace_back("embeddings", embeddings);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    out.emplace_back(prefix + ".gate.weights", layers[l].gate.weights);
    out.emplace_back(prefix + ".gate.bias", layers[l].gate.bias);
    out.emplace_back(prefix + ".candidate.weights", layers[l].candidate.weights);
    out.emplace_back(prefix + ".candidate.bias", layers[l].candidate.bias);
  }
  out.emplace_back("proj.weights", proj_weight);
  out.emplace_back("proj.bias", proj_bias);
  if (mask) {
    out.emplace_back("mask.raw", mask->raw);
    out.emplace_back("mask.graph_bias", mask->graph_bias);
  }
  return out;
}

std::vector<ad::Var> ModelParams::trainable() const {
  std::vector<ad::Var> out;
  for (auto& [name, v] : named()) {
    if (v->requires_grad) out.push_back(v);
  }
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams p;
  p.config = config;
  p.embeddings = copy_of(embeddings);
  for (const auto& l : layers) p.layers.push_back(GruLayerParams{copy_of(l.gate), copy_of(l.candidate)});
  p.proj_weight = copy_of(proj_weight);
  p.proj_bias = copy_of(proj_bias);
  if (mask) p.mask = mask->clone();
  return p;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t total = 0;
  for (auto& [name, v] : named()) total += v->size();
  return total;
}

void ModelParams::assign_from(const ModelParams& other) {
  auto dst = named();
  auto src = other.named();
  if (dst.size() != src.size()) throw DimensionError("assign_from: parameter sets differ");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].second->shape != src[i].second->shape) {
      throw DimensionError("assign_from: shape mismatch for " + dst[i].first);
    }
    dst[i].second->value = src[i].second->value;
  }
}

GruFilters prepare_gru(ad::Tape& t, const ad::Var& support, const ad::Var& embeddings,
                       const GruLayerParams& layer, GateMode mode) {
  GruFilters f;
  const auto propagation = with_identity(t, support);
  f.update = prepare_napl(t, propagation, embeddings, layer.gate);
  f.reset = f.update;
  f.candidate = prepare_napl(t, propagation, embeddings, layer.candidate);
  if (mode == GateMode::kLiteral) {
    f.update.propagation = support;
    f.reset.propagation = identity_matrix(support->shape.at(0));
  }
  return f;
}

GruStep gru_step(ad::Tape& t, const GruFilters& filters, const ad::Var& x, const ad::Var& h_prev,
                 const ad::Var& candidate_prev, std::size_t units, GateMode mode) {
  GruStep s;
  const auto g = ad::concat_last(t, x, h_prev);
  if (mode == GateMode::kStandard) {
    const auto zr = ad::sigmoid(t, apply_napl(t, filters.update, g));
    s.update_gate = ad::slice_last(t, zr, 0, units);
    s.reset_gate = ad::slice_last(t, zr, units, units);
  } else {
    s.update_gate = ad::slice_last(t, ad::sigmoid(t, apply_napl(t, filters.update, g)), 0, units);
    s.reset_gate = ad::slice_last(t, ad::sigmoid(t, apply_napl(t, filters.reset, g)), units, units);
  }
  const auto reset_h = ad::mul(t, s.reset_gate, h_prev);
  s.candidate = ad::tanh(t, apply_napl(t, filters.candidate, ad::concat_last(t, x, reset_h)));
  if (mode == GateMode::kStandard) {
    // z ⊙ h + (1 - z) ⊙ ĥ  ==  ĥ + z ⊙ (h - ĥ)
    s.h = ad::add(t, s.candidate, ad::mul(t, s.update_gate, ad::sub(t, h_prev, s.candidate)));
  } else {
    s.h = candidate_prev;
  }
  return s;
}

ad::Var gru_cell(ad::Tape& t, const ad::Var& x, const ad::Var& h_prev, const ad::Var& support,
                 const ad::Var& embeddings, const GruLayerParams& layer) {
  const auto filters = prepare_gru(t, support, embeddings, layer, GateMode::kStandard);
  return gru_step(t, filters, x, h_prev, nullptr, h_prev->shape.back(), GateMode::kStandard).h;
}

ForwardResult forward(ad::Tape& t, const ModelParams& params, std::span<const double> inputs,
                      std::size_t batch, std::span<const double> binary_shift) {
  const ModelConfig& cfg = params.config;
  const std::size_t n = cfg.nodes, c = cfg.channels, w = cfg.window, u = cfg.units;
  if (inputs.size() != batch * w * n * c) {
    throw DimensionError("forward: got " + std::to_string(inputs.size()) + " input values, expected " +
                         std::to_string(batch) + "x" + std::to_string(w) + "x" + std::to_string(n) +
                         "x" + std::to_string(c));
  }
  ForwardResult out;
  if (cfg.masked) out.binary = make_binary(t, *params.mask);
  if (cfg.masked && !binary_shift.empty()) {
    if (binary_shift.size() != n) throw DimensionError("forward: binary shift must have one entry per node");
    out.binary = ad::sub(t, out.binary, ad::constant({n}, {binary_shift.begin(), binary_shift.end()}));
  }

  const auto support = adaptive_support(t, params.embeddings);
  std::vector<GruFilters> filters;
  for (const auto& layer : params.layers) {
    filters.push_back(prepare_gru(t, support, params.embeddings, layer, cfg.gate_mode));
  }

  HiddenState state;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    state.h.push_back(ad::zeros({batch, n, u}));
    state.candidate.push_back(state.h.back());
  }
  const std::size_t frame = n * c;
  for (std::size_t step = 0; step < w; ++step) {
    std::vector<double> xt(batch * frame);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(inputs.data() + (b * w + step) * frame, frame, xt.data() + b * frame);
    }
    ad::Var x = ad::constant({batch, n, c}, std::move(xt));
    if (cfg.masked) x = apply_mask(t, x, out.binary, *params.mask);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      auto s = gru_step(t, filters[l], x, state.h[l], state.candidate[l], u, cfg.gate_mode);
      check_finite(s.h, step, l);
      state.h[l] = s.h;
      state.candidate[l] = s.candidate;
      x = s.h;
    }
  }

  const ad::Var& top = state.h.back();
  if (cfg.projection == ProjectionMode::kShared) {
    auto flat = ad::reshape(t, top, {batch * n, u});
    auto proj = ad::add(t, ad::matmul(t, flat, params.proj_weight), params.proj_bias);
    out.prediction = ad::reshape(t, proj, {batch, n, cfg.horizon});
  } else {
    const std::size_t d = cfg.embed_dim;
    auto theta = ad::reshape(
        t, ad::matmul(t, params.embeddings, ad::reshape(t, params.proj_weight, {d, u * cfg.horizon})),
        {n, u, cfg.horizon});
    auto bias = ad::matmul(t, params.embeddings, params.proj_bias);
    out.prediction = ad::add(t, ad::node_matmul(t, top, theta), bias);
  }
  return out;
}

ModelParams compact_rebuild(const ModelParams& params, const NodeMask& mask) {
  const auto keep = selected_nodes(mask);
  if (keep.empty()) throw DomainError("compact_rebuild: mask keeps no nodes");
  if (mask.nodes() != params.config.nodes) {
    throw DimensionError("compact_rebuild: mask covers " + std::to_string(mask.nodes()) +
                         " nodes, model has " + std::to_string(params.config.nodes));
  }
  ModelParams p = params.clone();
  p.config.nodes = keep.size();
  p.config.masked = false;
  p.mask.reset();
  const std::size_t d = params.config.embed_dim;
  std::vector<double> e(keep.size() * d);
  for (std::size_t j = 0; j < keep.size(); ++j) {
    std::copy_n(params.embeddings->value.data() + keep[j] * d, d, e.data() + j * d);
  }
  p.embeddings = ad::leaf({keep.size(), d}, std::move(e), true, "embeddings");
  return p;
}

ModelFootprint count_params_and_activations(const ModelConfig& config, double pruning_fraction,
                                            std::size_t batch) {
  config.validate();
  const bool compact = pruning_fraction > 0.0;
  const std::size_t n = compact ? kept_for_fraction(config.nodes, pruning_fraction) : config.nodes;
  const bool masked = config.masked && !compact;
  const std::size_t c = config.channels, d = config.embed_dim, u = config.units;
  const std::size_t tau = config.horizon, bn = batch * n;

  ModelFootprint fp;
  fp.parameters = n * d;
  // Support: transpose, gram, relu, softmax.
  std::size_t act = n * d + 3 * n * n;
  if (masked) {
    fp.parameters += n + n * c;
    act += n;
  }
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::size_t cin = (l == 0 ? c : u) + u;
    fp.parameters += d * cin * 3 * u + d * 3 * u;
    fp.recurrent_gate_parameters += d * u * 3 * u;
    // with_identity, then for each pool: reshape W, E·W, reshape Θ, E·b.
    act += n * n + (d * cin + 2 * n * cin + n) * 3 * u;
  }
  std::size_t per_step = masked ? bn * c : 0;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::size_t cin = (l == 0 ? c : u) + u;
    std::size_t gate = config.gate_mode == GateMode::kStandard
                           ? 2 * bn * cin + 3 * bn * 2 * u + 2 * bn * u
                           : 3 * bn * cin + 6 * bn * 2 * u + 2 * bn * u;
    std::size_t cand = bn * u + 2 * bn * cin + 3 * bn * u;
    std::size_t mix = config.gate_mode == GateMode::kStandard ? 3 * bn * u : 0;
    per_step += gate + cand + mix;
  }
  act += config.window * per_step;
  if (config.projection == ProjectionMode::kShared) {
    fp.parameters += u * tau + tau;
    act += bn * u + 3 * bn * tau;
  } else {
    fp.parameters += d * u * tau + d * tau;
    act += d * u * tau + 2 * n * u * tau + n * tau + 2 * bn * tau;
  }
  fp.peak_activation_elements = act;
  return fp;
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path);
  const auto& c = params.config;
  out << kCheckpointMagic << '\n';
  out << "config nodes=" << c.nodes << " channels=" << c.channels << " embed_dim=" << c.embed_dim
      << " units=" << c.units << " layers=" << c.layers << " window=" << c.window
      << " horizon=" << c.horizon << " gate_mode=" << to_string(c.gate_mode)
      << " projection=" << to_string(c.projection) << " masked=" << (c.masked ? 1 : 0)
      << " ste_window=" << format_double(c.ste_window)
      << " mask_frozen=" << (params.mask && params.mask->frozen() ? 1 : 0) << '\n';
  for (const auto& [name, v] : params.named()) {
    out << "param " << name << ' ' << v->shape.size();
    for (std::size_t s : v->shape) out << ' ' << s;
    out << '\n';
    for (std::size_t i = 0; i < v->size(); ++i) out << (i ? " " : "") << format_double(v->value[i]);
    out << '\n';
  }
  out << "end\n";
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw ParseError(path + ": missing " + std::string(kCheckpointMagic) + " header");
  }
  if (!std::getline(in, line) || line.rfind("config ", 0) != 0) {
    throw ParseError(path + ": missing config line");
  }
  std::map<std::string, std::string> kv;
  {
    std::istringstream ss(line.substr(7));
    std::string tok;
    while (ss >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw ParseError(path + ": bad config token " + tok);
      kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
  }
  auto get = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw ParseError(path + ": config lacks " + k);
    return it->second;
  };
  ModelConfig c;
  c.nodes = std::stoul(get("nodes"));
  c.channels = std::stoul(get("channels"));
  c.embed_dim = std::stoul(get("embed_dim"));
  c.units = std::stoul(get("units"));
  c.layers = std::stoul(get("layers"));
  c.window = std::stoul(get("window"));
  c.horizon = std::stoul(get("horizon"));
  c.gate_mode = get("gate_mode") == "literal" ? GateMode::kLiteral : GateMode::kStandard;
  c.projection = get("projection") == "per_node" ? ProjectionMode::kPerNode : ProjectionMode::kShared;
  c.masked = get("masked") == "1";
  c.ste_window = std::stod(get("ste_window"));
  ModelParams p = ModelParams::init(c, 0);
  if (p.mask && get("mask_frozen") == "1") p.mask->freeze();

  std::map<std::string, ad::Var> by_name;
  for (auto& [name, v] : p.named()) by_name[name] = v;
  std::size_t loaded = 0;
  while (std::getline(in, line) && line != "end") {
    std::istringstream hs(line);
    std::string tag, name;
    std::size_t rank = 0;
    hs >> tag >> name >> rank;
    if (tag != "param") throw ParseError(path + ": expected param record, got '" + line + "'");
    ad::Shape shape(rank);
    for (auto& s : shape) hs >> s;
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError(path + ": unknown parameter " + name);
    if (it->second->shape != shape) {
      throw ParseError(path + ": shape " + ad::shape_str(shape) + " for " + name + " does not match config");
    }
    if (!std::getline(in, line)) throw ParseError(path + ": truncated values for " + name);
    std::istringstream vs(line);
    std::string cell;
    for (double& v : it->second->value) {
      if (!(vs >> cell)) throw ParseError(path + ": too few values for " + name);
      v = parse_double(cell, path, 0);
    }
    ++loaded;
  }
  if (loaded != by_name.size()) throw ParseError(path + ": checkpoint is missing parameters");
  return p;
}

}  // namespace prunegcrn
