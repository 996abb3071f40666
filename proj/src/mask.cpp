#include "prunegcrn/mask.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "prunegcrn/csv.hpp"
#include "prunegcrn/errors.hpp"

namespace prunegcrn {

NodeMask NodeMask::initial(std::size_t n, std::size_t c) {
  NodeMask m;
  m.raw = ad::leaf({n}, std::vector<double>(n, 1.0), true, "mask.raw");
  m.graph_bias = ad::zeros({n, c}, true, "mask.graph_bias");
  return m;
}

NodeMask NodeMask::fixed(const std::vector<bool>& keep, std::size_t c) {
  const std::size_t n = keep.size();
  std::vector<double> raw(n);
  for (std::size_t i = 0; i < n; ++i) raw[i] = keep[i] ? 1.0 : -1.0;
  NodeMask m;
  m.raw = ad::leaf({n}, std::move(raw), false, "mask.raw");
  m.graph_bias = ad::zeros({n, c}, true, "mask.graph_bias");
  return m;
}

std::vector<double> NodeMask::binary() const {
  std::vector<double> b(raw->size());
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = raw->value[i] > 0.0 ? 1.0 : 0.0;
  return b;
}

std::size_t NodeMask::kept_count() const {
  return static_cast<std::size_t>(
      std::count_if(raw->value.begin(), raw->value.end(), [](double v) { return v > 0.0; }));
}

NodeMask NodeMask::clone() const {
  NodeMask m;
  m.raw = ad::leaf(raw->shape, raw->value, raw->requires_grad, raw->name);
  m.graph_bias = ad::leaf(graph_bias->shape, graph_bias->value, graph_bias->requires_grad,
                          graph_bias->name);
  m.ste_window = ste_window;
  return m;
}

ad::Var make_binary(ad::Tape& t, const NodeMask& mask) {
  return ad::binary_clamp_ste(t, mask.raw, mask.ste_window);
}

ad::Var apply_mask(ad::Tape& t, const ad::Var& x, const NodeMask& mask) {
  return apply_mask(t, x, make_binary(t, mask), mask);
}

ad::Var apply_mask(ad::Tape& t, const ad::Var& x, const ad::Var& binary, const NodeMask& mask) {
  if (x->shape.size() < 2 || x->shape[x->shape.size() - 2] != mask.nodes()) {
    throw DimensionError("apply_mask: input " + ad::shape_str(x->shape) + " does not have " +
                         std::to_string(mask.nodes()) + " node rows");
  }
  return ad::masked_blend(t, x, binary, mask.graph_bias);
}

ad::Var mask_loss(ad::Tape& t, const NodeMask& mask, double gamma, bool clamped) {
  return mask_loss(t, make_binary(t, mask), gamma, clamped);
}

ad::Var mask_loss(ad::Tape& t, const ad::Var& binary, double gamma, bool clamped) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw ConfigError("mask_loss: gamma must lie in [0, 1], got " + std::to_string(gamma));
  }
  auto usage = ad::mean_all(t, binary);
  const double excess = usage->value[0] - gamma;
  if (std::fabs(excess) <= 1e-12) return ad::scale(t, usage, 0.0);
  if (clamped && excess < 0) return ad::scale(t, usage, 0.0);
  return ad::add_scalar(t, usage, -gamma);
}

std::vector<std::size_t> selected_nodes(const NodeMask& mask) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.nodes(); ++i) {
    if (mask.raw->value[i] > 0.0) out.push_back(i);
  }
  return out;
}

NodeMask project_to_exact_k(const NodeMask& mask, std::size_t k) {
  const std::size_t n = mask.nodes();
  if (k > n) {
    throw DomainError("project_to_exact_k: k=" + std::to_string(k) + " exceeds n=" +
                      std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto& raw = mask.raw->value;
  std::stable_sort(order.begin(), order.end(),
                   [&raw](std::size_t a, std::size_t b) { return raw[a] > raw[b]; });
  NodeMask out = mask.clone();
  std::fill(out.raw->value.begin(), out.raw->value.end(), -1.0);
  for (std::size_t j = 0; j < k; ++j) out.raw->value[order[j]] = 1.0;
  return out;
}

void clip_raw(NodeMask& mask, double bound) {
  for (double& v : mask.raw->value) v = std::clamp(v, -bound, bound);
}

std::size_t kept_for_fraction(std::size_t n, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw ConfigError("pruning fraction must lie in [0, 1), got " + std::to_string(fraction));
  }
  auto k = static_cast<std::size_t>(std::llround(static_cast<double>(n) * (1.0 - fraction)));
  return std::clamp<std::size_t>(k, n ? 1 : 0, n);
}

void write_mask_csv(const std::filesystem::path& path, const NodeMask& mask) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write mask file " + path.string());
  out << "node_id,selected,raw_value\n";
  for (std::size_t i = 0; i < mask.nodes(); ++i) {
    out << i << ',' << (mask.raw->value[i] > 0.0 ? 1 : 0) << ',' << format_double(mask.raw->value[i])
        << '\n';
  }
}

MaskRecord read_mask_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  if (table.header != std::vector<std::string>{"node_id", "selected", "raw_value"}) {
    throw ParseError(path.string() + ": expected header node_id,selected,raw_value");
  }
  MaskRecord rec;
  rec.selected.resize(table.rows.size());
  rec.raw.resize(table.rows.size());
  std::vector<bool> seen(table.rows.size(), false);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::size_t line = r + 2;
    const auto id = static_cast<std::size_t>(parse_double(row[0], path, line));
    if (id >= table.rows.size() || seen[id]) {
      throw ParseError(path.string() + ":" + std::to_string(line) + ": bad or repeated node_id");
    }
    seen[id] = true;
    rec.selected[id] = parse_double(row[1], path, line) != 0.0;
    rec.raw[id] = parse_double(row[2], path, line);
  }
  return rec;
}

}  // namespace prunegcrn
