#include "lfd/run_io.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <variant>

#include <CLI11.hpp>
#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lfd {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// TOML subset

namespace {

struct TomlValue {
  std::variant<double, bool, std::string, std::vector<TomlValue>> data;
  bool integer = false;
  int line = 0;
};

class SyntaxError : public ValidationError {
 public:
  SyntaxError(int line, const std::string& what)
      : ValidationError("config syntax error at line " + std::to_string(line) + ": " + what) {}
};

class ValueParser {
 public:
  ValueParser(const std::string& text, int line) : s_(text), line_(line) {}

  TomlValue parse_all() {
    TomlValue v = parse();
    skip_ws();
    if (pos_ != s_.size()) fail("unexpected trailing characters '" + s_.substr(pos_) + "'");
    return v;
  }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
  int line_;

  [[noreturn]] void fail(const std::string& what) const { throw SyntaxError(line_, what); }

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' || s_[pos_] == '\r')) ++pos_;
  }

  TomlValue parse() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    TomlValue v;
    v.line = line_;
    const char c = s_[pos_];
    if (c == '"') {
      v.data = parse_string();
    } else if (c == '[') {
      ++pos_;
      std::vector<TomlValue> items;
      skip_ws();
      while (true) {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ']') {
          ++pos_;
          break;
        }
        items.push_back(parse());
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ',') {
          ++pos_;
        } else if (pos_ < s_.size() && s_[pos_] == ']') {
          ++pos_;
          break;
        } else {
          fail("expected ',' or ']' in array");
        }
      }
      v.data = std::move(items);
    } else if (s_.compare(pos_, 4, "true") == 0) {
      pos_ += 4;
      v.data = true;
    } else if (s_.compare(pos_, 5, "false") == 0) {
      pos_ += 5;
      v.data = false;
    } else {
      std::size_t end = pos_;
      while (end < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[end])) || s_[end] == '.' ||
                                 s_[end] == '+' || s_[end] == '-' || s_[end] == '_'))
        ++end;
      std::string tok = s_.substr(pos_, end - pos_);
      tok.erase(std::remove(tok.begin(), tok.end(), '_'), tok.end());
      if (tok.empty()) fail("unrecognized value");
      char* stop = nullptr;
      const double d = std::strtod(tok.c_str(), &stop);
      if (stop != tok.c_str() + tok.size()) fail("invalid number '" + tok + "'");
      v.data = d;
      v.integer = tok.find_first_of(".eEn") == std::string::npos;
      pos_ = end;
    }
    return v;
  }

  std::string parse_string() {
    ++pos_;
    std::string out;
    while (true) {
      if (pos_ >= s_.size() || s_[pos_] == '\n') fail("unterminated string");
      const char c = s_[pos_++];
      if (c == '"') break;
      if (c == '\\') {
        if (pos_ >= s_.size()) fail("unterminated escape");
        const char e = s_[pos_++];
        switch (e) {
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      } else {
        out += c;
      }
    }
    return out;
  }
};

// Index of a '#' that starts a comment, ignoring quoted text.
std::size_t comment_start(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return i;
  }
  return std::string::npos;
}

int bracket_balance(const std::string& text) {
  int depth = 0;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '"' && (i == 0 || text[i - 1] != '\\')) quoted = !quoted;
    if (quoted) continue;
    if (text[i] == '[') ++depth;
    if (text[i] == ']') --depth;
  }
  return depth;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Entry {
  std::string path;
  TomlValue value;
};

std::vector<Entry> parse_toml(const std::string& text, std::vector<std::pair<std::string, int>>* sections = nullptr) {
  std::vector<Entry> out;
  std::set<std::string> seen_sections, seen_keys;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (auto c = comment_start(line); c != std::string::npos) line.erase(c);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.size() < 3 || line.back() != ']') throw SyntaxError(line_no, "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty() || section.find_first_of("[]") != std::string::npos)
        throw SyntaxError(line_no, "malformed section header");
      if (!seen_sections.insert(section).second) throw SyntaxError(line_no, "duplicate section [" + section + "]");
      if (sections) sections->emplace_back(section, line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw SyntaxError(line_no, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty() || !std::all_of(key.begin(), key.end(), [](char ch) {
          return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-';
        }))
      throw SyntaxError(line_no, "invalid key '" + key + "'");
    std::string value = trim(line.substr(eq + 1));
    const int start_line = line_no;
    // Arrays may continue over several lines.
    while (bracket_balance(value) > 0) {
      if (!std::getline(in, raw)) throw SyntaxError(start_line, "unterminated array");
      ++line_no;
      std::string more = raw;
      if (auto c = comment_start(more); c != std::string::npos) more.erase(c);
      value += "\n" + more;
    }
    const std::string path = section.empty() ? key : section + "." + key;
    if (!seen_keys.insert(path).second) throw SyntaxError(start_line, "duplicate key '" + path + "'");
    out.push_back({path, ValueParser(value, start_line).parse_all()});
  }
  return out;
}

[[noreturn]] void type_error(const std::string& path, const char* expected) {
  throw ValidationError(path + ": expected " + expected);
}

double as_double(const Entry& e) {
  if (auto* d = std::get_if<double>(&e.value.data)) return *d;
  type_error(e.path, "a number");
}

int as_int(const Entry& e) {
  const double d = as_double(e);
  if (!e.value.integer || d != std::floor(d) || std::abs(d) > 2e9) type_error(e.path, "an integer");
  return static_cast<int>(d);
}

bool as_bool(const Entry& e) {
  if (auto* b = std::get_if<bool>(&e.value.data)) return *b;
  type_error(e.path, "true or false");
}

std::string as_string(const Entry& e) {
  if (auto* s = std::get_if<std::string>(&e.value.data)) return *s;
  type_error(e.path, "a quoted string");
}

std::vector<double> as_numbers(const Entry& e) {
  auto* arr = std::get_if<std::vector<TomlValue>>(&e.value.data);
  if (!arr) type_error(e.path, "an array of numbers");
  std::vector<double> out;
  for (const auto& item : *arr) {
    auto* d = std::get_if<double>(&item.data);
    if (!d) type_error(e.path, "an array of numbers");
    out.push_back(*d);
  }
  return out;
}

std::vector<std::pair<double, int>> as_ladder(const Entry& e) {
  auto* arr = std::get_if<std::vector<TomlValue>>(&e.value.data);
  if (!arr) type_error(e.path, "an array of [epsilon, n] pairs");
  std::vector<std::pair<double, int>> out;
  for (const auto& item : *arr) {
    auto* pair = std::get_if<std::vector<TomlValue>>(&item.data);
    if (!pair || pair->size() != 2) type_error(e.path, "an array of [epsilon, n] pairs");
    auto* eps = std::get_if<double>(&(*pair)[0].data);
    auto* n = std::get_if<double>(&(*pair)[1].data);
    if (!eps || !n || !(*pair)[1].integer) type_error(e.path, "an array of [epsilon, n] pairs");
    out.emplace_back(*eps, static_cast<int>(*n));
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const Entry&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"grid.dim", [](RunConfig& c, const Entry& e) { c.grid.dim = as_int(e); }},
      {"grid.v_max", [](RunConfig& c, const Entry& e) { c.grid.v_max = as_double(e); }},
      {"grid.v_points", [](RunConfig& c, const Entry& e) { c.grid.v_points = as_int(e); }},
      {"grid.mode",
       [](RunConfig& c, const Entry& e) {
         const auto m = as_string(e);
         if (m == "homogeneous") c.grid.homogeneous = true;
         else if (m == "inhomogeneous") c.grid.homogeneous = false;
         else throw ValidationError("grid.mode: expected \"homogeneous\" or \"inhomogeneous\"");
       }},
      {"grid.x_extent", [](RunConfig& c, const Entry& e) { c.grid.x_extent = as_double(e); }},
      {"grid.x_points", [](RunConfig& c, const Entry& e) { c.grid.x_points = as_int(e); }},
      {"grid.topology",
       [](RunConfig& c, const Entry& e) {
         const auto t = as_string(e);
         if (t == "periodic") c.grid.topology = Topology::periodic;
         else if (t == "truncated-box") c.grid.topology = Topology::truncated_box;
         else throw ValidationError("grid.topology: expected \"periodic\" or \"truncated-box\"");
       }},
      {"kernel.gamma", [](RunConfig& c, const Entry& e) { c.gamma = as_double(e); }},
      {"kernel.n", [](RunConfig& c, const Entry& e) { c.solver.kernel_index = as_int(e); }},
      {"solver.epsilon", [](RunConfig& c, const Entry& e) { c.solver.epsilon = as_double(e); }},
      {"solver.dt", [](RunConfig& c, const Entry& e) { c.solver.dt = as_double(e); }},
      {"solver.t_end", [](RunConfig& c, const Entry& e) { c.solver.t_end = as_double(e); }},
      {"solver.picard_tol", [](RunConfig& c, const Entry& e) { c.solver.picard_tol = as_double(e); }},
      {"solver.picard_max_iters", [](RunConfig& c, const Entry& e) { c.solver.picard_max_iters = as_int(e); }},
      {"solver.relaxation", [](RunConfig& c, const Entry& e) { c.solver.relaxation = as_double(e); }},
      {"solver.splitting",
       [](RunConfig& c, const Entry& e) {
         const auto s = as_string(e);
         if (s == "strang") c.solver.splitting = Splitting::strang;
         else if (s == "lie") c.solver.splitting = Splitting::lie;
         else throw ValidationError("solver.splitting: expected \"strang\" or \"lie\"");
       }},
      {"solver.stencil_order", [](RunConfig& c, const Entry& e) { c.solver.stencil_order = as_int(e); }},
      {"solver.linear_tol", [](RunConfig& c, const Entry& e) { c.solver.linear_tol = as_double(e); }},
      {"solver.linear_max_iters", [](RunConfig& c, const Entry& e) { c.solver.linear_max_iters = as_int(e); }},
      {"solver.clamp", [](RunConfig& c, const Entry& e) { c.solver.clamp = as_bool(e); }},
      {"solver.viscosity_ladder", [](RunConfig& c, const Entry& e) { c.solver.viscosity_ladder = as_ladder(e); }},
      {"solver.logit_scale", [](RunConfig& c, const Entry& e) { c.logit_scale = as_double(e); }},
      {"initial.family", [](RunConfig& c, const Entry& e) { c.initial.family = as_string(e); }},
      {"initial.amplitude", [](RunConfig& c, const Entry& e) { c.initial.amplitude = as_double(e); }},
      {"initial.temperature", [](RunConfig& c, const Entry& e) { c.initial.temperature = as_double(e); }},
      {"initial.drift", [](RunConfig& c, const Entry& e) { c.initial.drift = as_numbers(e); }},
      {"initial.fd_a", [](RunConfig& c, const Entry& e) { c.initial.fd_a = as_double(e); }},
      {"initial.fd_b", [](RunConfig& c, const Entry& e) { c.initial.fd_b = as_double(e); }},
      {"initial.radius", [](RunConfig& c, const Entry& e) { c.initial.radius = as_double(e); }},
      {"initial.x_width", [](RunConfig& c, const Entry& e) { c.initial.x_width = as_double(e); }},
      {"initial.regularize", [](RunConfig& c, const Entry& e) { c.regularize = as_bool(e); }},
      {"initial.snapshot", [](RunConfig& c, const Entry& e) { c.initial_snapshot = as_string(e); }},
      {"output.directory", [](RunConfig& c, const Entry& e) { c.output.directory = as_string(e); }},
      {"output.snapshot_stride", [](RunConfig& c, const Entry& e) { c.output.snapshot_stride = as_int(e); }},
      {"output.diagnostics_stride", [](RunConfig& c, const Entry& e) { c.output.diagnostics_stride = as_int(e); }},
      {"diagnostics.dissipation_stride",
       [](RunConfig& c, const Entry& e) { c.diagnostics.dissipation_stride = as_int(e); }},
      {"diagnostics.weight_alpha", [](RunConfig& c, const Entry& e) { c.diagnostics.weight_alpha = as_double(e); }},
      {"diagnostics.probe_alpha", [](RunConfig& c, const Entry& e) { c.diagnostics.probe.alpha = as_double(e); }},
      {"diagnostics.probe_mu", [](RunConfig& c, const Entry& e) { c.diagnostics.probe.mu = as_double(e); }},
      {"diagnostics.probe_radius", [](RunConfig& c, const Entry& e) { c.diagnostics.probe.radius = as_double(e); }},
      {"diagnostics.probe_samples", [](RunConfig& c, const Entry& e) { c.diagnostics.probe.samples = as_int(e); }},
      {"diagnostics.envelope_margin",
       [](RunConfig& c, const Entry& e) { c.diagnostics.envelope_margin = as_double(e); }},
  };
  return table;
}

const char* splitting_name(Splitting s) { return s == Splitting::strang ? "strang" : "lie"; }

}  // namespace

void RunConfig::validate() const {
  try {
    build_phase_grid(grid);
    (void)CrossSectionSpec::power_law(grid.dim, gamma);
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    if (msg.rfind("cross_section.gamma", 0) == 0) msg.replace(0, 19, "kernel.gamma");
    throw ValidationError(msg);
  }
  try {
    solver.validate();
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    if (msg.rfind("solver.kernel_index", 0) == 0) msg.replace(0, 19, "kernel.n");
    throw ValidationError(msg);
  }
  if (solver.stencil_order == 4 && grid.v_points < minimum_points_for_order(4))
    throw ValidationError("solver.stencil_order: 4 needs grid.v_points >= 5");
  if (!(logit_scale >= 0.0)) throw ValidationError("solver.logit_scale: must be non-negative");
  if (initial_snapshot.empty()) lfd::validate(initial, grid.dim);
  if (output.directory.empty()) throw ValidationError("output.directory: must not be empty");
  if (output.snapshot_stride < 0) throw ValidationError("output.snapshot_stride: must be >= 0");
  if (output.diagnostics_stride < 1) throw ValidationError("output.diagnostics_stride: must be >= 1");
  if (diagnostics.dissipation_stride < 1) throw ValidationError("diagnostics.dissipation_stride: must be >= 1");
  if (!(diagnostics.weight_alpha > 0.0)) throw ValidationError("diagnostics.weight_alpha: must be positive");
  if (!(diagnostics.probe.alpha > 0.0)) throw ValidationError("diagnostics.probe_alpha: must be positive");
  if (!(diagnostics.probe.mu >= 0.0 && diagnostics.probe.mu < 1.0))
    throw ValidationError("diagnostics.probe_mu: must lie in [0, 1)");
  if (!(diagnostics.probe.radius > 0.0)) throw ValidationError("diagnostics.probe_radius: must be positive");
  if (diagnostics.probe.samples < 1) throw ValidationError("diagnostics.probe_samples: must be >= 1");
  if (!(diagnostics.envelope_margin >= 1.0)) throw ValidationError("diagnostics.envelope_margin: must be >= 1");
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::vector<std::pair<std::string, int>> sections;
  const std::vector<Entry> entries = parse_toml(text, &sections);
  for (const auto& [name, line] : sections) {
    bool known = false;
    for (const auto& [k, _] : setters()) known |= k.rfind(name + ".", 0) == 0;
    if (!known) throw ValidationError("unknown section [" + name + "] (line " + std::to_string(line) + ")");
  }
  for (const auto& entry : entries) {
    const auto it = setters().find(entry.path);
    if (it == setters().end()) {
      const auto dot = entry.path.find('.');
      const std::string section = dot == std::string::npos ? std::string() : entry.path.substr(0, dot);
      bool known_section = false;
      for (const auto& [k, _] : setters()) known_section |= k.rfind(section + ".", 0) == 0;
      if (!known_section)
        throw ValidationError("unknown section or key '" + entry.path + "' (line " + std::to_string(entry.value.line) + ")");
      throw ValidationError("unknown key '" + entry.path + "' (line " + std::to_string(entry.value.line) + ")");
    }
    it->second(config, entry);
  }
  config.validate();
  return config;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config file not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s = buf;
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string format_config(const RunConfig& c) {
  std::ostringstream o;
  o << "[grid]\n"
    << "dim = " << c.grid.dim << "\n"
    << "v_max = " << num(c.grid.v_max) << "\n"
    << "v_points = " << c.grid.v_points << "\n"
    << "mode = " << quoted(c.grid.homogeneous ? "homogeneous" : "inhomogeneous") << "\n"
    << "x_extent = " << num(c.grid.x_extent) << "\n"
    << "x_points = " << c.grid.x_points << "\n"
    << "topology = " << quoted(c.grid.topology == Topology::periodic ? "periodic" : "truncated-box") << "\n\n";
  o << "[kernel]\n"
    << "gamma = " << num(c.gamma) << "\n"
    << "n = " << c.solver.kernel_index << "\n\n";
  o << "[solver]\n"
    << "epsilon = " << num(c.solver.epsilon) << "\n"
    << "dt = " << num(c.solver.dt) << "\n"
    << "t_end = " << num(c.solver.t_end) << "\n"
    << "picard_tol = " << num(c.solver.picard_tol) << "\n"
    << "picard_max_iters = " << c.solver.picard_max_iters << "\n"
    << "relaxation = " << num(c.solver.relaxation) << "\n"
    << "splitting = " << quoted(splitting_name(c.solver.splitting)) << "\n"
    << "stencil_order = " << c.solver.stencil_order << "\n"
    << "linear_tol = " << num(c.solver.linear_tol) << "\n"
    << "linear_max_iters = " << c.solver.linear_max_iters << "\n"
    << "clamp = " << (c.solver.clamp ? "true" : "false") << "\n"
    << "logit_scale = " << num(c.logit_scale) << "\n"
    << "viscosity_ladder = [";
  for (std::size_t k = 0; k < c.solver.viscosity_ladder.size(); ++k)
    o << (k ? ", " : "") << "[" << num(c.solver.viscosity_ladder[k].first) << ", "
      << c.solver.viscosity_ladder[k].second << "]";
  o << "]\n\n";
  o << "[initial]\n"
    << "family = " << quoted(c.initial.family) << "\n"
    << "amplitude = " << num(c.initial.amplitude) << "\n"
    << "temperature = " << num(c.initial.temperature) << "\n"
    << "drift = [";
  for (std::size_t k = 0; k < c.initial.drift.size(); ++k) o << (k ? ", " : "") << num(c.initial.drift[k]);
  o << "]\n"
    << "fd_a = " << num(c.initial.fd_a) << "\n"
    << "fd_b = " << num(c.initial.fd_b) << "\n"
    << "radius = " << num(c.initial.radius) << "\n"
    << "x_width = " << num(c.initial.x_width) << "\n"
    << "regularize = " << (c.regularize ? "true" : "false") << "\n";
  if (!c.initial_snapshot.empty()) o << "snapshot = " << quoted(c.initial_snapshot) << "\n";
  o << "\n[output]\n"
    << "directory = " << quoted(c.output.directory) << "\n"
    << "snapshot_stride = " << c.output.snapshot_stride << "\n"
    << "diagnostics_stride = " << c.output.diagnostics_stride << "\n\n";
  o << "[diagnostics]\n"
    << "dissipation_stride = " << c.diagnostics.dissipation_stride << "\n"
    << "weight_alpha = " << num(c.diagnostics.weight_alpha) << "\n"
    << "probe_alpha = " << num(c.diagnostics.probe.alpha) << "\n"
    << "probe_mu = " << num(c.diagnostics.probe.mu) << "\n"
    << "probe_radius = " << num(c.diagnostics.probe.radius) << "\n"
    << "probe_samples = " << c.diagnostics.probe.samples << "\n"
    << "envelope_margin = " << num(c.diagnostics.envelope_margin) << "\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// snapshots

namespace {

constexpr char kMagic[8] = {'L', 'F', 'D', 'S', 'N', 'A', 'P', '\0'};

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::vector<unsigned char> bytes;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& b, const std::string& name) : b_(b), name_(name) {}
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw RuntimeFailure("snapshot " + name_ + ": truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  const std::vector<unsigned char>& b_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_snapshot(const Snapshot& snap, const fs::path& path) {
  const PhaseGrid& g = snap.field.grid;
  ByteWriter payload;
  for (double v : snap.field.samples) payload.f64(v);

  ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kSnapshotVersion);
  w.u32(static_cast<std::uint32_t>(g.dim()));
  w.u32(static_cast<std::uint32_t>(g.velocity().points_per_axis()));
  w.f64(g.velocity().half_width());
  w.u32(g.homogeneous() ? 1u : 0u);
  if (g.homogeneous()) {
    w.u32(0);
    w.f64(0.0);
    w.u32(0);
  } else {
    w.u32(static_cast<std::uint32_t>(g.spatial()->points_per_axis()));
    w.f64(g.spatial()->extent());
    w.u32(g.spatial()->topology() == Topology::periodic ? 0u : 1u);
  }
  w.f64(snap.field.time);
  w.f64(snap.epsilon);
  w.i32(snap.kernel_index);
  w.f64(snap.gamma);
  w.u64(snap.field.samples.size());
  w.u64(fnv1a64(payload.bytes.data(), payload.bytes.size()));
  w.bytes.insert(w.bytes.end(), payload.bytes.begin(), payload.bytes.end());

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write snapshot " + tmp.string());
    out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw RuntimeFailure("cannot write snapshot " + tmp.string());
  }
  fs::rename(tmp, path);
}

Snapshot read_snapshot(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("snapshot not found: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  ByteReader r(bytes, name);
  r.need(sizeof kMagic);
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw RuntimeFailure("snapshot " + name + ": bad magic");
  r.skip(sizeof kMagic);
  const std::uint32_t version = r.u32();
  if (version != kSnapshotVersion)
    throw RuntimeFailure("snapshot " + name + ": version " + std::to_string(version) + " not supported (expected " +
                         std::to_string(kSnapshotVersion) + ")");
  const int dim = static_cast<int>(r.u32());
  const int m = static_cast<int>(r.u32());
  const double vmax = r.f64();
  const bool homogeneous = r.u32() != 0;
  const int xp = static_cast<int>(r.u32());
  const double extent = r.f64();
  const std::uint32_t topo = r.u32();
  const double time = r.f64();
  Snapshot s{DensityField(PhaseGrid(VelocityGrid(2, 1.0, 2))), 0.0, 0, 0.0};
  s.epsilon = r.f64();
  s.kernel_index = r.i32();
  s.gamma = r.f64();
  const std::uint64_t count = r.u64();
  const std::uint64_t checksum = r.u64();

  std::optional<SpatialGrid> spatial;
  try {
    if (!homogeneous) spatial.emplace(dim, extent, xp, topo == 0 ? Topology::periodic : Topology::truncated_box);
    PhaseGrid grid(VelocityGrid(dim, vmax, m), spatial);
    if (grid.size() != count) throw RuntimeFailure("snapshot " + name + ": sample count does not match header grid");
    r.need(count * 8);
    if (bytes.size() != r.pos() + count * 8) throw RuntimeFailure("snapshot " + name + ": trailing bytes");
    if (fnv1a64(bytes.data() + r.pos(), count * 8) != checksum)
      throw RuntimeFailure("snapshot " + name + ": checksum mismatch");
    std::vector<double> samples(count);
    for (auto& v : samples) v = r.f64();
    s.field = DensityField(std::move(grid), std::move(samples), time);
  } catch (const ValidationError& e) {
    throw RuntimeFailure("snapshot " + name + ": corrupt header (" + e.what() + ")");
  }
  return s;
}

void check_snapshot_grid(const Snapshot& snap, const RunConfig& config) {
  const PhaseGrid expected = make_grid(config);
  const PhaseGrid& got = snap.field.grid;
  if (got.dim() != expected.dim())
    throw ValidationError("snapshot dimension " + std::to_string(got.dim()) + " does not match grid.dim = " +
                          std::to_string(expected.dim()));
  if (!(got.velocity() == expected.velocity()))
    throw ValidationError("snapshot velocity grid does not match grid.v_max / grid.v_points");
  if (got.homogeneous() != expected.homogeneous()) throw ValidationError("snapshot mode does not match grid.mode");
  if (!(got == expected)) throw ValidationError("snapshot spatial grid does not match grid.x_extent / grid.x_points");
}

// ---------------------------------------------------------------------------
// CSV

std::string csv_header(int dim) {
  std::string h = "time,mass";
  for (int i = 0; i < dim; ++i) h += ",momentum_" + std::to_string(i + 1);
  h += ",kinetic_energy,inertia,entropy,dissipation_increment,cumulative_dissipation,pauli_min,pauli_max,"
       "weighted_grad_norm,picard_iters";
  return h;
}

std::string csv_row(const DiagnosticsRecord& r) {
  std::string out;
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    if (!out.empty()) out += ',';
    out += buf;
  };
  put(r.time);
  put(r.mass);
  for (double p : r.momentum) put(p);
  put(r.kinetic_energy);
  put(r.inertia);
  put(r.entropy);
  put(r.dissipation_increment);
  put(r.cumulative_dissipation);
  put(r.pauli_min);
  put(r.pauli_max);
  put(r.weighted_grad_norm);
  out += "," + std::to_string(r.picard_iters);
  return out;
}

std::vector<DiagnosticsRecord> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("diagnostics file not found: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw RuntimeFailure(path.string() + ": empty file");
  int dim = 0;
  while (line.find("momentum_" + std::to_string(dim + 1)) != std::string::npos) ++dim;
  if (line != csv_header(dim)) throw RuntimeFailure(path.string() + ": unexpected header");
  std::vector<DiagnosticsRecord> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      v.push_back(std::strtod(cell.c_str(), &end));
      if (end == cell.c_str()) throw RuntimeFailure(path.string() + ": bad value at line " + std::to_string(line_no));
    }
    if (v.size() != static_cast<std::size_t>(11 + dim))
      throw RuntimeFailure(path.string() + ": wrong column count at line " + std::to_string(line_no));
    DiagnosticsRecord r;
    std::size_t k = 0;
    r.time = v[k++];
    r.mass = v[k++];
    for (int i = 0; i < dim; ++i) r.momentum.push_back(v[k++]);
    r.kinetic_energy = v[k++];
    r.inertia = v[k++];
    r.entropy = v[k++];
    r.dissipation_increment = v[k++];
    r.cumulative_dissipation = v[k++];
    r.pauli_min = v[k++];
    r.pauli_max = v[k++];
    r.weighted_grad_norm = v[k++];
    r.picard_iters = static_cast<int>(v[k++]);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// run assembly

PhaseGrid make_grid(const RunConfig& config) { return build_phase_grid(config.grid); }

KernelTable make_kernel_table(const RunConfig& config) {
  const PhaseGrid grid = make_grid(config);
  return build_kernel_table(grid.velocity(), CrossSectionSpec::power_law(config.grid.dim, config.gamma),
                            KernelConfig(config.grid.dim, config.solver.kernel_index));
}

DensityField make_initial_state(const RunConfig& config) {
  DensityField f = [&] {
    if (!config.initial_snapshot.empty()) {
      Snapshot s = read_snapshot(config.initial_snapshot);
      check_snapshot_grid(s, config);
      s.field.time = 0.0;
      return s.field;
    }
    return make_initial_datum(make_grid(config), config.initial);
  }();
  if (config.regularize) f = regularize_initial_datum(f, config.solver.kernel_index);
  require_pauli_bound(f.samples, "initial datum");
  return f;
}

std::string snapshot_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "snap_%08d.lfd", step);
  return buf;
}

namespace {

int snapshot_step(const fs::path& p) {
  const std::string n = p.filename().string();
  if (n.size() != 17 || n.rfind("snap_", 0) != 0 || n.substr(13) != ".lfd") return -1;
  const std::string digits = n.substr(5, 8);
  if (!std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) return -1;
  return std::stoi(digits);
}

}  // namespace

std::vector<fs::path> list_snapshots(const fs::path& directory) {
  std::vector<std::pair<int, fs::path>> found;
  std::error_code ec;
  if (!fs::is_directory(directory, ec)) return {};
  for (const auto& entry : fs::directory_iterator(directory)) {
    const int step = snapshot_step(entry.path());
    if (step >= 0 && entry.is_regular_file()) found.emplace_back(step, entry.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [_, p] : found) out.push_back(p);
  return out;
}

namespace {

Snapshot make_snapshot(const DensityField& f, const RunConfig& config) {
  return Snapshot{f, config.solver.epsilon, config.solver.kernel_index, config.gamma};
}

json summary_json(const RunConfig& config, const RunTotals& t, double seconds) {
  json j;
  j["steps"] = t.steps;
  j["t_end"] = config.solver.t_end;
  j["dt"] = config.solver.dt;
  j["epsilon"] = config.solver.epsilon;
  j["kernel_n"] = config.solver.kernel_index;
  j["gamma"] = config.gamma;
  j["max_picard_iterations"] = t.max_picard_iterations;
  j["max_picard_contraction"] = t.max_picard_contraction;
  j["clamped_mass"] = t.clamped_mass;
  j["transport_clamped_mass"] = t.transport_clamped_mass;
  j["leaked_mass"] = t.leaked_mass;
  j["pre_clamp_min"] = t.pre_clamp_min;
  j["pre_clamp_max"] = t.pre_clamp_max;
  j["wall_seconds"] = seconds;
  return j;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

}  // namespace

RunTotals execute_run(const RunConfig& config, const DensityField& start, int first_step, bool append) {
  const auto wall0 = std::chrono::steady_clock::now();
  const fs::path dir = config.output.directory;
  fs::create_directories(dir);
  const fs::path csv_path = dir / "diagnostics.csv";
  const fs::path summary_path = dir / "run_summary.json";

  const KernelTable table = make_kernel_table(config);
  const CollisionModel model(table, config.solver.stencil_order, config.logit_scale);
  DiagnosticsRecorder recorder(model.mean_field(), EnvelopeSpec{config.diagnostics.weight_alpha, 0.0, 1.0},
                               config.diagnostics.dissipation_stride);

  RunTotals totals;
  totals.pre_clamp_min = *std::min_element(start.samples.begin(), start.samples.end());
  totals.pre_clamp_max = *std::max_element(start.samples.begin(), start.samples.end());
  const int dim = start.grid.dim();
  const double half_dt = 0.5 * config.solver.dt;

  std::ofstream csv;
  if (append) {
    // Drop rows written after the snapshot we restart from, then continue the series.
    std::vector<DiagnosticsRecord> kept;
    std::error_code ec;
    if (fs::exists(csv_path, ec)) {
      for (auto& r : read_csv(csv_path))
        if (r.time <= start.time + half_dt) kept.push_back(std::move(r));
    }
    if (kept.empty() || std::abs(kept.back().time - start.time) > half_dt) {
      kept.clear();
      append = false;
    } else {
      std::string text = csv_header(dim) + "\n";
      for (const auto& r : kept) text += csv_row(r) + "\n";
      write_text_atomic(csv_path, text);
      recorder.resume_from(kept.back(), entropy_dissipation(start, model.mean_field()));
      csv.open(csv_path, std::ios::app);
    }
    std::ifstream prev(summary_path);
    if (append && prev) {
      const json j = json::parse(prev, nullptr, false);
      if (!j.is_discarded()) {
        totals.clamped_mass = j.value("clamped_mass", 0.0);
        totals.transport_clamped_mass = j.value("transport_clamped_mass", 0.0);
        totals.leaked_mass = j.value("leaked_mass", 0.0);
        totals.pre_clamp_min = std::min(totals.pre_clamp_min, j.value("pre_clamp_min", 0.0));
        totals.pre_clamp_max = std::max(totals.pre_clamp_max, j.value("pre_clamp_max", 0.0));
        totals.max_picard_iterations = j.value("max_picard_iterations", 0);
        totals.max_picard_contraction = j.value("max_picard_contraction", 0.0);
      }
    }
  }
  if (!append) {
    for (const auto& old : list_snapshots(dir)) fs::remove(old);
    csv.open(csv_path, std::ios::trunc);
    csv << csv_header(dim) << "\n";
    csv << csv_row(recorder.record(start, totals.pre_clamp_min, totals.pre_clamp_max, 0, first_step)) << "\n";
    write_snapshot(make_snapshot(start, config), dir / snapshot_name(first_step));
  }
  if (!csv) throw RuntimeFailure("cannot write " + csv_path.string());

  const int steps = step_count(start.time, config.solver.t_end, config.solver.dt);
  auto observer = [&](const DensityField& f, const StepReport& rep, int s) {
    const int step = first_step + s;
    const double pmin = std::min(rep.picard.substep.pre_clamp_min,
                                 f.grid.homogeneous() ? rep.picard.substep.pre_clamp_min : rep.transport.pre_clamp_min);
    const double pmax = std::max(rep.picard.substep.pre_clamp_max,
                                 f.grid.homogeneous() ? rep.picard.substep.pre_clamp_max : rep.transport.pre_clamp_max);
    totals.steps = s;
    totals.pre_clamp_min = std::min(totals.pre_clamp_min, pmin);
    totals.pre_clamp_max = std::max(totals.pre_clamp_max, pmax);
    totals.clamped_mass += rep.picard.substep.clamped_mass + rep.transport.clamped_mass;
    totals.transport_clamped_mass += rep.transport.clamped_mass;
    totals.leaked_mass += rep.transport.leaked_mass;
    totals.max_picard_iterations = std::max(totals.max_picard_iterations, rep.picard.iterations);
    for (double c : rep.picard.contraction_ratios)
      if (std::isfinite(c)) totals.max_picard_contraction = std::max(totals.max_picard_contraction, c);
    const auto& row = recorder.record(f, pmin, pmax, rep.picard.iterations, step);
    const bool last = s == steps;
    if (step % config.output.diagnostics_stride == 0 || last) csv << csv_row(row) << "\n";
    if ((config.output.snapshot_stride > 0 && step % config.output.snapshot_stride == 0) || last) {
      csv.flush();
      write_snapshot(make_snapshot(f, config), dir / snapshot_name(step));
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
      write_text_atomic(summary_path, summary_json(config, totals, secs).dump(2) + "\n");
    }
  };
  if (steps >= 1) run_trajectory(config.solver, start, model, observer);
  csv.flush();
  totals.steps = std::max(totals.steps, 0);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  write_text_atomic(summary_path, summary_json(config, totals, secs).dump(2) + "\n");
  return totals;
}

// ---------------------------------------------------------------------------
// CLI

namespace {

struct Check {
  std::string name;
  double value;
  double threshold;
  bool pass;
  std::string relation;
};

json checks_json(const std::vector<Check>& checks) {
  json arr = json::array();
  for (const auto& c : checks)
    arr.push_back({{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"relation", c.relation},
                   {"pass", c.pass}});
  return arr;
}

Check at_most(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, std::isfinite(value) && value <= threshold, "<="};
}
Check at_least(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, std::isfinite(value) && value >= threshold, ">="};
}

std::vector<Check> kernel_checks(const KernelReport& r) {
  return {at_least("psd_min_eigenvalue", r.psd_min_eigenvalue, -1e-12),
          at_most("max_az_residual", r.max_az_residual, 1e-12),
          at_most("symmetry_residual", r.symmetry_residual, 0.0),
          at_most("sqrt_residual", r.sqrt_residual, 1e-10),
          at_most("divergence_fd_order_deviation", std::abs(r.divergence_fd_order - 2.0), 0.1),
          at_most("sqrt_divergence_fd_order_deviation", std::abs(r.sqrt_divergence_fd_order - 2.0), 0.1),
          at_least("ellipticity_floor_margin", r.ellipticity_floor_margin, 0.0)};
}

json kernel_json(const KernelReport& r) {
  return {{"psd_min_eigenvalue", r.psd_min_eigenvalue},
          {"max_az_residual", r.max_az_residual},
          {"symmetry_residual", r.symmetry_residual},
          {"sqrt_residual", r.sqrt_residual},
          {"divergence_fd_error", r.divergence_fd_error},
          {"divergence_fd_order", r.divergence_fd_order},
          {"sqrt_divergence_fd_error", r.sqrt_divergence_fd_error},
          {"sqrt_divergence_fd_order", r.sqrt_divergence_fd_order},
          {"ellipticity_floor_margin", r.ellipticity_floor_margin},
          {"uniform_constant_margin", r.uniform_constant_margin},
          {"printed_coefficient_fd_error", r.printed_coefficient_fd_error},
          {"samples", r.samples}};
}

bool all_pass(const std::vector<Check>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

RunConfig config_or_defaults(const std::string& path, const std::string& output) {
  RunConfig c = path.empty() ? RunConfig{} : load_config(path);
  if (!output.empty()) c.output.directory = output;
  c.validate();
  return c;
}

// one run per (eps, n) rung in rung_<k>/, plus ladder.json with L1 distances between successive finals
int cmd_ladder(const RunConfig& config) {
  const fs::path root = config.output.directory;
  fs::create_directories(root);
  json rungs = json::array();
  std::vector<double> prev;
  for (std::size_t k = 0; k < config.solver.viscosity_ladder.size(); ++k) {
    RunConfig c = config;
    c.solver.viscosity_ladder.clear();
    c.solver.epsilon = config.solver.viscosity_ladder[k].first;
    c.solver.kernel_index = config.solver.viscosity_ladder[k].second;
    c.output.directory = (root / ("rung_" + std::to_string(k))).string();
    c.validate();
    const RunTotals t = execute_run(c, make_initial_state(c), 0, false);
    const Snapshot last = read_snapshot(list_snapshots(c.output.directory).back());
    json entry = {{"epsilon", c.solver.epsilon}, {"n", c.solver.kernel_index}, {"steps", t.steps}};
    if (!prev.empty()) {
      double d = 0.0;
      for (std::size_t i = 0; i < prev.size(); ++i) d += std::abs(last.field.samples[i] - prev[i]);
      entry["l1_distance_to_previous"] = d * last.field.grid.quadrature_weight();
    }
    std::cout << "rung " << k << ": " << entry.dump() << "\n";
    rungs.push_back(entry);
    prev = last.field.samples;
  }
  write_text_atomic(root / "ladder.json", json{{"rungs", rungs}}.dump(2) + "\n");
  return 0;
}

int cmd_run(const RunConfig& config) {
  if (!config.solver.viscosity_ladder.empty()) return cmd_ladder(config);
  const DensityField f0 = make_initial_state(config);
  const RunTotals t = execute_run(config, f0, 0, false);
  std::cout << "completed " << t.steps << " steps; output in " << config.output.directory << "\n";
  return 0;
}

int cmd_resume(const RunConfig& config, const std::string& snapshot) {
  fs::path path = snapshot;
  if (path.empty()) {
    const auto snaps = list_snapshots(config.output.directory);
    if (snaps.empty()) throw ValidationError("resume: no snapshots in " + config.output.directory);
    path = snaps.back();
  }
  Snapshot s = read_snapshot(path);
  check_snapshot_grid(s, config);
  const int step = static_cast<int>(std::llround(s.field.time / config.solver.dt));
  if (step_count(s.field.time, config.solver.t_end, config.solver.dt) < 1) {
    std::cout << "nothing to do: snapshot at t = " << s.field.time << " already reaches t_end\n";
    return 0;
  }
  const RunTotals t = execute_run(config, s.field, step, true);
  std::cout << "resumed at step " << step << "; completed " << t.steps << " more steps\n";
  return 0;
}

int cmd_check_kernel(const RunConfig& config) {
  const KernelReport r = check_kernel_invariants(make_kernel_table(config));
  const auto checks = kernel_checks(r);
  json j = kernel_json(r);
  j["checks"] = checks_json(checks);
  j["pass"] = all_pass(checks);
  std::cout << j.dump(2) << "\n";
  return all_pass(checks) ? 0 : 2;
}

int cmd_diagnose(const RunConfig& config, bool assert_mode) {
  const fs::path dir = config.output.directory;
  const auto records = read_csv(dir / "diagnostics.csv");
  if (records.size() < 2) throw ValidationError("diagnose: need at least two diagnostics rows in " + dir.string());
  const auto snaps = list_snapshots(dir);
  if (snaps.empty()) throw ValidationError("diagnose: no snapshots in " + dir.string());

  const KernelTable table = make_kernel_table(config);
  const MeanField engine(table, config.solver.stencil_order);
  const int dim = config.grid.dim;
  const double eps = config.solver.epsilon;
  std::vector<Check> checks;
  json report;

  const double m0 = records.front().mass;
  double mass_drift = 0.0, momentum_drift = 0.0, pmin = 1.0, pmax = 0.0, wmax = 0.0;
  for (const auto& r : records) {
    mass_drift = std::max(mass_drift, std::abs(r.mass - m0) / m0);
    double dp = 0.0;
    for (int i = 0; i < dim; ++i) dp = std::max(dp, std::abs(r.momentum[i] - records.front().momentum[i]));
    momentum_drift = std::max(momentum_drift, dp / m0);
    pmin = std::min(pmin, r.pauli_min);
    pmax = std::max(pmax, r.pauli_max);
    wmax = std::max(wmax, r.weighted_grad_norm);
  }
  checks.push_back(at_most("mass_drift", mass_drift, 1e-8));
  checks.push_back(at_most("momentum_drift", momentum_drift, 1e-8));

  const DriftReport drift = drift_check(records, eps, dim);
  report["drift"] = {{"constant", drift.constant},
                     {"energy_final_rel_dev", drift.energy_final_rel_dev},
                     {"energy_max_rel_dev", drift.energy_max_rel_dev},
                     {"inertia_final_rel_dev", drift.inertia_final_rel_dev},
                     {"energy_increment", drift.energy_increment},
                     {"energy_predicted", drift.energy_predicted},
                     {"inertia_increment", drift.inertia_increment},
                     {"inertia_predicted", drift.inertia_predicted}};
  if (eps > 0.0) {
    checks.push_back(at_most("energy_law", drift.energy_final_rel_dev, 0.02));
    if (!config.grid.homogeneous) checks.push_back(at_most("inertia_law", drift.inertia_final_rel_dev, 0.05));
  } else {
    const double e0 = records.front().kinetic_energy;
    checks.push_back(at_most("energy_constant", std::abs(records.back().kinetic_energy - e0) / e0, 1e-8));
  }

  const EntropyReport ent = entropy_inequality_check(records, 1.0);
  report["entropy"] = {{"max_slack", ent.max_slack}, {"initial_entropy", ent.initial_entropy}};
  checks.push_back(at_most("entropy_inequality", ent.max_slack, 1e-3 * std::abs(ent.initial_entropy)));

  checks.push_back(at_least("pauli_min", pmin, -1e-8));
  checks.push_back(at_most("pauli_max", pmax, 1.0 + 1e-8));
  std::ifstream sin(dir / "run_summary.json");
  if (sin) {
    const json summary = json::parse(sin, nullptr, false);
    if (!summary.is_discarded()) {
      report["run_summary"] = summary;
      checks.push_back(at_most("clamped_mass", summary.value("clamped_mass", 0.0), 1e-8));
    }
  }
  checks.push_back(at_most("weighted_grad_norm_growth", wmax / records.front().weighted_grad_norm, 10.0));

  // Recomputed from stored snapshots.
  json snap_rows = json::array();
  const Snapshot first = read_snapshot(snaps.front());
  const Snapshot last = read_snapshot(snaps.back());
  check_snapshot_grid(first, config);
  double max_rate = 0.0;
  for (const auto& p : snaps) {
    const Snapshot s = read_snapshot(p);
    check_snapshot_grid(s, config);
    const ConservedMoments m = conserved_moments(s.field, s.field.time);
    const double rate = entropy_dissipation(s.field, engine);
    max_rate = std::max(max_rate, rate);
    snap_rows.push_back({{"file", p.filename().string()},
                         {"time", s.field.time},
                         {"mass", m.mass},
                         {"kinetic_energy", m.energy},
                         {"inertia", m.inertia},
                         {"entropy", quantum_entropy(s.field)},
                         {"dissipation", rate}});
  }
  report["snapshots"] = snap_rows;
  double l1 = 0.0, n0 = 0.0;
  for (std::size_t k = 0; k < first.field.samples.size(); ++k) {
    l1 += std::abs(last.field.samples[k] - first.field.samples[k]);
    n0 += std::abs(first.field.samples[k]);
  }
  report["relative_l1_change"] = l1 / n0;
  if (eps == 0.0 && config.initial.family == "fermi-dirac-equilibrium" && config.initial_snapshot.empty() &&
      !config.regularize) {
    checks.push_back(at_most("equilibrium_l1_change", l1 / n0, 1e-3));
    checks.push_back(at_most("equilibrium_dissipation", max_rate, 1e-6));
  }

  const EnvelopeFit fit = fit_envelope(last.field, config.diagnostics.envelope_margin);
  const EnvelopeReport env = envelope_check(last.field, fit.spec);
  report["envelope"] = {{"alpha", fit.spec.alpha},       {"c_lower", fit.spec.c_lower},
                        {"c_upper", fit.spec.c_upper},   {"raw_c_lower", fit.raw_c_lower},
                        {"raw_c_upper", fit.raw_c_upper}, {"raw_alpha_upper", fit.raw_alpha_upper},
                        {"degenerate", fit.degenerate},  {"worst_margin", env.worst_margin}};
  checks.push_back(at_most("envelope_violations", static_cast<double>(env.lower_violations + env.upper_violations), 0.0));

  const EllipticityProbe probe = ellipticity_probe(last.field, engine, config.diagnostics.probe);
  report["ellipticity_probe"] = {{"alpha", probe.alpha},
                                 {"mu", probe.mu},
                                 {"k_alpha_fraction", probe.k_alpha_fraction},
                                 {"nu_estimate", std::isfinite(probe.nu_estimate) ? json(probe.nu_estimate) : json()},
                                 {"nu_floor", probe.nu_floor},
                                 {"floor_min_slack", probe.floor_min_slack}};
  checks.push_back(at_least("ellipticity_floor_slack", probe.floor_min_slack, 0.0));

  const KernelReport kr = check_kernel_invariants(table);
  report["kernel"] = kernel_json(kr);
  for (auto& c : kernel_checks(kr)) {
    c.name = "kernel." + c.name;
    checks.push_back(c);
  }

  report["checks"] = checks_json(checks);
  report["pass"] = all_pass(checks);
  const std::string text = report.dump(2) + "\n";
  write_text_atomic(dir / "diagnose_report.json", text);
  std::cout << text;
  if (assert_mode && !all_pass(checks)) {
    for (const auto& c : checks)
      if (!c.pass) std::cerr << "FAIL " << c.name << ": " << c.value << " (needs " << c.relation << " " << c.threshold << ")\n";
    return 2;
  }
  return 0;
}

void apply_thread_env() {
#ifdef _OPENMP
  if (const char* t = std::getenv("LFD_THREADS")) {
    const int n = std::atoi(t);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Regularized Landau-Fermi-Dirac solver"};
  app.require_subcommand(1);
  std::string config_path, output, snapshot;
  bool assert_mode = false;

  auto* run = app.add_subcommand("run", "integrate from the configured initial datum");
  run->add_option("--config", config_path, "run configuration (TOML)");
  run->add_option("--output", output, "output directory (overrides output.directory)");

  auto* resume = app.add_subcommand("resume", "continue from the latest (or given) snapshot");
  resume->add_option("--config", config_path, "run configuration (TOML)");
  resume->add_option("--output", output, "output directory");
  resume->add_option("--snapshot", snapshot, "snapshot to restart from");

  auto* diagnose = app.add_subcommand("diagnose", "recompute diagnostics from stored output");
  diagnose->add_option("--config", config_path, "run configuration (TOML)");
  diagnose->add_option("--output", output, "output directory");
  diagnose->add_flag("--assert", assert_mode, "exit nonzero when a threshold is violated");

  auto* check = app.add_subcommand("check-kernel", "run the kernel invariant suite");
  check->add_option("--config", config_path, "run configuration (TOML)");

  auto* defaults = app.add_subcommand("print-config", "print the effective configuration");
  defaults->add_option("--config", config_path, "run configuration (TOML)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  apply_thread_env();
  try {
    const RunConfig config = config_or_defaults(config_path, output);
    if (*run) return cmd_run(config);
    if (*resume) return cmd_resume(config, snapshot);
    if (*diagnose) return cmd_diagnose(config, assert_mode);
    if (*check) return cmd_check_kernel(config);
    std::cout << format_config(config);
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const RuntimeFailure& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace lfd
