#include "sav/harness.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <climits>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <utility>

#include "json.hpp"
#include "sav/errors.hpp"

namespace sav {
namespace {

namespace fs = std::filesystem;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos == v.size() && std::isfinite(x)) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

int to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    long x = std::stol(v, &pos);
    if (pos == v.size() && x >= INT_MIN && x <= INT_MAX) return static_cast<int>(x);
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

// Tracks which input keys the plan consumed so leftovers can be rejected.
struct KeyReader {
  const ConfigMap& cfg;
  std::set<std::string> consumed;

  const std::string* find(const std::string& key) {
    auto it = cfg.find(key);
    if (it == cfg.end()) return nullptr;
    consumed.insert(key);
    return &it->second;
  }
  bool has(const std::string& key) const { return cfg.count(key) != 0; }
  std::string require(const std::string& key) {
    const std::string* v = find(key);
    if (v == nullptr) throw ConfigError("missing required config key '" + key + "'");
    return *v;
  }
  std::string get(const std::string& key, const std::string& def) {
    const std::string* v = find(key);
    return v != nullptr ? *v : def;
  }
  double get_double(const std::string& key, double def) {
    const std::string* v = find(key);
    return v != nullptr ? to_double(key, *v) : def;
  }
  double require_double(const std::string& key) { return to_double(key, require(key)); }
  int get_int(const std::string& key, int def) {
    const std::string* v = find(key);
    return v != nullptr ? to_int(key, *v) : def;
  }
  bool get_bool(const std::string& key, bool def) {
    const std::string* v = find(key);
    return v != nullptr ? to_bool(key, *v) : def;
  }
};

// Every key the schema can ever accept, for error messages that separate
// misplaced keys from unknown ones.
const std::set<std::string>& all_known_keys() {
  static const std::set<std::string> keys = {
      "model.kind",      "model.ic",        "model.epsilon", "model.lambda",
      "model.delta",     "model.kappa",     "model.c",       "model.slope_selection",
      "model.dealias",   "scheme.name",     "scheme.variant", "scheme.gamma",
      "scheme.base",     "scheme.sweeps",   "scheme.tol",    "scheme.reference",
      "grid.n",          "grid.nx",         "grid.ny",       "time.dt",
      "time.t_final",    "time.snapshots",  "output.dir",    "output.format",
  };
  return keys;
}

const std::vector<std::pair<std::string, std::string>>& scheme_catalogue() {
  static const std::vector<std::pair<std::string, std::string>> names = {
      {"diark_2_2_2", "DIARK(2,2,2)"}, {"diark_2_3_3", "DIARK(2,3,3)"},
      {"diark_3_4_3", "DIARK(3,4,3)"}, {"diark_5_6_4", "DIARK(5,6,4)"},
      {"gark_4_5_4", "GARK(4,5,4)"},
  };
  return names;
}

std::string scheme_display_name(const std::string& snake) {
  for (const auto& [s, d] : scheme_catalogue())
    if (s == snake) return d;
  return "";
}

std::string scheme_snake_name(const std::string& display) {
  for (const auto& [s, d] : scheme_catalogue())
    if (d == display) return s;
  return display;
}

std::vector<double> split_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) out.push_back(to_double(key, trim(item)));
  return out;
}

// Mirrors the step count the integrate driver will take from t = 0.
long planned_steps(double t_final, double dt) {
  long n = static_cast<long>(std::floor(t_final / dt + 1e-9));
  double rem = t_final - static_cast<double>(n) * dt;
  if (rem > 1e-9 * dt) ++n;
  return n;
}

// Snapshot times mapped onto step indices; times off the step grid are
// configuration errors.
std::map<long, double> snapshot_steps(const RunPlan& plan) {
  const long n = planned_steps(plan.t_final, plan.dt);
  std::map<long, double> out;
  for (double ts : plan.snapshot_times) {
    long idx;
    if (std::abs(ts - plan.t_final) <= 1e-9 * std::max(1.0, std::abs(plan.t_final))) {
      idx = n;
    } else {
      idx = std::llround(ts / plan.dt);
      if (std::abs(static_cast<double>(idx) * plan.dt - ts) > 1e-9 * std::max(1.0, std::abs(ts)))
        throw ConfigError("snapshot time " + fmt17(ts) + " is not a multiple of time.dt");
    }
    out.emplace(idx, ts);
  }
  return out;
}

void atomic_write(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot write '" + tmp.string() + "'");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw ConfigError("cannot write '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

void put_le(std::string& buf, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::string& buf, size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  return v;
}

// Closed-form forcing that makes phi = sin(x) sin(y) cos(t) solve the
// Cahn-Hilliard flow: h = phi_t - lambda ((2 - 4 eps^2) phi + Lap phi^3),
// using Lap phi = -2 phi and the triple-angle expansion of sin^3.
std::function<double(double, double, double)> manufactured_ch_source(double lambda, double eps) {
  return [lambda, eps](double x, double y, double t) {
    const double sx = std::sin(x), sy = std::sin(y);
    const double s3x = std::sin(3.0 * x), s3y = std::sin(3.0 * y);
    const double ct = std::cos(t);
    const double phi = sx * sy * ct;
    const double c3 = ct * ct * ct;
    const double lap_phi3 =
        (c3 / 16.0) * (-18.0 * sx * sy + 30.0 * sx * s3y + 30.0 * s3x * sy - 18.0 * s3x * s3y);
    return -sx * sy * std::sin(t) - lambda * ((2.0 - 4.0 * eps * eps) * phi + lap_phi3);
  };
}

StepFn make_pair_stepper(const GradientFlowModel& model, const ARKPair& pair,
                         const std::string& variant, std::shared_ptr<SourceTerm> source) {
  const bool ark = variant == "ark";
  return [model, pair, ark, source](SAVState& state, double tau) {
    StepOptions opts;
    opts.source = source ? source.get() : nullptr;
    return ark ? step_sav_ark(model, pair, state, tau, opts)
               : step_sav_mark(model, pair, state, tau, opts);
  };
}

StepFn make_rkpc_stepper(const GradientFlowModel& model, const ButcherTableau& base,
                         const RKPCOptions& rkpc, std::shared_ptr<SourceTerm> source) {
  return [model, base, rkpc, source](SAVState& state, double tau) {
    StepOptions opts;
    opts.source = source ? source.get() : nullptr;
    return step_sav_rkpc(model, base, rkpc, state, tau, opts);
  };
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.rfind("\xef\xbb\xbf", 0) == 0) line.erase(0, 3);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3)
        throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": key outside any section");
    const std::string key = trim(s.substr(0, eq));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    const std::string full = section + "." + key;
    if (out.count(full) != 0) throw ConfigError("duplicate config key '" + full + "'");
    out[full] = trim(s.substr(eq + 1));
  }
  return out;
}

ConfigMap load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str());
}

const std::vector<std::string>& initial_condition_names() {
  static const std::vector<std::string> names = {"ac_sine", "ch_cos", "mbe_two_mode",
                                                 "manufactured_ch"};
  return names;
}

const InitialCondition& initial_condition(const std::string& name) {
  using std::cos;
  using std::sin;
  constexpr double pi = std::numbers::pi;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  static const std::vector<InitialCondition> registry = {
      {"ac_sine", 0.0, 1.0, 0.0, 1.0,
       [](double x, double y) { return 0.1 * sin(2.0 * pi * x) * sin(2.0 * pi * y); },
       nullptr},
      {"ch_cos", 0.0, two_pi, 0.0, two_pi,
       [](double x, double y) {
         const double sq = cos(8.0 * pi * x) * cos(6.0 * pi * y);
         return 0.05 * (cos(6.0 * pi * x) * cos(8.0 * pi * y) + sq * sq +
                        cos(2.0 * pi * x - 10.0 * pi * y) * cos(4.0 * pi * x - 2.0 * pi * y));
       },
       nullptr},
      {"mbe_two_mode", 0.0, two_pi, 0.0, two_pi,
       [](double x, double y) {
         return 0.1 * (sin(3.0 * x) * sin(5.0 * y) + sin(5.0 * x) * sin(5.0 * y));
       },
       nullptr},
      {"manufactured_ch", 0.0, two_pi, 0.0, two_pi,
       [](double x, double y) { return sin(x) * sin(y); },
       [](double x, double y, double t) { return sin(x) * sin(y) * cos(t); }},
  };
  for (const auto& ic : registry)
    if (ic.name == name) return ic;
  std::string names;
  for (const auto& n : initial_condition_names()) names += (names.empty() ? "" : ", ") + n;
  throw ConfigError("unknown initial condition '" + name + "' (available: " + names + ")");
}

RunPlan plan_run(const ConfigMap& cfg) {
  KeyReader rd{cfg, {}};
  RunPlan plan;

  const std::string kind = rd.require("model.kind");
  if (kind != "ac" && kind != "ch" && kind != "mbe")
    throw ConfigError("model.kind must be ac, ch, or mbe, got '" + kind + "'");
  plan.resolved["model.kind"] = kind;

  const std::string default_ic =
      kind == "ac" ? "ac_sine" : (kind == "ch" ? "ch_cos" : "mbe_two_mode");
  const std::string ic_name = rd.get("model.ic", default_ic);
  const InitialCondition& ic = initial_condition(ic_name);
  if (ic.exact && kind != "ch")
    throw ConfigError("initial condition '" + ic_name + "' requires model.kind=ch");
  plan.resolved["model.ic"] = ic_name;

  int nx, ny;
  if (rd.has("grid.n")) {
    if (rd.has("grid.nx") || rd.has("grid.ny"))
      throw ConfigError("give either grid.n or grid.nx/grid.ny, not both");
    nx = ny = to_int("grid.n", rd.require("grid.n"));
    plan.resolved["grid.n"] = std::to_string(nx);
  } else if (rd.has("grid.nx") || rd.has("grid.ny")) {
    if (!rd.has("grid.nx") || !rd.has("grid.ny"))
      throw ConfigError("grid.nx and grid.ny must be given together");
    nx = to_int("grid.nx", rd.require("grid.nx"));
    ny = to_int("grid.ny", rd.require("grid.ny"));
  } else {
    nx = ny = 128;
  }
  plan.resolved["grid.nx"] = std::to_string(nx);
  plan.resolved["grid.ny"] = std::to_string(ny);

  const Grid2D grid = make_grid(nx, ny, ic.x_left, ic.x_right, ic.y_left, ic.y_right);
  plan.sp = std::make_shared<Spectral>(grid);

  const double kappa_def = kind == "ac" ? 1.0 : 0.0;
  const double kappa = rd.get_double("model.kappa", kappa_def);
  const double c_shift = rd.get_double("model.c", 1.0);
  plan.resolved["model.kappa"] = fmt17(kappa);
  plan.resolved["model.c"] = fmt17(c_shift);

  double lambda = 0.0, eps = 0.0;
  if (kind == "ac") {
    eps = rd.get_double("model.epsilon", 0.01);
    plan.resolved["model.epsilon"] = fmt17(eps);
    plan.model = make_ac(plan.sp, eps, kappa, c_shift);
  } else if (kind == "ch") {
    lambda = rd.get_double("model.lambda", 1.0);
    eps = rd.get_double("model.epsilon", 0.01);
    plan.resolved["model.lambda"] = fmt17(lambda);
    plan.resolved["model.epsilon"] = fmt17(eps);
    plan.model = make_ch(plan.sp, lambda, eps, kappa, c_shift);
  } else {
    lambda = rd.get_double("model.lambda", 1.0);
    const double delta = rd.get_double("model.delta", 0.1);
    const bool slope = rd.get_bool("model.slope_selection", true);
    plan.resolved["model.lambda"] = fmt17(lambda);
    plan.resolved["model.delta"] = fmt17(delta);
    plan.resolved["model.slope_selection"] = slope ? "true" : "false";
    plan.model = make_mbe(plan.sp, lambda, delta, kappa, c_shift, slope);
  }
  const bool dealias = rd.get_bool("model.dealias", false);
  plan.model.dealias = dealias;
  plan.resolved["model.dealias"] = dealias ? "true" : "false";

  plan.u0 = sample(grid, ic.value);
  if (ic.exact) {
    plan.exact = ic.exact;
    plan.source = std::make_shared<SourceTerm>();
    plan.source->h = manufactured_ch_source(lambda, eps);
  }

  const std::string scheme = rd.require("scheme.name");
  plan.resolved["scheme.name"] = scheme;
  if (scheme == "rkpc") {
    const std::string base = rd.get("scheme.base", "gauss2");
    const int sweeps = rd.get_int("scheme.sweeps", 4);
    const double tol = rd.get_double("scheme.tol", 1e-14);
    if (sweeps < 1) throw ConfigError("scheme.sweeps must be at least 1");
    if (tol < 0.0) throw ConfigError("scheme.tol must be nonnegative");
    plan.resolved["scheme.base"] = base;
    plan.resolved["scheme.sweeps"] = std::to_string(sweeps);
    plan.resolved["scheme.tol"] = fmt17(tol);
    RKPCOptions rkpc;
    rkpc.sweeps = sweeps;
    rkpc.tol = tol;
    plan.scheme_label = "rkpc_" + base + "_m" + std::to_string(sweeps);
    plan.stepper = make_rkpc_stepper(plan.model, base_tableau(base), rkpc, plan.source);
  } else if (!scheme_display_name(scheme).empty()) {
    const std::string variant = rd.get("scheme.variant", "mark");
    if (variant != "mark" && variant != "ark")
      throw ConfigError("scheme.variant must be mark or ark, got '" + variant + "'");
    plan.resolved["scheme.variant"] = variant;
    ARKPair pair;
    if (scheme == "diark_2_2_2") {
      const double gamma = rd.get_double("scheme.gamma", (3.0 + std::sqrt(3.0)) / 6.0);
      plan.resolved["scheme.gamma"] = fmt17(gamma);
      pair = make_diark_2_2_2(gamma);
    } else {
      pair = builtin_ark(scheme_display_name(scheme));
    }
    plan.scheme_label = scheme + (variant == "ark" ? "_ark" : "");
    plan.stepper = make_pair_stepper(plan.model, pair, variant, plan.source);
  } else {
    std::string names = "rkpc";
    for (const auto& [s, d] : scheme_catalogue()) names += ", " + s;
    throw ConfigError("unknown scheme.name '" + scheme + "' (available: " + names + ")");
  }

  const std::string reference = rd.get("scheme.reference", "diark_5_6_4");
  if (scheme_display_name(reference).empty())
    throw ConfigError("scheme.reference must name a built-in pair, got '" + reference + "'");
  plan.resolved["scheme.reference"] = reference;

  plan.dt = rd.require_double("time.dt");
  if (plan.dt <= 0.0) throw ConfigError("time.dt must be positive");
  plan.t_final = rd.require_double("time.t_final");
  if (plan.t_final < 0.0) throw ConfigError("time.t_final must be nonnegative");
  plan.resolved["time.dt"] = fmt17(plan.dt);
  plan.resolved["time.t_final"] = fmt17(plan.t_final);

  std::vector<double> snaps = {0.0, plan.t_final};
  if (const std::string* v = rd.find("time.snapshots")) {
    for (double ts : split_double_list("time.snapshots", *v)) {
      if (ts < -1e-12 || ts > plan.t_final + 1e-9 * std::max(1.0, plan.t_final))
        throw ConfigError("snapshot time " + fmt17(ts) + " is outside [0, t_final]");
      snaps.push_back(ts);
    }
  }
  std::sort(snaps.begin(), snaps.end());
  for (size_t i = 1; i < snaps.size();) {
    if (std::abs(snaps[i] - snaps[i - 1]) <= 1e-9)
      snaps.erase(snaps.begin() + static_cast<long>(i));
    else
      ++i;
  }
  plan.snapshot_times = snaps;
  std::string joined;
  for (double ts : snaps) joined += (joined.empty() ? "" : ",") + fmt17(ts);
  plan.resolved["time.snapshots"] = joined;
  snapshot_steps(plan);  // validates commensurability with time.dt

  plan.out_dir = rd.get("output.dir", "out");
  const std::string format = rd.get("output.format", "savf");
  if (format != "savf" && format != "csv")
    throw ConfigError("output.format must be savf or csv, got '" + format + "'");
  plan.format = format;
  plan.resolved["output.dir"] = plan.out_dir;
  plan.resolved["output.format"] = format;

  for (const auto& [key, value] : cfg) {
    if (rd.consumed.count(key) != 0) continue;
    if (all_known_keys().count(key) != 0)
      throw ConfigError("config key '" + key + "' does not apply to this configuration");
    throw ConfigError("unknown config key '" + key + "'");
  }
  return plan;
}

std::string output_dir(const ConfigMap& cfg) {
  auto it = cfg.find("output.dir");
  return it != cfg.end() ? it->second : "out";
}

void write_field_savf(const std::string& path, const RealField& u, double time) {
  std::string buf;
  buf.reserve(32 + 8 * u.v.size());
  buf += "SAVF";
  put_le(buf, 1, 4);
  put_le(buf, static_cast<std::uint64_t>(u.nx), 8);
  put_le(buf, static_cast<std::uint64_t>(u.ny), 8);
  put_le(buf, std::bit_cast<std::uint64_t>(time), 8);
  for (double x : u.v) put_le(buf, std::bit_cast<std::uint64_t>(x), 8);
  atomic_write(path, buf);
}

RealField read_field_savf(const std::string& path, double* time) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open snapshot '" + path + "'");
  std::ostringstream raw;
  raw << f.rdbuf();
  const std::string buf = raw.str();
  if (buf.size() < 32 || buf.compare(0, 4, "SAVF") != 0)
    throw ConfigError("'" + path + "' is not a SAVF snapshot");
  if (get_le(buf, 4, 4) != 1)
    throw ConfigError("'" + path + "': unsupported snapshot version");
  const std::uint64_t nx = get_le(buf, 8, 8);
  const std::uint64_t ny = get_le(buf, 16, 8);
  if (nx == 0 || ny == 0 || nx > (1u << 20) || ny > (1u << 20) ||
      buf.size() != 32 + 8 * nx * ny)
    throw ConfigError("'" + path + "': truncated or oversized snapshot");
  if (time != nullptr) *time = std::bit_cast<double>(get_le(buf, 24, 8));
  RealField u;
  u.nx = static_cast<int>(nx);
  u.ny = static_cast<int>(ny);
  u.v.resize(nx * ny);
  for (size_t i = 0; i < u.v.size(); ++i)
    u.v[i] = std::bit_cast<double>(get_le(buf, 32 + 8 * i, 8));
  return u;
}

void write_field_csv(const std::string& path, const RealField& u) {
  std::string buf;
  for (int j = 0; j < u.nx; ++j) {
    for (int k = 0; k < u.ny; ++k) {
      if (k > 0) buf += ',';
      buf += fmt17(u.at(j, k));
    }
    buf += '\n';
  }
  atomic_write(path, buf);
}

RunResult run(const ConfigMap& cfg) {
  RunPlan plan = plan_run(cfg);
  fs::create_directories(plan.out_dir);

  RunResult res;
  res.dir = plan.out_dir;
  res.status = "ok";

  SAVState state = make_state(plan.model, plan.u0);
  const std::map<long, double> snaps = snapshot_steps(plan);
  const long n_steps = planned_steps(plan.t_final, plan.dt);

  std::vector<std::string> snapshot_files;
  auto write_snapshot = [&](long step, const SAVState& st) {
    char name[32];
    std::snprintf(name, sizeof name, "u_%08ld.%s", step, plan.format == "csv" ? "csv" : "savf");
    const fs::path path = fs::path(plan.out_dir) / name;
    if (plan.format == "csv")
      write_field_csv(path.string(), st.u);
    else
      write_field_savf(path.string(), st.u, st.t);
    snapshot_files.emplace_back(name);
  };

  std::string energy_csv = "step,time,q,modified_energy,original_energy,mass,u_min,u_max\n";
  auto append_row = [&](long step, const SAVState& st) {
    const EnergyPair e = energies(plan.model, st);
    const auto [mn, mx] = std::minmax_element(st.u.v.begin(), st.u.v.end());
    energy_csv += std::to_string(step) + "," + fmt17(st.t) + "," + fmt17(st.q) + "," +
                  fmt17(e.modified) + "," + fmt17(e.original) + "," +
                  fmt17(mass(plan.model, st.u)) + "," + fmt17(*mn) + "," + fmt17(*mx) + "\n";
  };

  write_snapshot(0, state);
  long last_step = 0;
  if (n_steps > 0) {
    append_row(0, state);
    try {
      integrate(state, plan.t_final, plan.dt, plan.stepper,
                [&](int step, const SAVState& st, const StepReport&) {
                  last_step = step;
                  append_row(step, st);
                  if (snaps.count(step) != 0) write_snapshot(step, st);
                });
    } catch (const SolverError& e) {
      res.status = "solver_error";
      res.error = e.what();
    }
    atomic_write(fs::path(plan.out_dir) / "energy.csv", energy_csv);
    res.outputs.push_back("energy.csv");
  }
  res.steps = static_cast<int>(last_step);
  for (const auto& name : snapshot_files) res.outputs.push_back(name);

  nlohmann::json manifest;
  manifest["config"] = plan.resolved;
  manifest["status"] = res.status;
  manifest["steps"] = res.steps;
  manifest["outputs"] = res.outputs;
  if (res.status != "ok") {
    manifest["error"] = res.error;
    manifest["failed_step"] = res.steps + 1;
  }
  atomic_write(fs::path(plan.out_dir) / "manifest.json", manifest.dump(2) + "\n");
  return res;
}

RealField reference_solution(const RunPlan& plan, const std::string& reference) {
  if (reference == "manufactured") {
    if (!plan.exact)
      throw ConfigError("reference 'manufactured' needs an initial condition with an exact solution");
    const double t_final = plan.t_final;
    const auto& exact = plan.exact;
    return sample(plan.sp->grid(),
                  [&exact, t_final](double x, double y) { return exact(x, y, t_final); });
  }
  if (reference.rfind("fine:", 0) == 0) {
    const double tau = to_double("reference", reference.substr(5));
    if (tau <= 0.0) throw ConfigError("reference step must be positive");
    const std::string ref_name = plan.resolved.at("scheme.reference");
    StepFn ref_step;
    if (ref_name == plan.resolved.at("scheme.name"))
      ref_step = plan.stepper;
    else
      ref_step = make_pair_stepper(plan.model, builtin_ark(scheme_display_name(ref_name)), "mark",
                                   plan.source);
    SAVState st = make_state(plan.model, plan.u0);
    integrate(st, plan.t_final, tau, ref_step);
    return st.u;
  }
  throw ConfigError("reference must be 'manufactured' or 'fine:TAU', got '" + reference + "'");
}

std::vector<ConvergenceRow> converge_against(const RunPlan& plan, const std::vector<double>& dts,
                                             const RealField& target) {
  if (target.nx != plan.u0.nx || target.ny != plan.u0.ny)
    throw ConfigError("reference grid does not match the run grid");
  std::vector<ConvergenceRow> rows;
  for (double dt : dts) {
    if (dt <= 0.0) throw ConfigError("refinement steps must be positive");
    SAVState st = make_state(plan.model, plan.u0);
    integrate(st, plan.t_final, dt, plan.stepper);
    RealField diff = st.u;
    for (size_t i = 0; i < diff.v.size(); ++i) diff.v[i] -= target.v[i];
    ConvergenceRow row;
    row.scheme = plan.scheme_label;
    row.dt = dt;
    row.l2_error = norm_l2(plan.sp->grid(), diff);
    row.linf_error = norm_linf(diff);
    if (!rows.empty()) {
      const ConvergenceRow& prev = rows.back();
      const double span = std::log(prev.dt / dt);
      auto rate = [span](double e_prev, double e_cur) -> std::optional<double> {
        if (!(e_prev > 0.0) || !(e_cur > 0.0) || span == 0.0) return std::nullopt;
        const double r = std::log(e_prev / e_cur) / span;
        if (!std::isfinite(r)) return std::nullopt;
        return r;
      };
      row.rate_l2 = rate(prev.l2_error, row.l2_error);
      row.rate_linf = rate(prev.linf_error, row.linf_error);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<ConvergenceRow> converge(const ConfigMap& cfg, const std::vector<double>& dts,
                                     const std::string& reference) {
  if (dts.empty()) throw ConfigError("at least one refinement step is required");
  ConfigMap with_dt = cfg;
  if (with_dt.count("time.dt") == 0) with_dt["time.dt"] = fmt17(dts.front());
  const RunPlan plan = plan_run(with_dt);
  const RealField target = reference_solution(plan, reference);
  return converge_against(plan, dts, target);
}

void write_convergence_csv(std::ostream& out, const std::vector<ConvergenceRow>& rows) {
  out << "scheme,dt,l2_error,linf_error,rate_l2,rate_linf\n";
  for (const auto& r : rows) {
    out << csv_quote(r.scheme) << ',' << fmt17(r.dt) << ',' << fmt17(r.l2_error) << ','
        << fmt17(r.linf_error) << ',' << (r.rate_l2 ? fmt17(*r.rate_l2) : "") << ','
        << (r.rate_linf ? fmt17(*r.rate_linf) : "") << '\n';
  }
}

std::vector<AuditRow> audit_tableaux() {
  std::vector<AuditRow> rows;
  for (const auto& name : builtin_ark_names()) {
    const ARKPair pair = builtin_ark(name);
    AuditRow row;
    row.name = name;
    row.claimed_order = pair.claimed_order;
    for (const auto& v : validate(pair.implicit_part)) row.violations.push_back("implicit: " + v);
    for (const auto& v : validate(pair.explicit_part)) row.violations.push_back("explicit: " + v);
    row.implicit_kind = classify(pair.implicit_part);
    row.explicit_kind = classify(pair.explicit_part);
    row.stability = algebraic_stability(pair.implicit_part);
    row.order = check_ark_order(pair, 3);
    if (pair.claimed_order > 3)
      row.note = "order-4 conditions not checked symbolically; see convergence suite";
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_audit_text(std::ostream& out, const std::vector<AuditRow>& rows) {
  out << std::left << std::setw(14) << "method" << std::setw(9) << "claimed" << std::setw(10)
      << "achieved" << std::setw(21) << "implicit" << std::setw(13) << "explicit" << std::setw(8)
      << "stable"
      << "M eigenvalues\n";
  for (const auto& r : rows) {
    std::string eigs;
    for (double ev : r.stability.m_eigenvalues) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.10g", ev);
      eigs += (eigs.empty() ? "" : "; ") + std::string(buf);
    }
    out << std::left << std::setw(14) << r.name << std::setw(9) << r.claimed_order << std::setw(10)
        << r.order.achieved_order << std::setw(21) << to_string(r.implicit_kind) << std::setw(13)
        << to_string(r.explicit_kind) << std::setw(8)
        << (r.stability.algebraically_stable ? "yes" : "no") << eigs << '\n';
    for (const auto& v : r.violations) out << "  violation: " << v << '\n';
    for (const auto& c : r.order.conditions)
      if (!c.satisfied && c.order <= r.claimed_order)
        out << "  unsatisfied order-" << c.order << " condition " << c.id << " (residual "
            << c.residual << ")\n";
    if (!r.note.empty()) out << "  note: " << r.note << '\n';
  }
}

void write_audit_csv(std::ostream& out, const std::vector<AuditRow>& rows) {
  out << "name,claimed_order,achieved_order,implicit_kind,explicit_kind,valid,b_min,"
         "algebraically_stable,m_eigenvalues,unsatisfied_conditions,note\n";
  for (const auto& r : rows) {
    std::string eigs;
    for (double ev : r.stability.m_eigenvalues) eigs += (eigs.empty() ? "" : ";") + fmt17(ev);
    std::string unsatisfied;
    for (const auto& c : r.order.conditions)
      if (!c.satisfied) unsatisfied += (unsatisfied.empty() ? "" : ";") + c.id;
    out << scheme_snake_name(r.name) << ',' << r.claimed_order << ',' << r.order.achieved_order
        << ',' << to_string(r.implicit_kind) << ',' << to_string(r.explicit_kind) << ','
        << (r.violations.empty() ? "true" : "false") << ',' << fmt17(r.stability.b_min) << ','
        << (r.stability.algebraically_stable ? "true" : "false") << ',' << csv_quote(eigs) << ','
        << csv_quote(unsatisfied) << ',' << csv_quote(r.note) << '\n';
  }
}

double equivalence_check(const std::string& base, int sweeps, const std::string& model_kind,
                         int steps) {
  if (sweeps < 1) throw ConfigError("sweeps must be at least 1");
  if (steps < 1) throw ConfigError("steps must be at least 1");
  const ButcherTableau bt = base_tableau(base);

  const int n = 32;
  GradientFlowModel model;
  RealField u0;
  if (model_kind == "ac") {
    const InitialCondition& ic = initial_condition("ac_sine");
    auto sp = std::make_shared<Spectral>(make_grid(n, n, ic.x_left, ic.x_right, ic.y_left, ic.y_right));
    model = make_ac(sp, 0.01);
    u0 = sample(sp->grid(), ic.value);
  } else if (model_kind == "ch") {
    const InitialCondition& ic = initial_condition("ch_cos");
    auto sp = std::make_shared<Spectral>(make_grid(n, n, ic.x_left, ic.x_right, ic.y_left, ic.y_right));
    model = make_ch(sp, 1.0, 0.01);
    u0 = sample(sp->grid(), ic.value);
  } else if (model_kind == "mbe") {
    const InitialCondition& ic = initial_condition("mbe_two_mode");
    auto sp = std::make_shared<Spectral>(make_grid(n, n, ic.x_left, ic.x_right, ic.y_left, ic.y_right));
    model = make_mbe(sp, 1.0, 0.1);
    u0 = sample(sp->grid(), ic.value);
  } else {
    throw ConfigError("model must be ac, ch, or mbe, got '" + model_kind + "'");
  }

  SAVState pc = make_state(model, u0);
  SAVState expanded = pc;
  const MarkIITableaux tabs = build_rkpc_markii(bt, sweeps);
  RKPCOptions rkpc;
  rkpc.sweeps = sweeps;
  rkpc.tol = 0.0;  // exactly `sweeps` sweeps, matching the expanded tableaux
  const double tau = 1e-3;

  double dev = 0.0;
  for (int i = 0; i < steps; ++i) {
    step_sav_rkpc(model, bt, rkpc, pc, tau);
    step_sav_markII(model, tabs, expanded, tau);
    double du = 0.0, scale = 1.0;
    for (size_t k = 0; k < pc.u.v.size(); ++k) {
      du = std::max(du, std::abs(pc.u.v[k] - expanded.u.v[k]));
      scale = std::max(scale, std::abs(expanded.u.v[k]));
    }
    dev = std::max(dev, du / scale);
    dev = std::max(dev, std::abs(pc.q - expanded.q) / std::max(1.0, std::abs(expanded.q)));
  }
  return dev;
}

}  // namespace sav
