#include "sav/tableau.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

#include <Eigen/Dense>

#include "sav/errors.hpp"

namespace sav {

ButcherTableau zero_tableau(int s) {
  ButcherTableau t;
  t.s = s;
  t.A.assign(static_cast<size_t>(s) * s, 0.0);
  t.b.assign(s, 0.0);
  t.c.assign(s, 0.0);
  return t;
}

std::string to_string(TableauKind kind) {
  switch (kind) {
    case TableauKind::explicit_rk: return "explicit";
    case TableauKind::diagonally_implicit: return "diagonally implicit";
    case TableauKind::general: return "general";
  }
  return "unknown";
}

std::vector<std::string> validate(const ButcherTableau& t, double tol) {
  std::vector<std::string> violations;
  if (t.s < 1) {
    violations.push_back("stage count must be positive");
    return violations;
  }
  const auto s = static_cast<size_t>(t.s);
  if (t.A.size() != s * s)
    violations.push_back("A is not " + std::to_string(t.s) + "x" + std::to_string(t.s));
  if (t.b.size() != s) violations.push_back("b does not have " + std::to_string(t.s) + " entries");
  if (t.c.size() != s) violations.push_back("c does not have " + std::to_string(t.s) + " entries");
  if (!violations.empty()) return violations;

  for (double v : t.A)
    if (!std::isfinite(v)) {
      violations.push_back("A contains a non-finite entry");
      break;
    }
  for (double v : t.b)
    if (!std::isfinite(v)) {
      violations.push_back("b contains a non-finite entry");
      break;
    }
  for (double v : t.c)
    if (!std::isfinite(v)) {
      violations.push_back("c contains a non-finite entry");
      break;
    }
  if (!violations.empty()) return violations;

  for (int i = 0; i < t.s; ++i) {
    double row = 0.0;
    for (int j = 0; j < t.s; ++j) row += t.a(i, j);
    if (std::abs(t.c[i] - row) > tol) {
      std::ostringstream msg;
      msg << "c != A*1 at stage " << i << " (c_i = " << t.c[i] << ", row sum = " << row << ")";
      violations.push_back(msg.str());
    }
  }
  return violations;
}

TableauKind classify(const ButcherTableau& t) {
  bool strictly_lower = true;
  bool lower = true;
  bool nonzero_diagonal = false;
  for (int i = 0; i < t.s; ++i) {
    for (int j = i; j < t.s; ++j) {
      if (t.a(i, j) != 0.0) {
        strictly_lower = false;
        if (j > i) lower = false;
      }
    }
    if (t.a(i, i) != 0.0) nonzero_diagonal = true;
  }
  if (strictly_lower) return TableauKind::explicit_rk;
  if (lower && nonzero_diagonal) return TableauKind::diagonally_implicit;
  return TableauKind::general;
}

StabilityReport algebraic_stability(const ButcherTableau& t) {
  const int s = t.s;
  Eigen::MatrixXd M(s, s);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j)
      M(i, j) = t.b[i] * t.a(i, j) + t.b[j] * t.a(j, i) - t.b[i] * t.b[j];

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(M);
  StabilityReport report;
  report.m_eigenvalues.assign(solver.eigenvalues().data(), solver.eigenvalues().data() + s);
  std::sort(report.m_eigenvalues.begin(), report.m_eigenvalues.end(), std::greater<double>());
  report.b_min = *std::min_element(t.b.begin(), t.b.end());
  report.algebraically_stable =
      report.b_min >= -1e-12 && report.m_eigenvalues.back() >= -1e-10;
  return report;
}

double stability_function(const ButcherTableau& t, double z) {
  const int s = t.s;
  Eigen::MatrixXd shifted = Eigen::MatrixXd::Identity(s, s);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) shifted(i, j) -= z * t.a(i, j);
  Eigen::VectorXd x = shifted.partialPivLu().solve(Eigen::VectorXd::Ones(s));
  double bx = 0.0;
  for (int i = 0; i < s; ++i) bx += t.b[i] * x(i);
  return 1.0 + z * bx;
}

namespace {

std::vector<double> mat_vec(const ButcherTableau& t, const std::vector<double>& v) {
  std::vector<double> out(t.s, 0.0);
  for (int i = 0; i < t.s; ++i)
    for (int j = 0; j < t.s; ++j) out[i] += t.a(i, j) * v[j];
  return out;
}

double dot(const std::vector<double>& x, const std::vector<double>& y) {
  double sum = 0.0;
  for (size_t i = 0; i < x.size(); ++i) sum += x[i] * y[i];
  return sum;
}

std::vector<double> had(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return out;
}

}  // namespace

OrderReport check_ark_order(const ARKPair& pair, int target_order) {
  if (target_order < 1 || target_order > 3)
    throw ConfigError("order conditions are tabulated for orders 1 to 3; got target " +
                      std::to_string(target_order));
  if (pair.implicit_part.s != pair.explicit_part.s)
    throw ConfigError("implicit and explicit tableaux have different stage counts");

  const ButcherTableau& T = pair.implicit_part;
  const ButcherTableau& H = pair.explicit_part;
  const std::vector<double>& b = T.b;
  const std::vector<double>& bh = H.b;
  const std::vector<double>& c = T.c;
  const std::vector<double>& ch = H.c;
  const std::vector<double> one(T.b.size(), 1.0);

  OrderReport report;
  auto add = [&report](const std::string& id, int order, double value, double rhs) {
    OrderCondition cond;
    cond.id = id;
    cond.order = order;
    cond.residual = value - rhs;
    cond.satisfied = std::abs(cond.residual) <= 1e-10;
    report.conditions.push_back(cond);
  };

  add("b*1", 1, dot(b, one), 1.0);
  add("bh*1", 1, dot(bh, one), 1.0);
  if (target_order >= 2) {
    add("b*c", 2, dot(b, c), 0.5);
    add("bh*ch", 2, dot(bh, ch), 0.5);
    add("b*ch", 2, dot(b, ch), 0.5);
    add("bh*c", 2, dot(bh, c), 0.5);
  }
  if (target_order >= 3) {
    add("b*c^2", 3, dot(b, had(c, c)), 1.0 / 3.0);
    add("b*Ac", 3, dot(b, mat_vec(T, c)), 1.0 / 6.0);
    add("bh*ch^2", 3, dot(bh, had(ch, ch)), 1.0 / 3.0);
    add("bh*Ahch", 3, dot(bh, mat_vec(H, ch)), 1.0 / 6.0);
    add("b*(c.ch)", 3, dot(b, had(c, ch)), 1.0 / 3.0);
    add("bh*(c.ch)", 3, dot(bh, had(c, ch)), 1.0 / 3.0);
    add("b*ch^2", 3, dot(b, had(ch, ch)), 1.0 / 3.0);
    add("bh*c^2", 3, dot(bh, had(c, c)), 1.0 / 3.0);
    add("b*Ach", 3, dot(b, mat_vec(T, ch)), 1.0 / 6.0);
    add("b*Ahc", 3, dot(b, mat_vec(H, c)), 1.0 / 6.0);
    add("b*Ahch", 3, dot(b, mat_vec(H, ch)), 1.0 / 6.0);
    add("bh*Ac", 3, dot(bh, mat_vec(T, c)), 1.0 / 6.0);
    add("bh*Ach", 3, dot(bh, mat_vec(T, ch)), 1.0 / 6.0);
    add("bh*Ahc", 3, dot(bh, mat_vec(H, c)), 1.0 / 6.0);
  }

  report.achieved_order = 0;
  for (int p = 1; p <= target_order; ++p) {
    bool all_pass = true;
    for (const OrderCondition& cond : report.conditions)
      if (cond.order <= p && !cond.satisfied) all_pass = false;
    if (!all_pass) break;
    report.achieved_order = p;
  }
  return report;
}

namespace {

void derive_c(ButcherTableau& t) {
  for (int i = 0; i < t.s; ++i) {
    double row = 0.0;
    for (int j = 0; j < t.s; ++j) row += t.a(i, j);
    t.c[i] = row;
  }
}

ButcherTableau from_rows(const std::vector<std::vector<double>>& rows,
                         const std::vector<double>& b) {
  ButcherTableau t = zero_tableau(static_cast<int>(rows.size()));
  for (int i = 0; i < t.s; ++i)
    for (int j = 0; j < t.s; ++j) t.a(i, j) = rows[i][j];
  t.b = b;
  derive_c(t);
  return t;
}

constexpr double kPi = 3.14159265358979323846;

ARKPair make_diark_2_3_3() {
  const double g = (3.0 + std::sqrt(3.0)) / 6.0;
  const double r3 = std::sqrt(3.0);
  ARKPair pair;
  pair.name = "DIARK(2,3,3)";
  pair.claimed_order = 3;
  pair.implicit_part = from_rows({{0, 0, 0}, {0, g, 0}, {0, -r3 / 3.0, g}}, {0, 0.5, 0.5});
  pair.explicit_part = from_rows(
      {{0, 0, 0}, {g, 0, 0}, {(-3.0 + r3) / 6.0, (3.0 - r3) / 3.0, 0}}, {0, 0.5, 0.5});
  return pair;
}

ARKPair make_diark_3_4_3() {
  const double sig = std::sqrt(3.0) / 3.0 * std::cos(kPi / 18.0) + 0.5;
  const double mu = 1.0 / (6.0 * (2.0 * sig - 1.0) * (2.0 * sig - 1.0));
  const double x = (9.0 * mu * sig - 3.0 * mu - 3.0 * sig + 1.0) / (3.0 * mu * (2.0 * sig - 1.0));
  ARKPair pair;
  pair.name = "DIARK(3,4,3)";
  pair.claimed_order = 3;
  pair.implicit_part = from_rows({{0, 0, 0, 0},
                                  {0, sig, 0, 0},
                                  {0, 0.5 - sig, sig, 0},
                                  {0, 2.0 * sig, 1.0 - 4.0 * sig, sig}},
                                 {0, mu, 1.0 - 2.0 * mu, mu});
  pair.explicit_part = from_rows(
      {{0, 0, 0, 0}, {sig, 0, 0, 0}, {0, 0.5, 0, 0}, {0, x, 1.0 - sig - x, 0}},
      {0, mu, 1.0 - 2.0 * mu, mu});
  return pair;
}

ARKPair make_diark_5_6_4() {
  const double sig = std::sqrt(3.0) / 3.0 * std::cos(kPi / 18.0) + 0.5;
  const double mu = 1.0 / (6.0 * (2.0 * sig - 1.0) * (2.0 * sig - 1.0));
  const double mu2 = mu * mu;
  const double ah31 = (-104.0 * sig * mu2 + 6.0 * mu2 + 20.0 * mu) / (108.0 * mu2 - 90.0 * mu + 9.0);
  const double ah32 =
      (112.0 * sig * mu2 + 36.0 * mu2 - 37.0 * mu) / (324.0 * mu2 - 270.0 * mu + 27.0);
  const double ah51 = (56.0 * sig * mu2 - 2.0 * mu2 - 12.0 * mu) / (36.0 * mu2 - 30.0 * mu + 3.0);
  const double ah52 = (16.0 * sig * mu2 - 4.0 * mu2 + 3.0 * mu) / (36.0 * mu2 - 30.0 * mu + 3.0);
  ARKPair pair;
  pair.name = "DIARK(5,6,4)";
  pair.claimed_order = 4;
  pair.implicit_part = from_rows({{0, 0, 0, 0, 0, 0},
                                  {0, 3.0 / 8.0, 0, 0, 0, 0},
                                  {3.0 / 8.0, 0, 3.0 / 16.0, 0, 0, 0},
                                  {0, 0, 0, sig, 0, 0},
                                  {0, 0, 0, 0.5 - sig, sig, 0},
                                  {0, 0, 0, 2.0 * sig, 1.0 - 4.0 * sig, sig}},
                                 {0, 0, 0, mu, 1.0 - 2.0 * mu, mu});
  pair.explicit_part = from_rows({{0, 0, 0, 0, 0, 0},
                                  {3.0 / 8.0, 0, 0, 0, 0, 0},
                                  {0, 9.0 / 16.0, 0, 0, 0, 0},
                                  {25.0 / (162.0 * mu), ah31, ah32, 0, 0, 0},
                                  {0, 0, 0.5, 0, 0, 0},
                                  {0, ah51, ah52, 0, 0, 0}},
                                 {0, 0, 0, mu, 1.0 - 2.0 * mu, mu});
  return pair;
}

ARKPair make_gark_4_5_4() {
  const double r3 = std::sqrt(3.0);
  ARKPair pair;
  pair.name = "GARK(4,5,4)";
  pair.claimed_order = 4;
  pair.implicit_part = from_rows({{0, 0, 0, 0, 0},
                                  {0, 0.25, 0, 0, 0},
                                  {0.25, 0, 0.25, 0, 0},
                                  {0, 0, 0, 0.25, 0.25 - r3 / 6.0},
                                  {0, 0, 0, 0.25 + r3 / 6.0, 0.25}},
                                 {0, 0, 0, 0.5, 0.5});
  pair.explicit_part = from_rows({{0, 0, 0, 0, 0},
                                  {0.25, 0, 0, 0, 0},
                                  {0, 0.5, 0, 0, 0},
                                  {1.0 / 6.0, 0, 1.0 / 3.0 - r3 / 6.0, 0, 0},
                                  {1.0 / 6.0, 0, 1.0 / 3.0 + r3 / 6.0, 0, 0}},
                                 {0, 0, 0, 0.5, 0.5});
  return pair;
}

}  // namespace

ARKPair make_diark_2_2_2(double gamma) {
  ARKPair pair;
  pair.name = "DIARK(2,2,2)";
  pair.claimed_order = 2;
  pair.implicit_part = from_rows({{gamma, 0}, {1.0 - 2.0 * gamma, gamma}}, {0.5, 0.5});
  pair.explicit_part = from_rows({{0, 0}, {1, 0}}, {0.5, 0.5});
  return pair;
}

const std::vector<std::string>& builtin_ark_names() {
  static const std::vector<std::string> names = {
      "DIARK(2,2,2)", "DIARK(2,3,3)", "DIARK(3,4,3)", "DIARK(5,6,4)", "GARK(4,5,4)"};
  return names;
}

ARKPair builtin_ark(const std::string& name) {
  if (name == "DIARK(2,2,2)") return make_diark_2_2_2((3.0 + std::sqrt(3.0)) / 6.0);
  if (name == "DIARK(2,3,3)") return make_diark_2_3_3();
  if (name == "DIARK(3,4,3)") return make_diark_3_4_3();
  if (name == "DIARK(5,6,4)") return make_diark_5_6_4();
  if (name == "GARK(4,5,4)") return make_gark_4_5_4();
  std::string available;
  for (const std::string& n : builtin_ark_names()) {
    if (!available.empty()) available += ", ";
    available += n;
  }
  throw ConfigError("unknown method '" + name + "'; available methods: " + available);
}

ButcherTableau base_tableau(const std::string& name) {
  if (name == "implicit_euler") {
    ButcherTableau t = zero_tableau(1);
    t.a(0, 0) = 1.0;
    t.b = {1.0};
    t.c = {1.0};
    return t;
  }
  if (name == "gauss2") {
    const double r3 = std::sqrt(3.0);
    ButcherTableau t = zero_tableau(2);
    t.a(0, 0) = 0.25;
    t.a(0, 1) = 0.25 - r3 / 6.0;
    t.a(1, 0) = 0.25 + r3 / 6.0;
    t.a(1, 1) = 0.25;
    t.b = {0.5, 0.5};
    derive_c(t);
    return t;
  }
  throw ConfigError("unknown base tableau '" + name +
                    "'; available bases: implicit_euler, gauss2");
}

MarkIITableaux build_rkpc_markii(const ButcherTableau& base, int sweeps) {
  if (sweeps < 1) throw ConfigError("sweep count must be at least 1");
  if (!validate(base).empty()) throw ConfigError("base tableau is not well formed");

  const int s = base.s;
  const int total = (sweeps + 1) * s;
  MarkIITableaux out;
  out.name = "rkpc(" + std::to_string(sweeps) + ")";
  out.a_main = zero_tableau(total);
  out.a_hat = zero_tableau(total);
  out.a_tilde = zero_tableau(total);
  out.a_bar = zero_tableau(total);

  for (int m = 0; m <= sweeps; ++m) {
    for (int i = 0; i < s; ++i) {
      const int row = m * s + i;
      for (int j = 0; j < s; ++j) {
        const double a = base.a(i, j);
        if (m >= 1) {
          out.a_main.a(row, m * s + j) = a;       // own sweep, linear channel
          out.a_hat.a(row, (m - 1) * s + j) = a;  // previous sweep, nonlinear channel
        }
        if (m < sweeps) {
          out.a_tilde.a(row, (m + 1) * s + j) = a;  // next sweep, linear channel
          out.a_bar.a(row, m * s + j) = a;          // own sweep, nonlinear channel
        } else {
          out.a_tilde.a(row, m * s + j) = a;  // saturated: no sweep follows
          out.a_bar.a(row, j) = a;
        }
      }
    }
  }

  std::vector<double> b(total, 0.0);
  for (int i = 0; i < s; ++i) b[sweeps * s + i] = base.b[i];
  for (ButcherTableau* t : {&out.a_main, &out.a_hat, &out.a_tilde, &out.a_bar}) {
    t->b = b;
    derive_c(*t);
  }
  return out;
}

namespace {

std::string strip(const std::string& line) {
  std::string out = line;
  if (auto pos = out.find('#'); pos != std::string::npos) out.erase(pos);
  const char* ws = " \t\r\n";
  auto begin = out.find_first_not_of(ws);
  if (begin == std::string::npos) return "";
  auto end = out.find_last_not_of(ws);
  return out.substr(begin, end - begin + 1);
}

std::vector<double> parse_numbers(const std::string& text, const std::string& context) {
  std::vector<double> values;
  std::istringstream stream(text);
  std::string token;
  while (stream >> token) {
    size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(token, &used);
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + token + "' in " + context);
    }
    if (used != token.size()) throw ConfigError("bad number '" + token + "' in " + context);
    values.push_back(value);
  }
  return values;
}

}  // namespace

ARKPair parse_ark_pair(std::istream& in, const std::string& name) {
  struct Section {
    std::vector<std::vector<double>> rows;
    std::vector<double> b;
    bool seen = false;
  };
  Section implicit_sec, explicit_sec;
  Section* current = nullptr;
  bool reading_matrix = false;

  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = strip(raw);
    if (line.empty()) continue;
    const std::string context = "line " + std::to_string(lineno);

    if (line == "[implicit]" || line == "[explicit]") {
      current = (line == "[implicit]") ? &implicit_sec : &explicit_sec;
      if (current->seen) throw ConfigError("duplicate section " + line);
      current->seen = true;
      reading_matrix = false;
      continue;
    }
    if (current == nullptr)
      throw ConfigError("content before any [implicit]/[explicit] section at " + context);

    if (line == "A" || line == "A =" || line == "A=") {
      reading_matrix = true;
      continue;
    }
    if (line.rfind("b", 0) == 0 &&
        (line.size() == 1 || line[1] == ' ' || line[1] == '=' || line[1] == '\t')) {
      auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("malformed b line at " + context);
      current->b = parse_numbers(line.substr(eq + 1), context);
      reading_matrix = false;
      continue;
    }
    if (!reading_matrix)
      throw ConfigError("unexpected content '" + line + "' at " + context);
    current->rows.push_back(parse_numbers(line, context));
  }

  if (!implicit_sec.seen) throw ConfigError("missing [implicit] section");
  if (!explicit_sec.seen) throw ConfigError("missing [explicit] section");

  auto build = [](const Section& sec, const std::string& which) {
    const int s = static_cast<int>(sec.rows.size());
    if (s == 0) throw ConfigError(which + " section has no A rows");
    for (const auto& row : sec.rows)
      if (static_cast<int>(row.size()) != s)
        throw ConfigError(which + " section: A must be square (" + std::to_string(s) + " rows of " +
                          std::to_string(s) + " entries)");
    if (static_cast<int>(sec.b.size()) != s)
      throw ConfigError(which + " section: b must have " + std::to_string(s) + " entries");
    return from_rows(sec.rows, sec.b);
  };

  ARKPair pair;
  pair.name = name;
  pair.implicit_part = build(implicit_sec, "[implicit]");
  pair.explicit_part = build(explicit_sec, "[explicit]");
  if (pair.implicit_part.s != pair.explicit_part.s)
    throw ConfigError("implicit and explicit sections have different stage counts");
  pair.claimed_order = check_ark_order(pair, 3).achieved_order;
  return pair;
}

ARKPair load_ark_pair(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open tableau file '" + path + "'");
  return parse_ark_pair(in, path);
}

namespace {

void write_section(std::ostream& out, const ButcherTableau& t) {
  char buf[32];
  out << "A =\n";
  for (int i = 0; i < t.s; ++i) {
    for (int j = 0; j < t.s; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", t.a(i, j));
      out << (j ? " " : "") << buf;
    }
    out << "\n";
  }
  out << "b =";
  for (int i = 0; i < t.s; ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", t.b[i]);
    out << " " << buf;
  }
  out << "\n";
}

}  // namespace

void write_ark_pair(std::ostream& out, const ARKPair& pair) {
  out << "[implicit]\n";
  write_section(out, pair.implicit_part);
  out << "[explicit]\n";
  write_section(out, pair.explicit_part);
}

}  // namespace sav
