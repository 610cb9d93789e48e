#include "opflab/casefile.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

namespace opflab {

namespace {

enum class Tok { ident, number, punct, newline, skip, end };

struct Token {
  Tok kind = Tok::end;
  std::string text;
  double value = 0.0;
  int line = 0;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  Token next() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '%') {
        while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
        continue;
      }
      if (c == '\n') {
        ++pos_;
        return {Tok::newline, "\n", 0.0, line_++};
      }
      if (c == ' ' || c == '\t' || c == '\r') {
        ++pos_;
        continue;
      }
      if (c == '.' && pos_ + 2 < src_.size() && src_.substr(pos_, 3) == "...") {
        // line continuation
        pos_ += 3;
        while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
        if (pos_ < src_.size()) {
          ++pos_;
          ++line_;
        }
        continue;
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        size_t start = pos_;
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
          ++pos_;
        std::string word(src_.substr(start, pos_ - start));
        if (word == "Inf" || word == "inf") return {Tok::number, word, kInf, line_};
        if (word == "NaN" || word == "nan")
          return {Tok::number, word, std::numeric_limits<double>::quiet_NaN(), line_};
        return {Tok::ident, word, 0.0, line_};
      }
      auto digit_at = [&](size_t p) {
        return p < src_.size() && std::isdigit(static_cast<unsigned char>(src_[p]));
      };
      if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && digit_at(pos_ + 1)) ||
          ((c == '-' || c == '+') && pos_ + 1 < src_.size() &&
           (std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])) || src_[pos_ + 1] == '.' ||
            src_[pos_ + 1] == 'I'))) {
        return number();
      }
      if (c == '\'' || c == '"') {
        size_t start = pos_++;
        while (pos_ < src_.size() && src_[pos_] != c && src_[pos_] != '\n') ++pos_;
        if (pos_ >= src_.size() || src_[pos_] != c)
          throw CaseParseError("unterminated string literal", line_);
        ++pos_;
        return {Tok::skip, std::string(src_.substr(start, pos_ - start)), 0.0, line_};
      }
      ++pos_;
      return {Tok::punct, std::string(1, c), 0.0, line_};
    }
    return {Tok::end, "", 0.0, line_};
  }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  Token number() {
    size_t start = pos_;
    bool negative = false;
    if (src_[pos_] == '+' || src_[pos_] == '-') {
      negative = src_[pos_] == '-';
      ++pos_;
    }
    if (src_.substr(pos_, 3) == "Inf") {
      pos_ += 3;
      return {Tok::number, std::string(src_.substr(start, pos_ - start)), negative ? -kInf : kInf,
              line_};
    }
    size_t digits = pos_;
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        ++pos_;
      } else if ((c == 'e' || c == 'E') && pos_ + 1 < src_.size()) {
        ++pos_;
        if (src_[pos_] == '+' || src_[pos_] == '-') ++pos_;
      } else {
        break;
      }
    }
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(src_.data() + digits, src_.data() + pos_, v);
    if (ec != std::errc() || ptr != src_.data() + pos_)
      throw CaseParseError("malformed number '" + std::string(src_.substr(start, pos_ - start)) + "'",
                           line_);
    return {Tok::number, std::string(src_.substr(start, pos_ - start)), negative ? -v : v, line_};
  }

  std::string_view src_;
  size_t pos_ = 0;
  int line_ = 1;
};

struct Matrix {
  std::vector<std::vector<double>> rows;
  std::vector<int> lines;
  int line = 0;
};

struct Sections {
  std::map<std::string, double> scalars;
  std::map<std::string, Matrix> matrices;
};

class Parser {
 public:
  explicit Parser(std::string_view text) : lex_(text) { advance(); }

  Sections run() {
    Sections out;
    while (cur_.kind != Tok::end) {
      if (cur_.kind == Tok::newline || is_punct(";") || is_punct(",")) {
        advance();
        continue;
      }
      if (cur_.kind == Tok::ident && cur_.text == "function") {
        while (cur_.kind != Tok::newline && cur_.kind != Tok::end) advance();
        continue;
      }
      if (cur_.kind == Tok::ident && cur_.text == "mpc") {
        statement(out);
        continue;
      }
      throw CaseParseError("unexpected token '" + cur_.text + "'", cur_.line);
    }
    return out;
  }

 private:
  void advance() { cur_ = lex_.next(); }
  bool is_punct(const char* p) const { return cur_.kind == Tok::punct && cur_.text == p; }

  void expect_punct(const char* p) {
    if (!is_punct(p))
      throw CaseParseError(std::string("expected '") + p + "' but found '" +
                               (cur_.kind == Tok::newline ? "end of line" : cur_.text) + "'",
                           cur_.line);
    advance();
  }

  void statement(Sections& out) {
    advance();
    expect_punct(".");
    if (cur_.kind != Tok::ident) throw CaseParseError("expected field name after 'mpc.'", cur_.line);
    std::string name = cur_.text;
    int line = cur_.line;
    advance();
    expect_punct("=");
    if (cur_.kind == Tok::number) {
      out.scalars[name] = cur_.value;
      advance();
    } else if (is_punct("[")) {
      out.matrices[name] = matrix(line);
    } else if (is_punct("{")) {
      skip_cell();
    } else if (cur_.kind == Tok::skip) {
      advance();
    } else {
      throw CaseParseError("unsupported value for 'mpc." + name + "'", cur_.line);
    }
    if (is_punct(";")) advance();
  }

  Matrix matrix(int line) {
    Matrix m;
    m.line = line;
    advance();
    std::vector<double> row;
    int row_line = cur_.line;
    auto flush = [&] {
      if (!row.empty()) {
        m.rows.push_back(std::move(row));
        m.lines.push_back(row_line);
        row.clear();
      }
    };
    while (true) {
      if (cur_.kind == Tok::end)
        throw CaseParseError("unterminated matrix (missing ']')", m.line);
      if (is_punct("]")) {
        flush();
        advance();
        break;
      }
      if (cur_.kind == Tok::number) {
        if (row.empty()) row_line = cur_.line;
        row.push_back(cur_.value);
      } else if (is_punct(";") || cur_.kind == Tok::newline) {
        flush();
      } else if (!is_punct(",")) {
        throw CaseParseError("unexpected token '" + cur_.text + "' in matrix", cur_.line);
      }
      advance();
    }
    return m;
  }

  void skip_cell() {
    int depth = 0;
    int start = cur_.line;
    do {
      if (cur_.kind == Tok::end) throw CaseParseError("unterminated cell array", start);
      if (is_punct("{")) ++depth;
      if (is_punct("}")) --depth;
      advance();
    } while (depth > 0);
  }

  Lexer lex_;
  Token cur_;
};

const Matrix& require(const Sections& s, const std::string& name, size_t min_cols) {
  auto it = s.matrices.find(name);
  if (it == s.matrices.end())
    throw CaseParseError("missing required section 'mpc." + name + "'", 0);
  const Matrix& m = it->second;
  for (size_t r = 0; r < m.rows.size(); ++r) {
    if (m.rows[r].size() < min_cols)
      throw CaseParseError("'mpc." + name + "' row has " + std::to_string(m.rows[r].size()) +
                               " columns, expected at least " + std::to_string(min_cols),
                           m.lines[r]);
    if (m.rows[r].size() != m.rows.front().size())
      throw CaseParseError("'mpc." + name + "' rows have inconsistent column counts", m.lines[r]);
  }
  return m;
}

int as_int(double v, int line, const char* what) {
  if (!std::isfinite(v) || v != std::floor(v))
    throw CaseParseError(std::string(what) + " must be an integer", line);
  return static_cast<int>(v);
}

void append_number(std::string& out, double v) {
  if (std::isinf(v)) {
    out += v > 0 ? "Inf" : "-Inf";
    return;
  }
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace

RawCase parse_case(std::string_view text) {
  Sections s = Parser(text).run();

  RawCase raw;
  auto base = s.scalars.find("baseMVA");
  if (base == s.scalars.end()) throw CaseParseError("missing required section 'mpc.baseMVA'", 0);
  raw.base_mva = base->second;

  // Function name, if present.
  if (auto pos = text.find("function"); pos != std::string_view::npos) {
    auto eq = text.find('=', pos);
    auto eol = text.find('\n', pos);
    if (eq != std::string_view::npos && eq < eol) {
      std::string_view rest = text.substr(eq + 1, eol == std::string_view::npos ? eol : eol - eq - 1);
      size_t b = rest.find_first_not_of(" \t");
      size_t e = rest.find_last_not_of(" \t\r");
      if (b != std::string_view::npos) raw.name = std::string(rest.substr(b, e - b + 1));
    }
  }

  const Matrix& bus = require(s, "bus", 13);
  const Matrix& gen = require(s, "gen", 10);
  const Matrix& branch = require(s, "branch", 11);
  const Matrix& gencost = require(s, "gencost", 4);

  for (size_t r = 0; r < bus.rows.size(); ++r) {
    const auto& row = bus.rows[r];
    BusRecord b;
    b.id = as_int(row[0], bus.lines[r], "bus id");
    int type = as_int(row[1], bus.lines[r], "bus type");
    if (type < 1 || type > 3)
      throw CaseParseError("unsupported bus type " + std::to_string(type), bus.lines[r]);
    b.type = static_cast<BusType>(type);
    b.pd = row[2];
    b.qd = row[3];
    b.gs = row[4];
    b.bs = row[5];
    b.vm = row[7];
    b.va_deg = row[8];
    b.base_kv = row[9];
    b.vm_max = row[11];
    b.vm_min = row[12];
    raw.buses.push_back(b);
  }

  for (size_t r = 0; r < gen.rows.size(); ++r) {
    const auto& row = gen.rows[r];
    GenRecord g;
    g.bus = as_int(row[0], gen.lines[r], "generator bus");
    g.pg = row[1];
    g.qg = row[2];
    g.qg_max = row[3];
    g.qg_min = row[4];
    g.vg = row[5];
    g.in_service = row[7] > 0;
    g.pg_max = row[8];
    g.pg_min = row[9];
    raw.gens.push_back(g);
  }

  size_t ng = raw.gens.size();
  if (gencost.rows.size() != ng && gencost.rows.size() != 2 * ng)
    throw CaseParseError("'mpc.gencost' has " + std::to_string(gencost.rows.size()) +
                             " rows, expected one per generator (" + std::to_string(ng) + ")",
                         gencost.line);
  for (size_t r = 0; r < ng; ++r) {
    const auto& row = gencost.rows[r];
    int model = as_int(row[0], gencost.lines[r], "cost model");
    if (model == 1)
      throw CaseParseError("piecewise-linear generator costs are not supported", gencost.lines[r]);
    if (model != 2)
      throw CaseParseError("unknown cost model " + std::to_string(model), gencost.lines[r]);
    int n = as_int(row[3], gencost.lines[r], "cost coefficient count");
    if (n < 0 || n > 3)
      throw CaseParseError("polynomial cost of degree > 2 is not supported", gencost.lines[r]);
    if (row.size() < static_cast<size_t>(4 + n))
      throw CaseParseError("cost row is missing coefficients", gencost.lines[r]);
    double c[3] = {0.0, 0.0, 0.0};  // c0, c1, c2
    for (int k = 0; k < n; ++k) c[n - 1 - k] = row[4 + k];
    raw.gens[r].c0 = c[0];
    raw.gens[r].c1 = c[1];
    raw.gens[r].c2 = c[2];
  }

  for (size_t r = 0; r < branch.rows.size(); ++r) {
    const auto& row = branch.rows[r];
    BranchRecord br;
    br.from = as_int(row[0], branch.lines[r], "branch from-bus");
    br.to = as_int(row[1], branch.lines[r], "branch to-bus");
    br.r = row[2];
    br.x = row[3];
    br.b = row[4];
    br.rate_a = row[5];
    br.tap = row[8] == 0.0 ? 1.0 : row[8];
    br.shift_deg = row[9];
    br.in_service = row[10] > 0;
    raw.branches.push_back(br);
  }

  validate_case(raw);
  return raw;
}

RawCase load_case_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open case file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  RawCase raw = parse_case(ss.str());
  if (raw.name.empty()) {
    auto slash = path.find_last_of('/');
    std::string base = path.substr(slash == std::string::npos ? 0 : slash + 1);
    raw.name = base.substr(0, base.find('.'));
  }
  return raw;
}

void validate_case(const RawCase& raw) {
  if (!(raw.base_mva > 0)) throw CaseValidationError("baseMVA must be positive");
  if (raw.buses.empty()) throw CaseValidationError("case has no buses");
  std::map<int, int> ids;
  int slack = 0;
  for (const auto& b : raw.buses) {
    if (!ids.emplace(b.id, 0).second)
      throw CaseValidationError("duplicate bus id " + std::to_string(b.id));
    if (b.type == BusType::slack) ++slack;
    if (!(b.vm_min < b.vm_max))
      throw CaseValidationError("bus " + std::to_string(b.id) + " has Vm_min >= Vm_max");
  }
  if (slack != 1)
    throw CaseValidationError(slack == 0 ? "no slack bus" :
                                           "expected exactly one slack bus, found " +
                                               std::to_string(slack));
  for (size_t g = 0; g < raw.gens.size(); ++g) {
    const auto& gen = raw.gens[g];
    if (!ids.count(gen.bus))
      throw CaseValidationError("generator " + std::to_string(g + 1) +
                                " references unknown bus " + std::to_string(gen.bus));
    if (gen.pg_min > gen.pg_max)
      throw CaseValidationError("generator " + std::to_string(g + 1) + " has Pg_min > Pg_max");
    if (gen.qg_min > gen.qg_max)
      throw CaseValidationError("generator " + std::to_string(g + 1) + " has Qg_min > Qg_max");
  }
  for (size_t k = 0; k < raw.branches.size(); ++k) {
    const auto& br = raw.branches[k];
    if (!ids.count(br.from) || !ids.count(br.to))
      throw CaseValidationError("branch " + std::to_string(k + 1) + " has a dangling endpoint (" +
                                std::to_string(br.from) + " -> " + std::to_string(br.to) + ")");
    if (br.in_service && br.r * br.r + br.x * br.x <= 0.0)
      throw CaseValidationError("branch " + std::to_string(k + 1) + " has zero impedance");
  }
}

std::string serialize_case(const RawCase& raw) {
  std::string out;
  auto line = [&](std::initializer_list<double> vals) {
    out += '\t';
    bool first = true;
    for (double v : vals) {
      if (!first) out += '\t';
      first = false;
      append_number(out, v);
    }
    out += ";\n";
  };
  out += "function mpc = " + (raw.name.empty() ? std::string("case") : raw.name) + "\n";
  out += "mpc.version = '2';\n";
  out += "mpc.baseMVA = ";
  append_number(out, raw.base_mva);
  out += ";\n\n";

  out += "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\nmpc.bus = [\n";
  for (const auto& b : raw.buses)
    line({double(b.id), double(static_cast<int>(b.type)), b.pd, b.qd, b.gs, b.bs, 1.0, b.vm,
          b.va_deg, b.base_kv, 1.0, b.vm_max, b.vm_min});
  out += "];\n\n";

  out += "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\nmpc.gen = [\n";
  for (const auto& g : raw.gens)
    line({double(g.bus), g.pg, g.qg, g.qg_max, g.qg_min, g.vg, raw.base_mva,
          g.in_service ? 1.0 : 0.0, g.pg_max, g.pg_min});
  out += "];\n\n";

  out += "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax\n"
         "mpc.branch = [\n";
  for (const auto& br : raw.branches)
    line({double(br.from), double(br.to), br.r, br.x, br.b, br.rate_a, br.rate_a, br.rate_a,
          br.tap, br.shift_deg, br.in_service ? 1.0 : 0.0, -360.0, 360.0});
  out += "];\n\n";

  out += "%\t2\tstartup\tshutdown\tn\tc2\tc1\tc0\nmpc.gencost = [\n";
  for (const auto& g : raw.gens) line({2.0, 0.0, 0.0, 3.0, g.c2, g.c1, g.c0});
  out += "];\n";
  return out;
}

BranchAdmittance branch_admittance(const Branch& br) {
  using C = std::complex<double>;
  const C ys = 1.0 / C(br.r, br.x);
  const C tap = std::polar(br.tap, br.shift);
  const C ytt = ys + C(0.0, br.b / 2.0);
  BranchAdmittance y;
  y.ytt = ytt;
  y.yff = ytt / (br.tap * br.tap);
  y.yft = -ys / std::conj(tap);
  y.ytf = -ys / tap;
  return y;
}

int NetworkModel::n_branch_in_service() const {
  return static_cast<int>(
      std::count_if(branches.begin(), branches.end(), [](const Branch& b) { return b.in_service; }));
}

std::vector<int> NetworkModel::gen_bus_map() const {
  std::vector<int> map;
  map.reserve(gens.size());
  for (const auto& g : gens) map.push_back(g.bus);
  return map;
}

NetworkModel build_network(const RawCase& raw) {
  validate_case(raw);
  NetworkModel net;
  net.name = raw.name;
  net.base_mva = raw.base_mva;
  net.raw = raw;
  const double base = raw.base_mva;
  constexpr double deg = std::numbers::pi / 180.0;

  std::map<int, int> index;
  for (size_t i = 0; i < raw.buses.size(); ++i) {
    const auto& b = raw.buses[i];
    index[b.id] = static_cast<int>(i);
    Bus bus;
    bus.id = b.id;
    bus.type = b.type;
    bus.pd = b.pd / base;
    bus.qd = b.qd / base;
    bus.gs = b.gs / base;
    bus.bs = b.bs / base;
    bus.vm0 = b.vm;
    bus.va0 = b.va_deg * deg;
    bus.vm_min = b.vm_min;
    bus.vm_max = b.vm_max;
    if (b.type == BusType::slack) net.slack_index = static_cast<int>(i);
    net.buses.push_back(bus);
  }

  for (const auto& g : raw.gens) {
    if (!g.in_service) continue;
    Generator gen;
    gen.bus = index.at(g.bus);
    gen.pg0 = g.pg / base;
    gen.qg0 = g.qg / base;
    gen.vg = g.vg;
    gen.pg_min = g.pg_min / base;
    gen.pg_max = g.pg_max / base;
    gen.qg_min = g.qg_min / base;
    gen.qg_max = g.qg_max / base;
    gen.c2 = g.c2 * base * base;
    gen.c1 = g.c1 * base;
    gen.c0 = g.c0;
    net.gens.push_back(gen);
  }

  using Triplet = Eigen::Triplet<std::complex<double>>;
  std::vector<Triplet> trips;
  const int nb = net.n_bus();
  for (int i = 0; i < nb; ++i)
    trips.emplace_back(i, i, std::complex<double>(net.buses[i].gs, net.buses[i].bs));

  for (const auto& b : raw.branches) {
    Branch br;
    br.from = index.at(b.from);
    br.to = index.at(b.to);
    br.r = b.r;
    br.x = b.x;
    br.b = b.b;
    br.s_max = b.rate_a / base;
    br.tap = b.tap;
    br.shift = b.shift_deg * deg;
    br.in_service = b.in_service;
    if (br.in_service) {
      br.y = branch_admittance(br);
      trips.emplace_back(br.from, br.from, br.y.yff);
      trips.emplace_back(br.from, br.to, br.y.yft);
      trips.emplace_back(br.to, br.from, br.y.ytf);
      trips.emplace_back(br.to, br.to, br.y.ytt);
    }
    net.branches.push_back(br);
  }

  net.ybus.resize(nb, nb);
  net.ybus.setFromTriplets(trips.begin(), trips.end());
  net.ybus.makeCompressed();
  return net;
}

bool is_connected(const NetworkModel& net, std::optional<int> skip_branch) {
  const int nb = net.n_bus();
  std::vector<std::vector<int>> adj(nb);
  for (int k = 0; k < net.n_branch(); ++k) {
    const auto& br = net.branches[k];
    if (!br.in_service || (skip_branch && *skip_branch == k)) continue;
    adj[br.from].push_back(br.to);
    adj[br.to].push_back(br.from);
  }
  std::vector<char> seen(nb, 0);
  std::deque<int> queue{net.slack_index};
  seen[net.slack_index] = 1;
  int visited = 1;
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop_front();
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = 1;
        ++visited;
        queue.push_back(v);
      }
    }
  }
  return visited == nb;
}

ContingencyResult apply_contingency(const NetworkModel& net, const Contingency& c) {
  if (c.removed_branch < 0 || c.removed_branch >= net.n_branch())
    throw std::out_of_range("contingency branch index " + std::to_string(c.removed_branch) +
                            " out of range");
  if (!net.branches[c.removed_branch].in_service)
    return {net, "branch " + std::to_string(c.removed_branch) + " is already out of service"};
  if (!is_connected(net, c.removed_branch))
    throw IslandingError("removing branch " + std::to_string(c.removed_branch) +
                         " islands the network");
  RawCase raw = net.raw;
  raw.branches[c.removed_branch].in_service = false;
  return {build_network(raw), std::nullopt};
}

LoadProfile nominal_loads(const NetworkModel& net) {
  LoadProfile loads;
  for (const auto& b : net.buses) {
    loads.pd.push_back(b.pd);
    loads.qd.push_back(b.qd);
  }
  return loads;
}

}  // namespace opflab
