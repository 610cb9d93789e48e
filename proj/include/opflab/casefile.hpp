#pragma once

#include <complex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Sparse>

namespace opflab {

enum class BusType { pq = 1, pv = 2, slack = 3 };

// Raw rows in MATPOWER units (MW, MVAr, degrees, p.u. voltages).
struct BusRecord {
  int id = 0;
  BusType type = BusType::pq;
  double pd = 0.0;
  double qd = 0.0;
  double gs = 0.0;
  double bs = 0.0;
  double vm = 1.0;
  double va_deg = 0.0;
  double base_kv = 0.0;
  double vm_max = 1.1;
  double vm_min = 0.9;

  bool operator==(const BusRecord&) const = default;
};

struct GenRecord {
  int bus = 0;
  double pg = 0.0;
  double qg = 0.0;
  double qg_max = 0.0;
  double qg_min = 0.0;
  double vg = 1.0;
  bool in_service = true;
  double pg_max = 0.0;
  double pg_min = 0.0;
  // Polynomial cost c2*P^2 + c1*P + c0 with P in MW.
  double c2 = 0.0;
  double c1 = 0.0;
  double c0 = 0.0;

  bool operator==(const GenRecord&) const = default;
};

struct BranchRecord {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b = 0.0;
  double rate_a = 0.0;  // MVA, 0 means unlimited
  double tap = 1.0;     // 0 in the file is normalized to 1
  double shift_deg = 0.0;
  bool in_service = true;

  bool operator==(const BranchRecord&) const = default;
};

struct RawCase {
  std::string name;
  double base_mva = 100.0;
  std::vector<BusRecord> buses;
  std::vector<GenRecord> gens;
  std::vector<BranchRecord> branches;

  bool operator==(const RawCase&) const = default;
};

class CaseParseError : public std::runtime_error {
 public:
  CaseParseError(const std::string& what, int line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class CaseValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IslandingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RawCase parse_case(std::string_view text);
RawCase load_case_file(const std::string& path);
std::string serialize_case(const RawCase& raw);

// Throws CaseValidationError on a broken invariant.
void validate_case(const RawCase& raw);

struct Bus {
  int id = 0;
  BusType type = BusType::pq;
  double pd = 0.0;
  double qd = 0.0;
  double gs = 0.0;
  double bs = 0.0;
  double vm0 = 1.0;
  double va0 = 0.0;
  double vm_min = 0.9;
  double vm_max = 1.1;
};

struct Generator {
  int bus = 0;  // bus index, not id
  double pg0 = 0.0;
  double qg0 = 0.0;
  double vg = 1.0;
  double pg_min = 0.0;
  double pg_max = 0.0;
  double qg_min = 0.0;
  double qg_max = 0.0;
  // Per-unit cost: c2*Pg^2 + c1*Pg + c0 with Pg in p.u.
  double c2 = 0.0;
  double c1 = 0.0;
  double c0 = 0.0;
};

// Pi-model two-port admittances: I_f = yff V_f + yft V_t, I_t = ytf V_f + ytt V_t.
struct BranchAdmittance {
  std::complex<double> yff, yft, ytf, ytt;
};

struct Branch {
  int from = 0;  // bus index
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b = 0.0;
  double s_max = 0.0;  // p.u., 0 means unlimited
  double tap = 1.0;
  double shift = 0.0;  // rad
  bool in_service = true;
  BranchAdmittance y;
};

using ComplexSparse = Eigen::SparseMatrix<std::complex<double>>;

// Per-unit network. Immutable after construction.
struct NetworkModel {
  std::string name;
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Generator> gens;  // in-service generators only
  std::vector<Branch> branches;  // all branches, including out-of-service ones
  ComplexSparse ybus;
  int slack_index = 0;
  RawCase raw;

  int n_bus() const { return static_cast<int>(buses.size()); }
  int n_gen() const { return static_cast<int>(gens.size()); }
  int n_branch() const { return static_cast<int>(branches.size()); }
  int n_branch_in_service() const;
  std::vector<int> gen_bus_map() const;
};

NetworkModel build_network(const RawCase& raw);

BranchAdmittance branch_admittance(const Branch& br);

// Connectivity over in-service branches, optionally ignoring one branch.
bool is_connected(const NetworkModel& net, std::optional<int> skip_branch = std::nullopt);

struct Contingency {
  int removed_branch = 0;
};

struct ContingencyResult {
  NetworkModel net;
  std::optional<std::string> warning;
};

ContingencyResult apply_contingency(const NetworkModel& net, const Contingency& c);

// Nominal per-bus loads in p.u.
struct LoadProfile {
  std::vector<double> pd;
  std::vector<double> qd;
};

LoadProfile nominal_loads(const NetworkModel& net);

}  // namespace opflab
