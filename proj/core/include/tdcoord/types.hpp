#pragma once

#include <complex>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tdcoord {

using Complex = std::complex<double>;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct SingularMatrixError : Error {
  using Error::Error;
};
struct DivergenceError : Error {
  using Error::Error;
};
struct InfeasibleError : Error {
  using Error::Error;
};
struct UnboundedError : Error {
  using Error::Error;
};
struct IslandingError : Error {
  using Error::Error;
};
struct ProtocolError : Error {
  using Error::Error;
};
struct TimeoutError : Error {
  using Error::Error;
};

enum class Subsystem { Master, Boundary, Slave };
enum class BusKind { Slack, PV, PQ };

/// Which operator owns a boundary-bus component (load, shunt, generator).
/// Irrelevant for plain master/slave buses.
enum class Owner { Tso, Dso };

std::string to_string(Subsystem s);
std::string to_string(BusKind k);

struct Bus {
  int id = 0;
  Subsystem subsystem = Subsystem::Master;
  BusKind kind = BusKind::PQ;
  double v_mag = 1.0;  // per unit
  double v_ang = 0.0;  // radians
  double p_load = 0.0;
  double q_load = 0.0;
  double shunt_g = 0.0;
  double shunt_b = 0.0;
  // Boundary buses only: which side's bookkeeping absorbs the local
  // load/shunt. Defaults to the TSO side.
  Owner load_owner = Owner::Tso;
  Owner shunt_owner = Owner::Tso;
};

struct Branch {
  int id = 0;
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b_charging = 0.0;
  double tap = 1.0;
  bool in_service = true;
  std::optional<double> flow_limit;  // per-unit MVA (AC) or MW (DC)

  Complex series_admittance() const { return 1.0 / Complex(r, x); }
};

struct Generator {
  int bus = 0;
  double p = 0.0;
  double q = 0.0;
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double cost_c2 = 0.0;
  double cost_c1 = 0.0;
  double cost_c0 = 0.0;
  Owner owner = Owner::Tso;  // required information on boundary buses
};

enum class MeasurementKind { Angle, Flow, Injection };

/// One linear (DC-model) measurement: an angle at a bus, an active flow on a
/// branch (measured at the from end), or a net active injection at a bus.
struct Measurement {
  MeasurementKind kind = MeasurementKind::Angle;
  int target = 0;  // bus id (Angle/Injection) or branch id (Flow)
  double value = 0.0;
  double sigma = 1.0;
};

/// Integrated transmission-distribution case. Immutable after load_case;
/// all per-unit quantities are expressed on the master MVA base.
struct ItdCase {
  std::string name;
  double base_mva_master = 100.0;
  std::vector<double> base_mva_slave;  // original DSO bases, per DSO index

  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  std::vector<int> boundary_ids;       // ascending bus id; fixes vector layouts
  std::map<int, int> dso_assignment;   // boundary bus id -> DSO index
  std::vector<int> contingencies;      // branch ids
  std::vector<Measurement> measurements;
  std::map<int, double> load_direction;  // bus id -> scaling factor for VSA
  double v_min = 0.95;
  double v_max = 1.05;

  int num_dsos() const;
  const Bus& bus(int id) const;
  Bus& bus(int id);
  const Branch& branch(int id) const;
  bool has_bus(int id) const;

  /// Bus ids of one subsystem, ascending. This order defines the layout of
  /// every exchanged vector (x_B, f_BS, ...).
  std::vector<int> ids_of(Subsystem s) const;

  int dso_of_boundary(int bus_id) const;

  /// Slave bus ids handled by one DSO (ascending), i.e. the union of the
  /// slave components hanging off that DSO's boundary buses.
  std::vector<int> slave_ids_of_dso(int dso) const;
  std::vector<int> boundary_ids_of_dso(int dso) const;

  /// Connected components of the slave subsystem (slave-slave branches
  /// only), each with the boundary buses it attaches to through in-service
  /// branches. Bus ids ascending inside each component.
  struct SlaveComponent {
    std::vector<int> slave_ids;
    std::vector<int> attached_boundary_ids;
  };
  std::vector<SlaveComponent> slave_components() const;

  double load_direction_of(int bus_id) const;
};

/// Position of each bus id inside the per-subsystem orderings.
class BusOrder {
 public:
  explicit BusOrder(const ItdCase& c);
  int index(int bus_id) const;                 // global position
  int local_index(int bus_id) const;           // position within its subsystem
  Subsystem subsystem(int bus_id) const;
  const std::vector<int>& master() const { return master_; }
  const std::vector<int>& boundary() const { return boundary_; }
  const std::vector<int>& slave() const { return slave_; }

 private:
  std::vector<int> master_, boundary_, slave_;
  std::map<int, std::pair<Subsystem, int>> local_;
  std::map<int, int> global_;
};

}  // namespace tdcoord
