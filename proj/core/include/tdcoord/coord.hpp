#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <set>
#include <string>

#include "tdcoord/types.hpp"

namespace tdcoord {

enum class Direction { TsoToDso, DsoToTso };

/// One exchange payload. `a`/`b` hold (x_B, lambda_MB) toward the DSO and
/// (f_BS, l_BS) toward the TSO, sliced to one DSO's boundary buses.
/// Control messages carry k = -1 (session end).
struct CoordMessage {
  std::uint64_t session = 0;
  int k = 0;
  Direction direction = Direction::TsoToDso;
  int dso = 0;
  Vector a;
  Vector b;

  bool is_control() const { return k < 0; }
  int payload_scalars() const { return static_cast<int>(a.size() + b.size()); }
  static CoordMessage done(std::uint64_t session, int dso);
};

/// Line format: fields space-separated, numbers at 17 significant digits,
/// FNV-1a checksum suffix. One message per line.
std::string serialize_message(const CoordMessage& m);
CoordMessage deserialize_message(const std::string& line);

/// Pairwise, ordered message channel. Implementations enforce at-most-once
/// delivery per (session, k, direction, dso) and monotone iteration numbers
/// per direction within a session.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(const CoordMessage& m) = 0;
  /// Blocks up to timeout_s; throws TimeoutError / ProtocolError.
  virtual CoordMessage receive(Direction expected, double timeout_s) = 0;

 protected:
  /// Shared replay/order guard for implementations.
  void check_incoming(const CoordMessage& m);

 private:
  std::set<std::tuple<std::uint64_t, int, int, int>> seen_;
  std::map<std::pair<std::uint64_t, int>, int> last_k_;
};

/// Two-ended in-process channel. Each end is a Transport; sends appear on
/// the peer's receive queue.
class InMemoryLink {
 public:
  InMemoryLink();
  std::shared_ptr<Transport> tso_end();
  std::shared_ptr<Transport> dso_end();

 private:
  struct Shared;
  std::shared_ptr<Shared> shared_;
};

}  // namespace tdcoord
