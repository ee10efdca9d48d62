#pragma once

namespace nfid {

/// Operating point a grid-forming device regulates toward.
struct Setpoints {
  double P = 0.0;  // pu active power
  double Q = 0.0;  // pu reactive power
  double v = 1.0;  // pu voltage magnitude; nu^s = v * v

  [[nodiscard]] double nu() const { return v * v; }
};

}  // namespace nfid
