#pragma once

#include <algorithm>
#include <stdexcept>

namespace coopsim {

// Control command. Throttle and brake in [0,1], steer in [-1,1] (fraction of
// the maximum steering angle, positive = left).
struct Action {
  double throttle = 0.0;
  double brake = 0.0;
  double steer = 0.0;

  Action clipped() const {
    return {std::clamp(throttle, 0.0, 1.0), std::clamp(brake, 0.0, 1.0), std::clamp(steer, -1.0, 1.0)};
  }

  void validate() const {
    if (throttle < 0.0 || throttle > 1.0 || brake < 0.0 || brake > 1.0 || steer < -1.0 || steer > 1.0)
      throw std::invalid_argument("Action: outside valid ranges");
  }
};

}  // namespace coopsim
