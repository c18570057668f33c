#pragma once

#include <vector>

#include "etgrl/common.hpp"

namespace etgrl {

// One environment step as seen by the learner. `action` is the composed
// joint-target command that was actually sent to the simulator.
struct Transition {
  Vec state;
  Vec action;
  double reward = 0.0;
  Vec next_state;
  bool done = false;
};

using TransitionList = std::vector<Transition>;

}  // namespace etgrl
