#ifndef PASD_CONTROLLERS_HPP_
#define PASD_CONTROLLERS_HPP_

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pasd/common.hpp"
#include "pasd/flat_policy.hpp"
#include "pasd/hier_policy.hpp"
#include "pasd/kitchen.hpp"

namespace pasd {

// Anything that can drive one chef. Controllers may keep internal state
// between ticks; reset() clears it at episode start.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset() {}
  virtual Action act(const Layout& layout, const WorldState& state, int self, Rng& rng) = 0;
  // Active skill for hierarchical controllers, -1 otherwise.
  virtual int current_skill() const { return -1; }
  // Whether the skill active in the previous tick terminated before this one.
  virtual bool terminated_before_last_act() const { return false; }
};

enum class Archetype {
  kClockwise,
  kCounterclockwise,
  kOnionSpecialist,
  kDishSpecialist,
  kUniformRandom,
  kStationary,
};

std::string to_string(Archetype a);
Archetype archetype_from_string(const std::string& s);

// Floor cells of a ring layout in clockwise screen order (y grows downward),
// or nullopt when the floor is not a single cycle.
std::optional<std::vector<Pos>> ring_cycle(const Layout& layout);

// Throws ConfigError for ring archetypes on non-ring layouts.
std::unique_ptr<Controller> scripted_partner(Archetype archetype, const Layout& layout);

class FlatController : public Controller {
 public:
  explicit FlatController(std::shared_ptr<const FlatPolicy> policy) : policy_(std::move(policy)) {}
  Action act(const Layout& layout, const WorldState& state, int self, Rng& rng) override;

 private:
  std::shared_ptr<const FlatPolicy> policy_;
};

// Runs the skill/termination loop: a skill is drawn at episode start and
// again whenever the termination head fires on the current state.
class HierController : public Controller {
 public:
  explicit HierController(std::shared_ptr<const HierPolicy> policy, int max_segment_length = 0)
      : policy_(std::move(policy)), max_segment_length_(max_segment_length) {}
  void reset() override;
  Action act(const Layout& layout, const WorldState& state, int self, Rng& rng) override;
  int current_skill() const override { return skill_; }
  bool terminated_before_last_act() const override { return terminated_; }

 private:
  std::shared_ptr<const HierPolicy> policy_;
  int max_segment_length_;
  int skill_ = -1;
  int segment_length_ = 0;
  bool terminated_ = false;
};

class UniformRandomController : public Controller {
 public:
  Action act(const Layout&, const WorldState&, int, Rng& rng) override {
    return static_cast<Action>(rng.index(kNumActions));
  }
};

class StationaryController : public Controller {
 public:
  Action act(const Layout&, const WorldState&, int, Rng&) override { return Action::kStay; }
};

}  // namespace pasd

#endif  // PASD_CONTROLLERS_HPP_
