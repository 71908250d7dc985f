#include "pasd/controllers.hpp"

#include <algorithm>
#include <deque>
#include <map>

namespace pasd {

std::string to_string(Archetype a) {
  switch (a) {
    case Archetype::kClockwise: return "clockwise";
    case Archetype::kCounterclockwise: return "counterclockwise";
    case Archetype::kOnionSpecialist: return "onion_specialist";
    case Archetype::kDishSpecialist: return "dish_specialist";
    case Archetype::kUniformRandom: return "uniform_random";
    case Archetype::kStationary: return "stationary";
  }
  return "?";
}

Archetype archetype_from_string(const std::string& s) {
  for (auto a : {Archetype::kClockwise, Archetype::kCounterclockwise, Archetype::kOnionSpecialist,
                 Archetype::kDishSpecialist, Archetype::kUniformRandom, Archetype::kStationary})
    if (to_string(a) == s) return a;
  throw ConfigError("unknown partner archetype '" + s + "'");
}

namespace {

constexpr std::array<Pos, 4> kSteps = {Pos{0, -1}, Pos{0, 1}, Pos{1, 0}, Pos{-1, 0}};

std::vector<Pos> floor_neighbours(const Layout& layout, Pos p) {
  std::vector<Pos> out;
  for (Pos d : kSteps)
    if (layout.walkable(p + d)) out.push_back(p + d);
  return out;
}

// Floor cells from which `target` can be faced.
std::vector<Pos> stands_of(const Layout& layout, Pos target) { return floor_neighbours(layout, target); }

// First move along a shortest floor path from `from` to any cell in `goals`,
// treating `avoid` as blocked. nullopt when unreachable; kStay when already there.
std::optional<Action> path_step(const Layout& layout, Pos from, const std::vector<Pos>& goals,
                                std::optional<Pos> avoid) {
  if (std::find(goals.begin(), goals.end(), from) != goals.end()) return Action::kStay;
  std::map<Pos, Pos> parent;
  std::deque<Pos> frontier{from};
  parent[from] = from;
  while (!frontier.empty()) {
    const Pos cur = frontier.front();
    frontier.pop_front();
    for (Pos d : kSteps) {
      const Pos nxt = cur + d;
      if (!layout.walkable(nxt) || parent.count(nxt) || (avoid && nxt == *avoid)) continue;
      parent[nxt] = cur;
      if (std::find(goals.begin(), goals.end(), nxt) != goals.end()) {
        Pos back = nxt;
        while (parent[back] != from) back = parent[back];
        return move_toward(from, back);
      }
      frontier.push_back(nxt);
    }
  }
  return std::nullopt;
}

// Walks to a stand of one of `targets` and interacts with it.
Action go_interact(const Layout& layout, const WorldState& s, int self,
                   const std::vector<Pos>& targets) {
  const ChefState& me = s.chefs[self];
  const Pos faced = me.pos + direction_of(me.facing);
  for (Pos t : targets) {
    if (faced == t) return Action::kInteract;
  }
  for (Pos t : targets) {
    const auto st = stands_of(layout, t);
    if (std::find(st.begin(), st.end(), me.pos) != st.end()) return move_toward(me.pos, t);
  }
  std::vector<Pos> goals;
  for (Pos t : targets)
    for (Pos st : stands_of(layout, t)) goals.push_back(st);
  const Pos other = s.chefs[1 - self].pos;
  if (auto a = path_step(layout, me.pos, goals, other)) return *a;
  if (auto a = path_step(layout, me.pos, goals, std::nullopt)) return *a;
  return Action::kStay;
}

// Moves off cells that other chefs need to reach work stations, yielding
// when the next cell borders the other chef.
Action get_out_of_the_way(const Layout& layout, const WorldState& s, int self) {
  std::vector<Pos> busy;
  for (Cell kind : {Cell::kPot, Cell::kOnionDispenser, Cell::kServing, Cell::kDishDispenser})
    for (Pos t : layout.cells_of(kind))
      for (Pos st : stands_of(layout, t)) busy.push_back(st);
  std::vector<Pos> free_cells;
  for (Pos p : layout.floor_cells())
    if (std::find(busy.begin(), busy.end(), p) == busy.end()) free_cells.push_back(p);
  const Pos me = s.chefs[self].pos;
  const Pos other = s.chefs[1 - self].pos;
  if (free_cells.empty()) return Action::kStay;
  const auto a = path_step(layout, me, free_cells, other);
  if (!a || *a == Action::kStay) return Action::kStay;
  const Pos next = me + direction_of(*orientation_of(*a));
  for (Pos d : kSteps)
    if (next + d == other) return Action::kStay;
  return *a;
}

bool changes_cell(const Layout& layout, Pos from, Action a) {
  const auto o = orientation_of(a);
  return o && layout.walkable(from + direction_of(*o));
}

// Shared stuck detection: a chef whose moves have failed for a few ticks
// takes one random step.
class Scripted : public Controller {
 public:
  void reset() override {
    stuck_ = 0;
    moved_ = false;
  }

  Action act(const Layout& layout, const WorldState& s, int self, Rng& rng) final {
    const Pos me = s.chefs[self].pos;
    stuck_ = (moved_ && me == last_pos_) ? stuck_ + 1 : 0;
    Action a = decide(layout, s, self);
    if (stuck_ >= 3 && changes_cell(layout, me, a)) {
      a = static_cast<Action>(rng.index(4));
      stuck_ = 0;
    }
    last_pos_ = me;
    moved_ = changes_cell(layout, me, a);
    return a;
  }

 protected:
  virtual Action decide(const Layout& layout, const WorldState& s, int self) = 0;

 private:
  int stuck_ = 0;
  bool moved_ = false;
  Pos last_pos_;
};

std::vector<Pos> pots_where(const Layout& layout, const WorldState& s,
                            bool (*pred)(const PotState&)) {
  std::vector<Pos> out;
  for (std::size_t i = 0; i < s.pots.size(); ++i)
    if (pred(s.pots[i])) out.push_back(layout.pots[i]);
  return out;
}

bool pot_accepting(const PotState& p) { return p.onions < kPotCapacity && !p.done; }
bool pot_done(const PotState& p) { return p.done; }
bool pot_busy(const PotState& p) { return p.cooking() || p.done; }

class OnionSpecialist : public Scripted {
 public:
  Action decide(const Layout& layout, const WorldState& s, int self) override {
    const auto accepting = pots_where(layout, s, pot_accepting);
    switch (s.chefs[self].held) {
      case Item::kNothing:
        if (!accepting.empty())
          return go_interact(layout, s, self, layout.cells_of(Cell::kOnionDispenser));
        return get_out_of_the_way(layout, s, self);
      case Item::kOnion:
        if (!accepting.empty()) return go_interact(layout, s, self, accepting);
        return get_out_of_the_way(layout, s, self);
      default:
        return get_out_of_the_way(layout, s, self);
    }
  }
};

class DishSpecialist : public Scripted {
 public:
  Action decide(const Layout& layout, const WorldState& s, int self) override {
    switch (s.chefs[self].held) {
      case Item::kNothing:
        if (!pots_where(layout, s, pot_busy).empty())
          return go_interact(layout, s, self, layout.cells_of(Cell::kDishDispenser));
        return get_out_of_the_way(layout, s, self);
      case Item::kDish: {
        const auto ready = pots_where(layout, s, pot_done);
        if (!ready.empty()) return go_interact(layout, s, self, ready);
        const auto busy = pots_where(layout, s, pot_busy);
        if (!busy.empty()) return go_interact_wait(layout, s, self, busy);
        return get_out_of_the_way(layout, s, self);
      }
      case Item::kSoup:
        return go_interact(layout, s, self, layout.cells_of(Cell::kServing));
      default:
        return get_out_of_the_way(layout, s, self);
    }
  }

 private:
  // Approach a cooking pot but do not interact until it is done.
  static Action go_interact_wait(const Layout& layout, const WorldState& s, int self,
                                 const std::vector<Pos>& pots) {
    const Action a = go_interact(layout, s, self, pots);
    return a == Action::kInteract ? Action::kStay : a;
  }
};

class RingWalker : public Scripted {
 public:
  RingWalker(std::vector<Pos> cycle, bool clockwise) : cycle_(std::move(cycle)) {
    if (!clockwise) std::reverse(cycle_.begin(), cycle_.end());
  }

  Action decide(const Layout& layout, const WorldState& s, int self) override {
    const ChefState& me = s.chefs[self];
    if (auto t = useful_target(layout, s, self)) {
      if (me.pos + direction_of(me.facing) == *t) return Action::kInteract;
      return move_toward(me.pos, *t);
    }
    auto it = std::find(cycle_.begin(), cycle_.end(), me.pos);
    if (it == cycle_.end()) return Action::kStay;
    const Pos next = (std::next(it) == cycle_.end()) ? cycle_.front() : *std::next(it);
    if (next == s.chefs[1 - self].pos) return Action::kStay;
    return move_toward(me.pos, next);
  }

 private:
  // Adjacent station worth using right now, in priority order.
  static std::optional<Pos> useful_target(const Layout& layout, const WorldState& s, int self) {
    const ChefState& me = s.chefs[self];
    const bool any_busy = std::any_of(s.pots.begin(), s.pots.end(), pot_busy);
    const bool any_accepting = std::any_of(s.pots.begin(), s.pots.end(), pot_accepting);
    const bool other_has_dish = s.chefs[1 - self].held == Item::kDish;
    for (Pos d : kSteps) {
      const Pos t = me.pos + d;
      const Cell c = layout.at(t);
      switch (me.held) {
        case Item::kSoup:
          if (c == Cell::kServing) return t;
          break;
        case Item::kDish:
          if (c == Cell::kPot && s.pots[layout.pot_index(t)].done) return t;
          break;
        case Item::kOnion:
          if (c == Cell::kPot && pot_accepting(s.pots[layout.pot_index(t)])) return t;
          break;
        case Item::kNothing:
          if (c == Cell::kOnionDispenser && any_accepting && !any_busy) return t;
          if (c == Cell::kDishDispenser && any_busy && !other_has_dish) return t;
          break;
      }
    }
    return std::nullopt;
  }

  std::vector<Pos> cycle_;
};

}  // namespace

std::optional<std::vector<Pos>> ring_cycle(const Layout& layout) {
  const auto cells = layout.floor_cells();
  if (cells.size() < 4) return std::nullopt;
  for (Pos p : cells)
    if (floor_neighbours(layout, p).size() != 2) return std::nullopt;
  std::vector<Pos> cycle{cells.front()};
  Pos prev = cells.front();
  Pos cur = floor_neighbours(layout, prev).front();
  while (cur != cells.front()) {
    cycle.push_back(cur);
    const auto nb = floor_neighbours(layout, cur);
    const Pos nxt = nb[0] == prev ? nb[1] : nb[0];
    prev = cur;
    cur = nxt;
    if (cycle.size() > cells.size()) return std::nullopt;
  }
  if (cycle.size() != cells.size()) return std::nullopt;
  // Positive shoelace sum is clockwise on screen when y points down.
  long area = 0;
  for (std::size_t i = 0; i < cycle.size(); ++i) {
    const Pos a = cycle[i];
    const Pos b = cycle[(i + 1) % cycle.size()];
    area += static_cast<long>(a.x) * b.y - static_cast<long>(b.x) * a.y;
  }
  if (area < 0) std::reverse(cycle.begin() + 1, cycle.end());
  return cycle;
}

std::unique_ptr<Controller> scripted_partner(Archetype archetype, const Layout& layout) {
  switch (archetype) {
    case Archetype::kClockwise:
    case Archetype::kCounterclockwise: {
      auto cycle = ring_cycle(layout);
      if (!cycle)
        throw ConfigError("archetype " + to_string(archetype) + " needs a ring layout, '" +
                          layout.name + "' is not one");
      return std::make_unique<RingWalker>(*cycle, archetype == Archetype::kClockwise);
    }
    case Archetype::kOnionSpecialist: return std::make_unique<OnionSpecialist>();
    case Archetype::kDishSpecialist: return std::make_unique<DishSpecialist>();
    case Archetype::kUniformRandom: return std::make_unique<UniformRandomController>();
    case Archetype::kStationary: return std::make_unique<StationaryController>();
  }
  throw ConfigError("unknown archetype");
}

Action FlatController::act(const Layout& layout, const WorldState& state, int self, Rng& rng) {
  const auto obs = observe(layout, state, self);
  const Eigen::Map<const Eigen::VectorXd> v(obs.data(), static_cast<Eigen::Index>(obs.size()));
  return static_cast<Action>(policy_->sample(v, rng).action);
}

void HierController::reset() {
  skill_ = -1;
  segment_length_ = 0;
  terminated_ = false;
}

Action HierController::act(const Layout& layout, const WorldState& state, int self, Rng& rng) {
  const auto obs = observe(layout, state, self);
  const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(obs.data(), static_cast<Eigen::Index>(obs.size()));
  const Eigen::VectorXd feats = policy_->features(v);
  terminated_ = false;
  if (skill_ >= 0) {
    terminated_ = policy_->sample_termination_from(feats, skill_, rng).terminate;
    if (max_segment_length_ > 0 && segment_length_ >= max_segment_length_) terminated_ = true;
  }
  if (skill_ < 0 || terminated_) {
    skill_ = policy_->sample_skill_from(feats, rng).skill;
    segment_length_ = 0;
  }
  ++segment_length_;
  return static_cast<Action>(policy_->sample_action_from(feats, skill_, rng).action);
}

}  // namespace pasd
