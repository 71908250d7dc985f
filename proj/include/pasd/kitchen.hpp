#ifndef PASD_KITCHEN_HPP_
#define PASD_KITCHEN_HPP_

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pasd {

enum class Cell : std::uint8_t {
  kFloor,
  kWall,
  kOnionDispenser,
  kDishDispenser,
  kPot,
  kServing,
  kCounter,
};

enum class Item : std::uint8_t { kNothing, kOnion, kDish, kSoup };
inline constexpr int kNumItems = 4;

enum class Orientation : std::uint8_t { kNorth, kSouth, kEast, kWest };

enum class Action : std::uint8_t { kUp, kDown, kLeft, kRight, kStay, kInteract };
inline constexpr int kNumActions = 6;

inline constexpr int kPotCapacity = 3;

struct Pos {
  int x = 0;
  int y = 0;
  auto operator<=>(const Pos&) const = default;
  Pos operator+(const Pos& o) const { return {x + o.x, y + o.y}; }
};

Pos direction_of(Orientation o);
std::optional<Orientation> orientation_of(Action a);
// Movement action that points from `from` to the 4-neighbour `to`.
Action move_toward(Pos from, Pos to);

std::string_view to_string(Action a);
std::string_view to_string(Item i);
std::string_view to_string(Orientation o);
Action action_from_string(std::string_view s);
Item item_from_string(std::string_view s);
Orientation orientation_from_string(std::string_view s);

struct Layout {
  std::string name;
  int width = 0;
  int height = 0;
  std::vector<Cell> grid;  // row-major, y * width + x
  std::array<Pos, 2> spawn_points{};
  int cook_time = 20;
  int horizon = 400;

  // Derived during validation, row-major order.
  std::vector<Pos> pots;
  std::vector<Pos> counters;

  bool in_bounds(Pos p) const {
    return p.x >= 0 && p.y >= 0 && p.x < width && p.y < height;
  }
  Cell at(Pos p) const { return in_bounds(p) ? grid[p.y * width + p.x] : Cell::kWall; }
  bool walkable(Pos p) const { return at(p) == Cell::kFloor; }
  int pot_index(Pos p) const;      // -1 if not a pot
  int counter_index(Pos p) const;  // -1 if not a plain counter
  std::vector<Pos> cells_of(Cell kind) const;
  std::vector<Pos> floor_cells() const;
};

// Parses the text layout format:
//   name: cramped_room
//   cook_time: 20
//   horizon: 400
//   <blank line>
//   XXPXX
//   O  2O
//   ...
// Throws ParseError naming the offending line/column.
Layout parse_layout(std::string_view text);
Layout load_layout(const std::filesystem::path& path);

// The six layouts shipped with the library, compiled in.
const std::vector<std::string>& bundled_layout_names();
Layout bundled_layout(std::string_view name);
// Bundled name or path to a layout file.
Layout resolve_layout(std::string_view name_or_path);

struct ChefState {
  Pos pos;
  Orientation facing = Orientation::kNorth;
  Item held = Item::kNothing;
  bool operator==(const ChefState&) const = default;
};

struct PotState {
  int onions = 0;
  int remaining = 0;  // cook ticks left; meaningful while cooking
  bool done = false;
  bool cooking() const { return onions == kPotCapacity && !done; }
  bool operator==(const PotState&) const = default;
};

struct WorldState {
  std::array<ChefState, 2> chefs;
  std::vector<PotState> pots;     // aligned with Layout::pots
  std::vector<Item> counters;     // aligned with Layout::counters
  int tick = 0;
  bool operator==(const WorldState&) const = default;
};

struct JointAction {
  std::array<Action, 2> actions{Action::kStay, Action::kStay};  // by chef index

  static JointAction of(Action chef0, Action chef1) { return {{chef0, chef1}}; }
  Action operator[](int chef) const { return actions[chef]; }
};

struct RewardConfig {
  double delivery_reward = 20.0;
  double onion_shaping = 3.0;
  double partner_delivery_penalty = -20.0;
  bool shaping_enabled = true;

  // Shaping is off on forced_coordination.
  static RewardConfig for_layout(const Layout& layout);
};

enum class EventKind : std::uint8_t {
  kOnionPickup,
  kDishPickup,
  kOnionPlaced,
  kCookStart,
  kSoupReady,
  kSoupPickup,
  kDelivery,
  kCounterPlace,
  kCounterTake,
};
std::string_view to_string(EventKind k);

struct Event {
  EventKind kind;
  int chef;  // -1 for environment events (cook start/ready)
  bool operator==(const Event&) const = default;
};

struct StepResult {
  WorldState state;
  double team_reward = 0.0;
  std::array<double, 2> shaped{0.0, 0.0};  // per chef, excludes team reward
  std::vector<Event> events;
};

WorldState reset(const Layout& layout, std::uint64_t seed, bool swap_start);

// Pure transition. Throws EpisodeOver when state.tick >= layout.horizon.
StepResult step(const Layout& layout, const WorldState& state, JointAction action,
                const RewardConfig& cfg);

// Viewer-egocentric feature vector. Blocks, in order: own position one-hot,
// own orientation, own held item, partner position, partner orientation,
// partner held item, per pot (onions/3, remaining/cook_time, done), per
// counter (onion, dish, soup flags), tick/horizon.
std::vector<double> observe(const Layout& layout, const WorldState& state, int viewer);
void observe_into(const Layout& layout, const WorldState& state, int viewer,
                  std::span<double> out);
int observation_size(const Layout& layout);

// Counts onions in the world, counting soups as three onions.
int onions_in_world(const WorldState& state);

}  // namespace pasd

#endif  // PASD_KITCHEN_HPP_
