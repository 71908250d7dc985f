#include "pasd/kitchen.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "pasd/common.hpp"

namespace pasd {

namespace detail {
// Generated from layouts/*.layout at configure time.
const std::vector<std::pair<std::string, std::string>>& bundled_layout_texts();
}  // namespace detail

Pos direction_of(Orientation o) {
  switch (o) {
    case Orientation::kNorth: return {0, -1};
    case Orientation::kSouth: return {0, 1};
    case Orientation::kEast: return {1, 0};
    case Orientation::kWest: return {-1, 0};
  }
  return {0, 0};
}

std::optional<Orientation> orientation_of(Action a) {
  switch (a) {
    case Action::kUp: return Orientation::kNorth;
    case Action::kDown: return Orientation::kSouth;
    case Action::kRight: return Orientation::kEast;
    case Action::kLeft: return Orientation::kWest;
    default: return std::nullopt;
  }
}

Action move_toward(Pos from, Pos to) {
  if (to.x > from.x) return Action::kRight;
  if (to.x < from.x) return Action::kLeft;
  if (to.y > from.y) return Action::kDown;
  if (to.y < from.y) return Action::kUp;
  return Action::kStay;
}

std::string_view to_string(Action a) {
  switch (a) {
    case Action::kUp: return "up";
    case Action::kDown: return "down";
    case Action::kLeft: return "left";
    case Action::kRight: return "right";
    case Action::kStay: return "stay";
    case Action::kInteract: return "interact";
  }
  return "?";
}

std::string_view to_string(Item i) {
  switch (i) {
    case Item::kNothing: return "nothing";
    case Item::kOnion: return "onion";
    case Item::kDish: return "dish";
    case Item::kSoup: return "soup";
  }
  return "?";
}

std::string_view to_string(Orientation o) {
  switch (o) {
    case Orientation::kNorth: return "N";
    case Orientation::kSouth: return "S";
    case Orientation::kEast: return "E";
    case Orientation::kWest: return "W";
  }
  return "?";
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::kOnionPickup: return "onion_pickup";
    case EventKind::kDishPickup: return "dish_pickup";
    case EventKind::kOnionPlaced: return "onion_placed";
    case EventKind::kCookStart: return "cook_start";
    case EventKind::kSoupReady: return "soup_ready";
    case EventKind::kSoupPickup: return "soup_pickup";
    case EventKind::kDelivery: return "delivery";
    case EventKind::kCounterPlace: return "counter_place";
    case EventKind::kCounterTake: return "counter_take";
  }
  return "?";
}

Action action_from_string(std::string_view s) {
  for (int i = 0; i < kNumActions; ++i) {
    if (to_string(static_cast<Action>(i)) == s) return static_cast<Action>(i);
  }
  throw ConfigError("unknown action '" + std::string(s) + "'");
}

Item item_from_string(std::string_view s) {
  for (int i = 0; i < kNumItems; ++i) {
    if (to_string(static_cast<Item>(i)) == s) return static_cast<Item>(i);
  }
  throw ConfigError("unknown item '" + std::string(s) + "'");
}

Orientation orientation_from_string(std::string_view s) {
  for (int i = 0; i < 4; ++i) {
    if (to_string(static_cast<Orientation>(i)) == s) return static_cast<Orientation>(i);
  }
  throw ConfigError("unknown orientation '" + std::string(s) + "'");
}

int Layout::pot_index(Pos p) const {
  auto it = std::find(pots.begin(), pots.end(), p);
  return it == pots.end() ? -1 : static_cast<int>(it - pots.begin());
}

int Layout::counter_index(Pos p) const {
  auto it = std::find(counters.begin(), counters.end(), p);
  return it == counters.end() ? -1 : static_cast<int>(it - counters.begin());
}

std::vector<Pos> Layout::cells_of(Cell kind) const {
  std::vector<Pos> out;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (grid[y * width + x] == kind) out.push_back({x, y});
  return out;
}

std::vector<Pos> Layout::floor_cells() const { return cells_of(Cell::kFloor); }

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

int parse_int(std::string_view v, int line, int column) {
  try {
    std::size_t used = 0;
    const int out = std::stoi(std::string(v), &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ParseError("expected integer, got '" + std::string(v) + "'", line, column);
  }
}

}  // namespace

Layout parse_layout(std::string_view text) {
  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      std::string_view line = text.substr(start, end - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lines.push_back(line);
      if (end == text.size()) break;
      start = end + 1;
    }
  }

  Layout layout;
  std::size_t i = 0;
  bool saw_name = false;
  for (; i < lines.size(); ++i) {
    const int lineno = static_cast<int>(i) + 1;
    if (trim(lines[i]).empty()) {
      ++i;
      break;
    }
    const auto colon = lines[i].find(':');
    if (colon == std::string_view::npos)
      throw ParseError("header line must be 'key: value'", lineno, 1);
    const auto key = trim(lines[i].substr(0, colon));
    const auto value = trim(lines[i].substr(colon + 1));
    const int vcol = static_cast<int>(value.data() - lines[i].data()) + 1;
    if (key == "name") {
      if (value.empty()) throw ParseError("empty layout name", lineno, vcol);
      layout.name = std::string(value);
      saw_name = true;
    } else if (key == "cook_time") {
      layout.cook_time = parse_int(value, lineno, vcol);
      if (layout.cook_time < 1) throw ParseError("cook_time must be >= 1", lineno, vcol);
    } else if (key == "horizon") {
      layout.horizon = parse_int(value, lineno, vcol);
      if (layout.horizon < 1) throw ParseError("horizon must be >= 1", lineno, vcol);
    } else {
      throw ParseError("unknown header key '" + std::string(key) + "'", lineno, 1);
    }
  }
  if (!saw_name) throw ParseError("missing 'name' header", 1, 1);

  const std::size_t grid_begin = i;
  std::size_t grid_end = lines.size();
  while (grid_end > grid_begin && lines[grid_end - 1].empty()) --grid_end;
  if (grid_end == grid_begin)
    throw ParseError("missing grid", static_cast<int>(grid_begin) + 1, 1);

  layout.height = static_cast<int>(grid_end - grid_begin);
  layout.width = static_cast<int>(lines[grid_begin].size());
  if (layout.width < 3 || layout.height < 3)
    throw ParseError("grid must be at least 3x3", static_cast<int>(grid_begin) + 1, 1);
  layout.grid.assign(static_cast<std::size_t>(layout.width * layout.height), Cell::kWall);

  std::array<std::optional<Pos>, 2> spawns;
  for (int y = 0; y < layout.height; ++y) {
    const auto row = lines[grid_begin + y];
    const int lineno = static_cast<int>(grid_begin) + y + 1;
    if (static_cast<int>(row.size()) != layout.width)
      throw ParseError("ragged grid row (expected width " + std::to_string(layout.width) + ")",
                       lineno, static_cast<int>(row.size()) + 1);
    for (int x = 0; x < layout.width; ++x) {
      Cell c;
      switch (row[x]) {
        case 'X': c = Cell::kWall; break;
        case ' ': c = Cell::kFloor; break;
        case 'O': c = Cell::kOnionDispenser; break;
        case 'D': c = Cell::kDishDispenser; break;
        case 'P': c = Cell::kPot; break;
        case 'S': c = Cell::kServing; break;
        case 'C': c = Cell::kCounter; break;
        case '1':
        case '2': {
          const int who = row[x] - '1';
          if (spawns[who]) throw ParseError("duplicate spawn point", lineno, x + 1);
          spawns[who] = Pos{x, y};
          c = Cell::kFloor;
          break;
        }
        default:
          throw ParseError(std::string("unknown cell character '") + row[x] + "'", lineno, x + 1);
      }
      const bool border = x == 0 || y == 0 || x == layout.width - 1 || y == layout.height - 1;
      if (border && c == Cell::kFloor)
        throw ParseError("grid boundary must not be floor", lineno, x + 1);
      layout.grid[y * layout.width + x] = c;
    }
  }
  const int first_grid_line = static_cast<int>(grid_begin) + 1;
  if (!spawns[0] || !spawns[1])
    throw ParseError("grid needs exactly two spawn points '1' and '2'", first_grid_line, 1);
  layout.spawn_points = {*spawns[0], *spawns[1]};

  auto require = [&](Cell kind, const char* what) {
    if (layout.cells_of(kind).empty())
      throw ParseError(std::string("missing ") + what, first_grid_line, 1);
  };
  require(Cell::kPot, "pot");
  require(Cell::kOnionDispenser, "onion dispenser");
  require(Cell::kDishDispenser, "dish dispenser");
  require(Cell::kServing, "serving counter");

  layout.pots = layout.cells_of(Cell::kPot);
  layout.counters = layout.cells_of(Cell::kCounter);
  return layout;
}

Layout load_layout(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open layout file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_layout(ss.str());
}

const std::vector<std::string>& bundled_layout_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, text] : detail::bundled_layout_texts()) out.push_back(name);
    return out;
  }();
  return names;
}

Layout bundled_layout(std::string_view name) {
  for (const auto& [n, text] : detail::bundled_layout_texts())
    if (n == name) return parse_layout(text);
  throw ConfigError("unknown layout '" + std::string(name) + "'");
}

Layout resolve_layout(std::string_view name_or_path) {
  for (const auto& n : bundled_layout_names())
    if (n == name_or_path) return bundled_layout(n);
  const std::filesystem::path p(name_or_path);
  if (std::filesystem::exists(p)) return load_layout(p);
  throw ConfigError("unknown layout '" + std::string(name_or_path) + "'");
}

RewardConfig RewardConfig::for_layout(const Layout& layout) {
  RewardConfig cfg;
  if (layout.name == "forced_coordination") cfg.shaping_enabled = false;
  return cfg;
}

WorldState reset(const Layout& layout, std::uint64_t /*seed*/, bool swap_start) {
  // The initial state distribution is a point mass per start assignment,
  // so the seed does not influence it.
  WorldState s;
  const int first = swap_start ? 1 : 0;
  s.chefs[0] = {layout.spawn_points[first], Orientation::kNorth, Item::kNothing};
  s.chefs[1] = {layout.spawn_points[1 - first], Orientation::kNorth, Item::kNothing};
  s.pots.assign(layout.pots.size(), PotState{});
  s.counters.assign(layout.counters.size(), Item::kNothing);
  s.tick = 0;
  return s;
}

namespace {

void interact(const Layout& layout, WorldState& s, int chef, const RewardConfig& cfg,
              StepResult& out) {
  ChefState& c = s.chefs[chef];
  const Pos target = c.pos + direction_of(c.facing);
  switch (layout.at(target)) {
    case Cell::kOnionDispenser:
      if (c.held == Item::kNothing) {
        c.held = Item::kOnion;
        out.events.push_back({EventKind::kOnionPickup, chef});
      }
      break;
    case Cell::kDishDispenser:
      if (c.held == Item::kNothing) {
        c.held = Item::kDish;
        out.events.push_back({EventKind::kDishPickup, chef});
      }
      break;
    case Cell::kPot: {
      PotState& pot = s.pots[layout.pot_index(target)];
      if (c.held == Item::kOnion && pot.onions < kPotCapacity) {
        c.held = Item::kNothing;
        ++pot.onions;
        out.events.push_back({EventKind::kOnionPlaced, chef});
        if (cfg.shaping_enabled) out.shaped[chef] += cfg.onion_shaping;
        if (pot.onions == kPotCapacity) {
          pot.remaining = layout.cook_time;
          out.events.push_back({EventKind::kCookStart, -1});
        }
      } else if (c.held == Item::kDish && pot.done) {
        c.held = Item::kSoup;
        pot = PotState{};
        out.events.push_back({EventKind::kSoupPickup, chef});
      }
      break;
    }
    case Cell::kServing:
      if (c.held == Item::kSoup) {
        c.held = Item::kNothing;
        out.team_reward += cfg.delivery_reward;
        out.events.push_back({EventKind::kDelivery, chef});
        if (cfg.shaping_enabled) out.shaped[1 - chef] += cfg.partner_delivery_penalty;
      }
      break;
    case Cell::kCounter: {
      Item& slot = s.counters[layout.counter_index(target)];
      if (c.held != Item::kNothing && slot == Item::kNothing) {
        slot = c.held;
        c.held = Item::kNothing;
        out.events.push_back({EventKind::kCounterPlace, chef});
      } else if (c.held == Item::kNothing && slot != Item::kNothing) {
        c.held = slot;
        slot = Item::kNothing;
        out.events.push_back({EventKind::kCounterTake, chef});
      }
      break;
    }
    case Cell::kFloor:
    case Cell::kWall:
      break;
  }
}

bool stateful(Cell c) { return c == Cell::kPot || c == Cell::kCounter; }

}  // namespace

StepResult step(const Layout& layout, const WorldState& state, JointAction action,
                const RewardConfig& cfg) {
  if (state.tick >= layout.horizon)
    throw EpisodeOver("step at tick " + std::to_string(state.tick) + " with horizon " +
                      std::to_string(layout.horizon));
  StepResult out;
  out.state = state;
  WorldState& s = out.state;

  // Pots cooking before this tick advance at its end.
  std::vector<bool> was_cooking(s.pots.size());
  for (std::size_t p = 0; p < s.pots.size(); ++p) was_cooking[p] = s.pots[p].cooking();

  // Movement. Orientation always follows the requested direction.
  std::array<Pos, 2> target{state.chefs[0].pos, state.chefs[1].pos};
  std::array<bool, 2> moving{false, false};
  for (int i = 0; i < 2; ++i) {
    if (auto o = orientation_of(action[i])) {
      s.chefs[i].facing = *o;
      const Pos t = state.chefs[i].pos + direction_of(*o);
      if (layout.walkable(t)) {
        target[i] = t;
        moving[i] = true;
      }
    }
  }
  std::array<bool, 2> blocked{false, false};
  if (moving[0] && moving[1] && target[0] == target[1]) blocked = {true, true};
  for (int i = 0; i < 2; ++i)
    if (moving[i] && target[i] == state.chefs[1 - i].pos) blocked[i] = true;
  for (int i = 0; i < 2; ++i)
    if (moving[i] && !blocked[i]) s.chefs[i].pos = target[i];

  // Interaction. Two chefs hitting the same pot or counter cancel out, which
  // keeps the transition symmetric in chef index.
  const bool both = action[0] == Action::kInteract && action[1] == Action::kInteract;
  bool contested = false;
  if (both) {
    const Pos t0 = s.chefs[0].pos + direction_of(s.chefs[0].facing);
    const Pos t1 = s.chefs[1].pos + direction_of(s.chefs[1].facing);
    contested = t0 == t1 && stateful(layout.at(t0));
  }
  if (!contested) {
    for (int i = 0; i < 2; ++i)
      if (action[i] == Action::kInteract) interact(layout, s, i, cfg, out);
  }

  for (std::size_t p = 0; p < s.pots.size(); ++p) {
    PotState& pot = s.pots[p];
    if (was_cooking[p] && pot.cooking()) {
      if (--pot.remaining <= 0) {
        pot.remaining = 0;
        pot.done = true;
        out.events.push_back({EventKind::kSoupReady, -1});
      }
    }
  }
  ++s.tick;
  return out;
}

int observation_size(const Layout& layout) {
  const int cells = layout.width * layout.height;
  return 2 * (cells + 4 + kNumItems) + 3 * static_cast<int>(layout.pots.size()) +
         3 * static_cast<int>(layout.counters.size()) + 1;
}

void observe_into(const Layout& layout, const WorldState& state, int viewer,
                  std::span<double> out) {
  if (static_cast<int>(out.size()) != observation_size(layout))
    throw ShapeError("observe_into: wrong output size");
  std::fill(out.begin(), out.end(), 0.0);
  const int cells = layout.width * layout.height;
  std::size_t off = 0;
  for (int who : {viewer, 1 - viewer}) {
    const ChefState& c = state.chefs[who];
    out[off + c.pos.y * layout.width + c.pos.x] = 1.0;
    off += cells;
    out[off + static_cast<int>(c.facing)] = 1.0;
    off += 4;
    out[off + static_cast<int>(c.held)] = 1.0;
    off += kNumItems;
  }
  for (const PotState& pot : state.pots) {
    out[off++] = static_cast<double>(pot.onions) / kPotCapacity;
    out[off++] = pot.cooking() ? static_cast<double>(pot.remaining) / layout.cook_time : 0.0;
    out[off++] = pot.done ? 1.0 : 0.0;
  }
  for (Item item : state.counters) {
    if (item != Item::kNothing) out[off + static_cast<int>(item) - 1] = 1.0;
    off += 3;
  }
  out[off] = static_cast<double>(state.tick) / layout.horizon;
}

std::vector<double> observe(const Layout& layout, const WorldState& state, int viewer) {
  std::vector<double> out(static_cast<std::size_t>(observation_size(layout)));
  observe_into(layout, state, viewer, out);
  return out;
}

int onions_in_world(const WorldState& state) {
  auto count = [](Item i) { return i == Item::kOnion ? 1 : i == Item::kSoup ? kPotCapacity : 0; };
  int n = 0;
  for (const auto& c : state.chefs) n += count(c.held);
  for (Item i : state.counters) n += count(i);
  for (const auto& p : state.pots) n += p.onions;
  return n;
}

}  // namespace pasd
