#include "lotnext/data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "lotnext/error.hpp"

namespace lotnext {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
  return out;
}

template <typename T>
std::optional<T> parse_number(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) return std::nullopt;
  return value;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

struct FieldLayout {
  std::size_t user = 0, timestamp = 1, lat = 2, lon = 3, poi = 4;
  std::size_t width = 5;
};

FieldLayout layout_from_header(std::string_view header) {
  const auto names = split(header, ',');
  auto find = [&](std::initializer_list<const char*> aliases) -> std::size_t {
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto n = lower(trim(names[i]));
      for (const char* a : aliases) {
        if (n == a) return i;
      }
    }
    throw DataError("generic-csv: header row must name columns user, timestamp, latitude, "
                    "longitude, location_id");
  };
  FieldLayout f;
  f.user = find({"user", "user_id", "userid"});
  f.timestamp = find({"timestamp", "time", "utc_time"});
  f.lat = find({"latitude", "lat"});
  f.lon = find({"longitude", "lon", "lng"});
  f.poi = find({"location_id", "poi", "poi_id", "venue_id", "location"});
  f.width = names.size();
  return f;
}

std::optional<CheckIn> parse_fields(const std::vector<std::string_view>& fields, const FieldLayout& layout,
                                    std::string& reason) {
  if (fields.size() != layout.width) {
    reason = "expected " + std::to_string(layout.width) + " fields, found " + std::to_string(fields.size());
    return std::nullopt;
  }
  CheckIn c;
  c.user = std::string(trim(fields[layout.user]));
  c.poi = std::string(trim(fields[layout.poi]));
  if (c.user.empty() || c.poi.empty()) {
    reason = "missing user or location id";
    return std::nullopt;
  }
  const auto ts = parse_timestamp(trim(fields[layout.timestamp]));
  if (!ts) {
    reason = "unparseable timestamp '" + std::string(trim(fields[layout.timestamp])) + "'";
    return std::nullopt;
  }
  c.timestamp = *ts;
  const auto lat = parse_number<double>(fields[layout.lat]);
  const auto lon = parse_number<double>(fields[layout.lon]);
  if (!lat || !lon) {
    reason = "unparseable coordinate";
    return std::nullopt;
  }
  c.lat = *lat;
  c.lon = *lon;
  if (!is_valid(GeoPoint{c.lat, c.lon})) {
    reason = "coordinate out of range";
    return std::nullopt;
  }
  return c;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

CheckInFormat parse_format(std::string_view name) {
  if (name == "gowalla-tsv") return CheckInFormat::GowallaTsv;
  if (name == "generic-csv") return CheckInFormat::GenericCsv;
  throw ConfigError("unknown check-in format '" + std::string(name) + "' (gowalla-tsv|generic-csv)");
}

std::optional<Timestamp> parse_timestamp(std::string_view text) {
  // YYYY-MM-DD?HH:MM:SS with optional trailing Z
  if (!text.empty() && (text.back() == 'Z' || text.back() == 'z')) text.remove_suffix(1);
  if (text.size() != 19 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') ||
      text[13] != ':' || text[16] != ':') {
    return std::nullopt;
  }
  const auto y = parse_number<int>(text.substr(0, 4));
  const auto mo = parse_number<unsigned>(text.substr(5, 2));
  const auto d = parse_number<unsigned>(text.substr(8, 2));
  const auto h = parse_number<int>(text.substr(11, 2));
  const auto mi = parse_number<int>(text.substr(14, 2));
  const auto s = parse_number<int>(text.substr(17, 2));
  if (!y || !mo || !d || !h || !mi || !s) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{*y}, std::chrono::month{*mo}, std::chrono::day{*d}};
  if (!ymd.ok() || *h > 23 || *mi > 59 || *s > 59) return std::nullopt;
  const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
  return static_cast<Timestamp>(days) * 86400 + *h * 3600 + *mi * 60 + *s;
}

std::string format_timestamp(Timestamp ts) {
  using namespace std::chrono;
  const auto day = static_cast<std::int64_t>(std::floor(static_cast<double>(ts) / 86400.0));
  const auto secs = ts - day * 86400;
  const year_month_day ymd{sys_days{days{day}}};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(secs / 3600), static_cast<int>((secs / 60) % 60), static_cast<int>(secs % 60));
  return buf;
}

int time_slot_of(Timestamp ts) {
  using namespace std::chrono;
  const std::int64_t day = ts >= 0 ? ts / 86400 : -((-ts + 86399) / 86400);
  const std::int64_t sec_of_day = ts - day * 86400;
  const weekday wd{sys_days{days{day}}};
  const int dow = static_cast<int>(wd.iso_encoding()) - 1;  // Monday = 0
  return 24 * dow + static_cast<int>(sec_of_day / 3600);
}

ParseResult parse_checkins(std::istream& in, CheckInFormat format) {
  ParseResult result;
  FieldLayout layout;
  char sep = '\t';
  bool need_header = false;
  if (format == CheckInFormat::GenericCsv) {
    sep = ',';
    need_header = true;
  }

  std::string line;
  std::size_t line_no = 0;
  std::size_t data_lines = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty()) continue;
    if (need_header) {
      layout = layout_from_header(body);
      need_header = false;
      continue;
    }
    ++data_lines;
    std::string_view raw(line);
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    std::string reason;
    if (auto rec = parse_fields(split(raw, sep), layout, reason)) {
      result.records.push_back(std::move(*rec));
    } else {
      result.rejected.push_back({line_no, std::move(reason)});
    }
  }
  if (data_lines > 0 && 2 * result.rejected.size() > data_lines) {
    const auto& first = result.rejected.front();
    throw DataError("rejected " + std::to_string(result.rejected.size()) + " of " +
                    std::to_string(data_lines) + " lines; wrong format? (line " + std::to_string(first.line) +
                    ": " + first.reason + ")");
  }
  return result;
}

int Vocabulary::add(const std::string& id) {
  auto [it, inserted] = index_.try_emplace(id, static_cast<int>(ids_.size()));
  if (inserted) ids_.push_back(id);
  return it->second;
}

std::optional<int> Vocabulary::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Vocabulary::digest() const {
  std::uint64_t h = fnv1a("");
  for (const auto& id : ids_) {
    h = fnv1a(id, h);
    h = fnv1a("\n", h);
  }
  return h;
}

std::vector<SequenceWindow> make_windows(int user, const std::vector<Visit>& visits, int window_len) {
  if (window_len < 1) throw DataError("window length must be positive");
  std::vector<SequenceWindow> out;
  const std::size_t n = visits.size();
  for (std::size_t start = 0; start + 1 < n; start += static_cast<std::size_t>(window_len)) {
    const std::size_t end = std::min(start + static_cast<std::size_t>(window_len), n - 1);
    SequenceWindow w;
    w.user = user;
    for (std::size_t k = start; k < end; ++k) {
      w.pois.push_back(visits[k].poi);
      w.slots.push_back(visits[k].slot);
      w.label_pois.push_back(visits[k + 1].poi);
      w.label_slots.push_back(visits[k + 1].slot);
    }
    out.push_back(std::move(w));
  }
  return out;
}

Dataset preprocess(const std::vector<CheckIn>& checkins, const PreprocessOptions& options) {
  if (checkins.empty()) throw DataError("preprocess: no check-ins");
  if (options.train_frac <= 0.0 || options.train_frac > 1.0) throw DataError("train fraction must be in (0,1]");

  std::unordered_map<std::string, std::size_t> per_user;
  for (const auto& c : checkins) ++per_user[c.user];

  Dataset ds;
  ds.window_len = options.window_len;
  std::vector<std::vector<const CheckIn*>> raw_by_user;
  for (const auto& c : checkins) {
    if (per_user[c.user] < static_cast<std::size_t>(options.min_checkins)) continue;
    const int u = ds.users.add(c.user);
    if (u == static_cast<int>(raw_by_user.size())) raw_by_user.emplace_back();
    raw_by_user[static_cast<std::size_t>(u)].push_back(&c);
    const int before = ds.pois.size();
    const int p = ds.pois.add(c.poi);
    if (p == before) ds.coords.push_back(GeoPoint{c.lat, c.lon});
  }
  if (ds.users.size() == 0) {
    throw DataError("preprocess: no user has at least " + std::to_string(options.min_checkins) + " check-ins");
  }

  ds.freq.counts.assign(static_cast<std::size_t>(ds.pois.size()), 0);
  for (int u = 0; u < ds.users.size(); ++u) {
    auto& raw = raw_by_user[static_cast<std::size_t>(u)];
    std::stable_sort(raw.begin(), raw.end(),
                     [](const CheckIn* a, const CheckIn* b) { return a->timestamp < b->timestamp; });
    std::vector<Visit> visits;
    visits.reserve(raw.size());
    for (const CheckIn* c : raw) {
      const int p = *ds.pois.find(c->poi);
      visits.push_back(Visit{p, time_slot_of(c->timestamp), c->timestamp, ds.coords[static_cast<std::size_t>(p)]});
    }
    const auto n_train = static_cast<std::size_t>(
        std::ceil(options.train_frac * static_cast<double>(visits.size()) - 1e-9));
    std::vector<Visit> train(visits.begin(), visits.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<Visit> test(visits.begin() + static_cast<std::ptrdiff_t>(n_train), visits.end());
    for (const auto& v : train) ++ds.freq.counts[static_cast<std::size_t>(v.poi)];
    for (auto& w : make_windows(u, train, options.window_len)) ds.train.push_back(std::move(w));
    for (auto& w : make_windows(u, test, options.window_len)) ds.test.push_back(std::move(w));
  }
  ds.freq.max = *std::max_element(ds.freq.counts.begin(), ds.freq.counts.end());
  return ds;
}

FrequencyTable build_frequency_table(const std::vector<SequenceWindow>& windows, int n_pois) {
  FrequencyTable t;
  t.counts.assign(static_cast<std::size_t>(n_pois), 0);
  for (const auto& w : windows) {
    for (int p : w.pois) {
      if (p < 0 || p >= n_pois) throw DataError("frequency table: poi index out of range");
      ++t.counts[static_cast<std::size_t>(p)];
    }
  }
  t.max = t.counts.empty() ? 0 : *std::max_element(t.counts.begin(), t.counts.end());
  return t;
}

double tail_fraction(const FrequencyTable& freq, std::int64_t threshold) {
  if (freq.counts.empty()) return 0.0;
  const auto n = std::count_if(freq.counts.begin(), freq.counts.end(),
                               [threshold](std::int64_t c) { return c < threshold; });
  return static_cast<double>(n) / static_cast<double>(freq.counts.size());
}

std::vector<CheckIn> generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_users <= 0 || cfg.n_pois <= 0 || cfg.checkins_per_user <= 0 || cfg.n_clusters <= 0 ||
      cfg.zipf_exponent <= 0.0 || cfg.cluster_spread_km <= 0.0) {
    throw DataError("synthetic config: all sizes and scales must be positive");
  }
  if (cfg.n_pois < cfg.n_clusters) throw DataError("synthetic config: n_pois must be >= n_clusters");

  std::mt19937_64 rng(cfg.seed);
  constexpr double kKmPerDegree = kEarthRadiusKm * 3.14159265358979323846 / 180.0;
  const GeoPoint origin{30.27, -97.74};

  std::uniform_real_distribution<double> offset(-0.3, 0.3);
  std::vector<GeoPoint> centers;
  for (int c = 0; c < cfg.n_clusters; ++c) {
    centers.push_back({origin.lat + offset(rng), origin.lon + offset(rng)});
  }

  std::normal_distribution<double> jitter(0.0, cfg.cluster_spread_km);
  std::vector<GeoPoint> poi_coord(static_cast<std::size_t>(cfg.n_pois));
  std::vector<int> poi_cluster(static_cast<std::size_t>(cfg.n_pois));
  for (int p = 0; p < cfg.n_pois; ++p) {
    const int c = p % cfg.n_clusters;
    const GeoPoint& ctr = centers[static_cast<std::size_t>(c)];
    const double dlat = jitter(rng) / kKmPerDegree;
    const double dlon = jitter(rng) / (kKmPerDegree * std::cos(ctr.lat * 3.14159265358979323846 / 180.0));
    poi_coord[static_cast<std::size_t>(p)] = {std::clamp(ctr.lat + dlat, -90.0, 90.0),
                                              std::clamp(ctr.lon + dlon, -180.0, 180.0)};
    poi_cluster[static_cast<std::size_t>(p)] = c;
  }

  // popularity rank -> poi, Zipf weights by rank
  std::vector<int> by_rank(static_cast<std::size_t>(cfg.n_pois));
  std::iota(by_rank.begin(), by_rank.end(), 0);
  std::shuffle(by_rank.begin(), by_rank.end(), rng);
  std::vector<double> zipf(static_cast<std::size_t>(cfg.n_pois));
  for (int r = 0; r < cfg.n_pois; ++r) zipf[static_cast<std::size_t>(r)] = std::pow(r + 1.0, -cfg.zipf_exponent);
  std::discrete_distribution<int> popular(zipf.begin(), zipf.end());

  // tail half of each cluster, the pool personal routines draw from
  std::vector<std::vector<int>> cluster_tail(static_cast<std::size_t>(cfg.n_clusters));
  for (int r = cfg.n_pois / 2; r < cfg.n_pois; ++r) {
    const int p = by_rank[static_cast<std::size_t>(r)];
    cluster_tail[static_cast<std::size_t>(poi_cluster[static_cast<std::size_t>(p)])].push_back(p);
  }

  constexpr int kRoutineLength = 6;
  constexpr double kRoutineShare = 0.6;
  constexpr Timestamp kStart = 1262563200;  // 2010-01-04T00:00:00Z, a Monday
  std::bernoulli_distribution follow_routine(kRoutineShare);
  std::uniform_int_distribution<Timestamp> start_offset(0, 7 * 86400 - 1);
  std::uniform_int_distribution<Timestamp> gap(3600, 6 * 3600);

  std::vector<CheckIn> out;
  out.reserve(static_cast<std::size_t>(cfg.n_users) * static_cast<std::size_t>(cfg.checkins_per_user));
  for (int u = 0; u < cfg.n_users; ++u) {
    std::vector<int> pool = cluster_tail[static_cast<std::size_t>(u % cfg.n_clusters)];
    if (pool.empty()) pool.assign(by_rank.end() - 1, by_rank.end());
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(std::min<std::size_t>(pool.size(), kRoutineLength));

    Timestamp ts = kStart + start_offset(rng);
    std::size_t step = 0;
    for (int i = 0; i < cfg.checkins_per_user; ++i) {
      int p;
      if (follow_routine(rng)) {
        p = pool[step % pool.size()];
        ++step;
      } else {
        p = by_rank[static_cast<std::size_t>(popular(rng))];
      }
      const GeoPoint& g = poi_coord[static_cast<std::size_t>(p)];
      out.push_back(CheckIn{"u" + std::to_string(u), "p" + std::to_string(p), ts, g.lat, g.lon});
      ts += gap(rng);
    }
  }
  return out;
}

void write_checkins(std::ostream& out, const std::vector<CheckIn>& records) {
  out << std::setprecision(10);
  for (const auto& c : records) {
    out << c.user << '\t' << format_timestamp(c.timestamp) << '\t' << c.lat << '\t' << c.lon << '\t' << c.poi
        << '\n';
  }
}

// ---------------------------------------------------------------------------
// Dataset directory

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw Error("cannot write " + p.string());
  f << std::setprecision(17);
  return f;
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw NotFoundError("cannot read " + p.string());
  return f;
}

void write_windows(const std::filesystem::path& p, const std::vector<SequenceWindow>& windows) {
  auto f = open_out(p);
  for (const auto& w : windows) {
    f << w.user << ' ' << w.length();
    for (int k = 0; k < w.length(); ++k) f << ' ' << w.pois[k] << ' ' << w.slots[k];
    for (int k = 0; k < w.length(); ++k) f << ' ' << w.label_pois[k] << ' ' << w.label_slots[k];
    f << '\n';
  }
}

std::vector<SequenceWindow> read_windows(const std::filesystem::path& p, int n_users, int n_pois) {
  auto f = open_in(p);
  std::vector<SequenceWindow> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::istringstream ss(line);
    SequenceWindow w;
    int n = 0;
    if (!(ss >> w.user >> n) || n < 1) throw DataError(p.string() + ":" + std::to_string(line_no) + ": bad header");
    w.pois.resize(n);
    w.slots.resize(n);
    w.label_pois.resize(n);
    w.label_slots.resize(n);
    for (int k = 0; k < n; ++k) ss >> w.pois[k] >> w.slots[k];
    for (int k = 0; k < n; ++k) ss >> w.label_pois[k] >> w.label_slots[k];
    if (!ss) throw DataError(p.string() + ":" + std::to_string(line_no) + ": truncated window");
    auto bad_poi = [n_pois](int x) { return x < 0 || x >= n_pois; };
    auto bad_slot = [](int x) { return x < 0 || x >= kTimeSlots; };
    if (w.user < 0 || w.user >= n_users || std::any_of(w.pois.begin(), w.pois.end(), bad_poi) ||
        std::any_of(w.label_pois.begin(), w.label_pois.end(), bad_poi) ||
        std::any_of(w.slots.begin(), w.slots.end(), bad_slot) ||
        std::any_of(w.label_slots.begin(), w.label_slots.end(), bad_slot)) {
      throw DataError(p.string() + ":" + std::to_string(line_no) + ": index out of range");
    }
    out.push_back(std::move(w));
  }
  return out;
}

Vocabulary read_vocab(const std::filesystem::path& p) {
  auto f = open_in(p);
  Vocabulary v;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (v.add(line) != v.size() - 1) throw DataError(p.string() + ": duplicate id '" + line + "'");
  }
  return v;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto f = open_out(dir / "users.txt");
    for (const auto& id : ds.users.ids()) f << id << '\n';
  }
  {
    auto f = open_out(dir / "pois.txt");
    for (const auto& id : ds.pois.ids()) f << id << '\n';
  }
  {
    auto f = open_out(dir / "coords.txt");
    for (const auto& c : ds.coords) f << c.lat << ' ' << c.lon << '\n';
  }
  {
    auto f = open_out(dir / "freq.txt");
    for (auto c : ds.freq.counts) f << c << '\n';
  }
  write_windows(dir / "train.txt", ds.train);
  write_windows(dir / "test.txt", ds.test);
  {
    auto f = open_out(dir / "meta.txt");
    f << "format = lotnext-dataset-1\n";
    f << "window_len = " << ds.window_len << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw NotFoundError("dataset directory not found: " + dir.string());
  Dataset ds;
  {
    auto f = open_in(dir / "meta.txt");
    std::string line;
    bool format_ok = false;
    while (std::getline(f, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const auto key = trim(std::string_view(line).substr(0, eq));
      const auto val = trim(std::string_view(line).substr(eq + 1));
      if (key == "format") format_ok = val == "lotnext-dataset-1";
      if (key == "window_len") ds.window_len = parse_number<int>(val).value_or(0);
    }
    if (!format_ok || ds.window_len < 1) throw DataError(dir.string() + ": unrecognized dataset meta.txt");
  }
  ds.users = read_vocab(dir / "users.txt");
  ds.pois = read_vocab(dir / "pois.txt");
  {
    auto f = open_in(dir / "coords.txt");
    GeoPoint g;
    while (f >> g.lat >> g.lon) ds.coords.push_back(g);
  }
  {
    auto f = open_in(dir / "freq.txt");
    std::int64_t c;
    while (f >> c) ds.freq.counts.push_back(c);
  }
  if (static_cast<int>(ds.coords.size()) != ds.pois.size() || ds.freq.size() != ds.pois.size()) {
    throw DataError(dir.string() + ": coords/freq do not match the poi vocabulary");
  }
  ds.freq.max = ds.freq.counts.empty() ? 0 : *std::max_element(ds.freq.counts.begin(), ds.freq.counts.end());
  ds.train = read_windows(dir / "train.txt", ds.n_users(), ds.n_pois());
  ds.test = read_windows(dir / "test.txt", ds.n_users(), ds.n_pois());
  return ds;
}

}  // namespace lotnext
