#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lotnext/spatial.hpp"

namespace lotnext {

/// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

inline constexpr int kTimeSlots = 168;

struct CheckIn {
  std::string user;
  std::string poi;
  Timestamp timestamp = 0;
  double lat = 0.0;
  double lon = 0.0;

  bool operator==(const CheckIn&) const = default;
};

enum class CheckInFormat { GowallaTsv, GenericCsv };

CheckInFormat parse_format(std::string_view name);

struct RejectedLine {
  std::size_t line = 0;
  std::string reason;
};

struct ParseResult {
  std::vector<CheckIn> records;
  std::vector<RejectedLine> rejected;
};

/// Reads one record per line. Blank lines are ignored; malformed lines are
/// tallied in `rejected`. Throws DataError when more than half of the
/// non-blank lines are rejected.
ParseResult parse_checkins(std::istream& in, CheckInFormat format);

/// Parses "YYYY-MM-DDTHH:MM:SS[Z]" (a space may replace the 'T').
std::optional<Timestamp> parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp ts);

/// Hour-of-week slot in [0,167], Monday 00:00 UTC = 0.
int time_slot_of(Timestamp ts);

/// Bidirectional raw id <-> dense index map.
class Vocabulary {
 public:
  int add(const std::string& id);
  std::optional<int> find(const std::string& id) const;
  const std::string& id(int index) const { return ids_.at(static_cast<std::size_t>(index)); }
  int size() const { return static_cast<int>(ids_.size()); }
  const std::vector<std::string>& ids() const { return ids_; }

  /// FNV-1a over the newline-joined ids.
  std::uint64_t digest() const;

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, int> index_;
};

struct Visit {
  int poi = 0;
  int slot = 0;
  Timestamp timestamp = 0;
  GeoPoint coord;
};

struct Trajectory {
  int user = 0;
  std::vector<Visit> items;
};

/// `pois[k]` / `slots[k]` are inputs, `label_pois[k]` / `label_slots[k]` the
/// visit immediately after input k. Only the last window of a run may be
/// shorter than the configured length.
struct SequenceWindow {
  int user = 0;
  std::vector<int> pois;
  std::vector<int> slots;
  std::vector<int> label_pois;
  std::vector<int> label_slots;

  int length() const { return static_cast<int>(pois.size()); }
  bool operator==(const SequenceWindow&) const = default;
};

struct FrequencyTable {
  std::vector<std::int64_t> counts;
  std::int64_t max = 0;

  std::int64_t operator[](int poi) const { return counts.at(static_cast<std::size_t>(poi)); }
  int size() const { return static_cast<int>(counts.size()); }
};

struct PreprocessOptions {
  int min_checkins = 100;
  double train_frac = 0.8;
  int window_len = 20;
};

struct Dataset {
  Vocabulary users;
  Vocabulary pois;
  std::vector<GeoPoint> coords;
  FrequencyTable freq;
  std::vector<SequenceWindow> train;
  std::vector<SequenceWindow> test;
  int window_len = 20;

  int n_users() const { return users.size(); }
  int n_pois() const { return pois.size(); }
};

/// Filter inactive users, sort each timeline, split train/test by time and
/// cut non-overlapping windows. Frequencies count every training check-in.
Dataset preprocess(const std::vector<CheckIn>& checkins, const PreprocessOptions& options = {});

/// Non-overlapping windows over one timeline; a trailing run of fewer than
/// two visits is dropped.
std::vector<SequenceWindow> make_windows(int user, const std::vector<Visit>& visits, int window_len);

/// Counts each POI's appearances as an input item.
FrequencyTable build_frequency_table(const std::vector<SequenceWindow>& windows, int n_pois);

/// Fraction of POIs whose count is strictly below `threshold`.
double tail_fraction(const FrequencyTable& freq, std::int64_t threshold);

struct SyntheticConfig {
  int n_users = 50;
  int n_pois = 300;
  double zipf_exponent = 1.2;
  int checkins_per_user = 200;
  int n_clusters = 5;
  double cluster_spread_km = 2.0;
  std::uint64_t seed = 42;
};

/// Seeded generator of clustered, Zipf-popular check-ins with per-user
/// routines over personal tail POIs.
std::vector<CheckIn> generate_synthetic(const SyntheticConfig& cfg);

/// Writes records as gowalla-tsv.
void write_checkins(std::ostream& out, const std::vector<CheckIn>& records);

/// Dataset directory layout:
///   users.txt, pois.txt   one raw id per line, line number = dense index
///   coords.txt            "lat lon" per POI line
///   freq.txt              training count per POI line
///   train.txt, test.txt   one window per line:
///                         user n p_1 s_1 ... p_n s_n y_1 ys_1 ... y_n ys_n
///   meta.txt              key = value (format, window_len)
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace lotnext
