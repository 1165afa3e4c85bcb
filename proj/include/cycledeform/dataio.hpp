#pragma once

// Text formats:
//   .xyz   one point per line, three whitespace-separated reals, '#' lines ignored
//   .seg   one non-negative integer per line, aligned with the .xyz rows
//   manifest  tab-separated: id, category, points path, labels path or "-", split
// A binary mirror of .xyz (".xyzb") stores the same rows as little-endian f64 triples.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cycledeform/geometry.hpp"

namespace cycledeform {

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename V>
bool parse_number(std::string_view tok, V& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && ptr == tok.data() + tok.size();
}

inline std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream is(path, mode);
  if (!is) throw Error("cannot open '" + path + "'");
  return is;
}

inline std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream os(path, mode | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  return os;
}

inline std::string format9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace detail

inline PointCloud parse_points(std::istream& is) {
  std::vector<Point3> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto toks = detail::split_ws(line);
    if (toks.empty() || toks.front().front() == '#') continue;
    if (toks.size() != 3)
      throw ParseError("expected 3 coordinates, found " + std::to_string(toks.size()), lineno);
    Point3 p;
    for (int a = 0; a < 3; ++a)
      if (!detail::parse_number(toks[static_cast<std::size_t>(a)], p[a]) || !std::isfinite(p[a]))
        throw ParseError("bad coordinate '" + std::string(toks[static_cast<std::size_t>(a)]) + "'", lineno);
    pts.push_back(p);
  }
  if (pts.empty()) throw ParseError("no points", lineno);
  return PointCloud(pts);
}

inline Labels parse_labels(std::istream& is) {
  Labels out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto toks = detail::split_ws(line);
    if (toks.empty() || toks.front().front() == '#') continue;
    int v = -1;
    if (toks.size() != 1 || !detail::parse_number(toks.front(), v) || v < 0)
      throw ParseError("expected one non-negative integer label", lineno);
    out.push_back(v);
  }
  return out;
}

inline void print_points(std::ostream& os, const PointCloud& cloud) {
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3 p = cloud.point(i);
    os << detail::format9(p.x()) << ' ' << detail::format9(p.y()) << ' ' << detail::format9(p.z()) << '\n';
  }
}

inline void print_labels(std::ostream& os, const Labels& labels) {
  for (int l : labels) os << l << '\n';
}

inline PointCloud load_points_binary(const std::string& path) {
  auto is = detail::open_in(path, std::ios::binary);
  std::vector<char> raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (raw.empty() || raw.size() % 24 != 0) throw CorruptFile("'" + path + "' is not a whole number of f64 triples");
  Points<double> pts(static_cast<Eigen::Index>(raw.size() / 24), 3);
  for (std::size_t k = 0; k < raw.size() / 8; ++k) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[k * 8 + b])) << (8 * b);
    pts.data()[k] = std::bit_cast<double>(bits);
  }
  return PointCloud(std::move(pts));
}

inline void save_points_binary(const PointCloud& cloud, const std::string& path) {
  auto os = detail::open_out(path, std::ios::binary);
  const auto& m = cloud.matrix();
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    const auto bits = std::bit_cast<std::uint64_t>(m.data()[k]);
    for (int b = 0; b < 8; ++b) os.put(static_cast<char>(bits >> (8 * b)));
  }
}

inline bool is_binary_points_path(const std::string& path) {
  return std::filesystem::path(path).extension() == ".xyzb";
}

/// Reads .xyz text, or the binary mirror when the extension is .xyzb.
inline PointCloud load_points(const std::string& path) {
  if (is_binary_points_path(path)) return load_points_binary(path);
  auto is = detail::open_in(path);
  try {
    return parse_points(is);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.line());
  }
}

inline void save_points(const PointCloud& cloud, const std::string& path) {
  if (is_binary_points_path(path)) return save_points_binary(cloud, path);
  auto os = detail::open_out(path);
  print_points(os, cloud);
}

inline Labels load_labels(const std::string& path) {
  auto is = detail::open_in(path);
  try {
    return parse_labels(is);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.line());
  }
}

inline void save_labels(const Labels& labels, const std::string& path) {
  auto os = detail::open_out(path);
  print_labels(os, labels);
}

/// Loads a points/labels pair. With part_count 0 the label space is taken
/// as [0, max label].
inline LabeledPointCloud load_labeled(const std::string& points_path, const std::string& labels_path,
                                      int part_count = 0) {
  PointCloud cloud = load_points(points_path);
  Labels labels = load_labels(labels_path);
  if (labels.size() != cloud.size())
    throw LengthMismatch("'" + labels_path + "' has " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(cloud.size()) + " points");
  if (part_count == 0) part_count = labels.empty() ? 1 : *std::max_element(labels.begin(), labels.end()) + 1;
  return LabeledPointCloud(std::move(cloud), std::move(labels), part_count);
}

enum class Split { Train, Test };

inline std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw InvalidArgument("split must be train or test, got '" + s + "'");
}

struct ManifestRecord {
  std::string id;
  std::string category;
  std::string points_path;
  std::optional<std::string> labels_path;
  Split split = Split::Train;

  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  void validate() const {
    std::set<std::string> seen;
    for (const auto& r : records)
      if (!seen.insert(r.id).second) throw InvalidArgument("duplicate shape id '" + r.id + "' in manifest");
  }

  /// Records of one category (empty: all) and split, in manifest order.
  std::vector<ManifestRecord> select(const std::string& category, std::optional<Split> split) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records)
      if ((category.empty() || r.category == category) && (!split || r.split == *split)) out.push_back(r);
    return out;
  }

  bool operator==(const DatasetManifest&) const = default;
};

/// Parses a manifest; relative paths are resolved against `base_dir`.
inline DatasetManifest parse_manifest(std::istream& is, const std::filesystem::path& base_dir = {}) {
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return (path.is_absolute() || base_dir.empty() ? path : base_dir / path).string();
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (f.size() != 5) throw ParseError("expected 5 tab-separated fields, found " + std::to_string(f.size()), lineno);
    ManifestRecord r;
    r.id = f[0];
    r.category = f[1];
    r.points_path = resolve(f[2]);
    if (f[3] != "-") r.labels_path = resolve(f[3]);
    try {
      r.split = parse_split(f[4]);
    } catch (const InvalidArgument& e) {
      throw ParseError(e.what(), lineno);
    }
    if (r.id.empty() || r.points_path.empty()) throw ParseError("empty id or points path", lineno);
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

inline void print_manifest(std::ostream& os, const DatasetManifest& m) {
  for (const auto& r : m.records)
    os << r.id << '\t' << r.category << '\t' << r.points_path << '\t' << r.labels_path.value_or("-") << '\t'
       << to_string(r.split) << '\n';
}

/// Loads a manifest file and checks that every referenced file exists.
inline DatasetManifest load_manifest(const std::string& path) {
  auto is = detail::open_in(path);
  DatasetManifest m;
  try {
    m = parse_manifest(is, std::filesystem::path(path).parent_path());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.line());
  }
  for (const auto& r : m.records) {
    if (!std::filesystem::exists(r.points_path)) throw Error("missing points file '" + r.points_path + "'");
    if (r.labels_path && !std::filesystem::exists(*r.labels_path))
      throw Error("missing labels file '" + *r.labels_path + "'");
  }
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  auto os = detail::open_out(path);
  print_manifest(os, m);
}

/// Seeded partition: round(fraction * n) records go to train, the rest to
/// test. Each side keeps manifest order and has its split field rewritten.
inline std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& m, double fraction,
                                                                 std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidArgument("split fraction must lie in [0, 1]");
  const std::size_t n = m.records.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<bool> is_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = true;
  DatasetManifest train, test;
  for (std::size_t i = 0; i < n; ++i) {
    ManifestRecord r = m.records[i];
    r.split = is_train[i] ? Split::Train : Split::Test;
    (is_train[i] ? train : test).records.push_back(std::move(r));
  }
  return {std::move(train), std::move(test)};
}

/// Loaded shapes of one manifest selection, parallel to `records`.
struct LoadedShapes {
  std::vector<ManifestRecord> records;
  std::vector<PointCloud> clouds;
  std::vector<std::optional<LabeledPointCloud>> labeled;

  /// The label space shared by every labeled shape (max label + 1).
  int part_count() const {
    int parts = 0;
    for (const auto& l : labeled)
      if (l) parts = std::max(parts, l->part_count());
    return parts;
  }
};

/// Loads every record; labeled shapes share the union label space.
inline LoadedShapes load_shapes(const std::vector<ManifestRecord>& records) {
  LoadedShapes out;
  out.records = records;
  std::vector<Labels> raw(records.size());
  int parts = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    out.clouds.push_back(load_points(records[i].points_path));
    if (records[i].labels_path) {
      raw[i] = load_labels(*records[i].labels_path);
      if (raw[i].size() != out.clouds.back().size())
        throw LengthMismatch("'" + *records[i].labels_path + "' has " + std::to_string(raw[i].size()) +
                             " labels for " + std::to_string(out.clouds.back().size()) + " points");
      for (int l : raw[i]) parts = std::max(parts, l + 1);
    }
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].labels_path)
      out.labeled.emplace_back(LabeledPointCloud(out.clouds[i], raw[i], std::max(parts, 1)));
    else
      out.labeled.emplace_back(std::nullopt);
  }
  return out;
}

}  // namespace cycledeform
