#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "patrac/mask.hpp"
#include "patrac/network.hpp"

namespace patrac {

// Doubles are serialised with 17 significant digits, which round-trips
// every finite double exactly.
inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// Short human-facing form for labels; not round-trip exact.
inline std::string format_short(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", x);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(std::uint8_t(s[pos]))) ++pos;
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": not a number: '" + s + "'");
  }
}

inline long parse_long(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": not an integer: '" + s + "'");
  }
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(std::uint8_t(s[a]))) ++a;
  while (b > a && std::isspace(std::uint8_t(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// ---------------------------------------------------------------------------
// delimited text with one header row; '#' lines before the header carry
// file-level metadata

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header,
            const std::vector<std::string>& comments = {}) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    f_.open(path);
    if (!f_) throw ParseError("cannot open for writing: " + path.string());
    for (const auto& c : comments) f_ << "# " << c << '\n';
    write_row(header);
  }

  void write_row(const std::vector<std::string>& fields) {
    for (std::size_t k = 0; k < fields.size(); ++k) {
      if (k) f_ << ',';
      f_ << fields[k];
    }
    f_ << '\n';
  }

  void field(const std::string& s) {
    if (col_++) f_ << ',';
    f_ << s;
  }
  void field(double x) { field(format_double(x)); }
  void field(long x) { field(std::to_string(x)); }
  void field(int x) { field(std::to_string(x)); }
  void end_row() {
    f_ << '\n';
    col_ = 0;
  }

 private:
  std::ofstream f_;
  int col_ = 0;
};

struct CsvTable {
  std::vector<std::string> comments;  // leading '#' lines, marker stripped
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  static CsvTable load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open: " + path.string());
    CsvTable t;
    std::string line;
    long lineno = 0;
    bool have_header = false;
    while (std::getline(f, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (line[0] == '#') {
        if (!have_header) t.comments.push_back(trim(line.substr(1)));
        continue;
      }
      auto fields = split(line, ',');
      if (!have_header) {
        t.header = std::move(fields);
        have_header = true;
      } else {
        if (fields.size() != t.header.size())
          throw ParseError(path.string() + " line " + std::to_string(lineno) +
                           ": expected " + std::to_string(t.header.size()) + " fields, got " +
                           std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
      }
    }
    if (!have_header) throw ParseError(path.string() + ": missing header row");
    return t;
  }

  int column(const std::string& name) const {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return int(k);
    throw ParseError("missing column '" + name + "'");
  }
};

// ---------------------------------------------------------------------------
// flat key = value files with '#' comments; used for configs and manifests

class KeyValues {
 public:
  void set(const std::string& key, const std::string& value) {
    auto it = index_.find(key);
    if (it != index_.end()) {
      items_[it->second].second = value;
    } else {
      index_[key] = items_.size();
      items_.emplace_back(key, value);
    }
  }
  void set(const std::string& key, double v) { set(key, format_double(v)); }
  void set(const std::string& key, long v) { set(key, std::to_string(v)); }
  void set(const std::string& key, int v) { set(key, std::to_string(v)); }
  void set(const std::string& key, unsigned long long v) { set(key, std::to_string(v)); }
  void set(const std::string& key, bool v) { set(key, std::string(v ? "true" : "false")); }

  bool has(const std::string& key) const { return index_.count(key) > 0; }

  const std::string& raw(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw ConfigError("missing config key: " + key);
    return items_[it->second].second;
  }
  std::string get_string(const std::string& key) const { return raw(key); }
  double get_double(const std::string& key) const { return parse_double(raw(key), "key " + key); }
  long get_long(const std::string& key) const { return parse_long(raw(key), "key " + key); }
  unsigned long long get_u64(const std::string& key) const {
    try {
      return std::stoull(raw(key));
    } catch (const std::exception&) {
      throw ParseError("key " + key + ": not an unsigned integer: '" + raw(key) + "'");
    }
  }
  bool get_bool(const std::string& key) const {
    const std::string& v = raw(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ParseError("key " + key + ": not a boolean: '" + v + "'");
  }

  template <class T>
  T get_or(const std::string& key, T fallback) const;

  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open: " + path.string());
    KeyValues kv;
    std::string line;
    long lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ParseError(path.string() + " line " + std::to_string(lineno) +
                         ": expected 'key = value'");
      const std::string key = trim(t.substr(0, eq));
      if (key.empty())
        throw ParseError(path.string() + " line " + std::to_string(lineno) + ": empty key");
      kv.set(key, trim(t.substr(eq + 1)));
    }
    return kv;
  }

  void save(const std::filesystem::path& path,
            const std::vector<std::string>& header_comments = {}) const {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream f(path);
    if (!f) throw ParseError("cannot open for writing: " + path.string());
    for (const auto& c : header_comments) f << "# " << c << '\n';
    for (const auto& [k, v] : items_) f << k << " = " << v << '\n';
  }

 private:
  std::vector<std::pair<std::string, std::string>> items_;
  std::map<std::string, std::size_t> index_;
};

template <>
inline std::string KeyValues::get_or<std::string>(const std::string& key,
                                                  std::string fallback) const {
  return has(key) ? get_string(key) : fallback;
}
template <>
inline double KeyValues::get_or<double>(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}
template <>
inline long KeyValues::get_or<long>(const std::string& key, long fallback) const {
  return has(key) ? get_long(key) : fallback;
}
template <>
inline int KeyValues::get_or<int>(const std::string& key, int fallback) const {
  return has(key) ? int(get_long(key)) : fallback;
}
template <>
inline bool KeyValues::get_or<bool>(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

// ---------------------------------------------------------------------------
// shapes, parameters, masks, datasets

inline std::string shape_to_string(const NetworkShape& shape) {
  std::ostringstream os;
  for (std::size_t k = 0; k < shape.layer_sizes.size(); ++k) {
    if (k) os << ',';
    os << shape.layer_sizes[k];
  }
  return os.str();
}

inline std::vector<int> parse_int_list(const std::string& s, const std::string& where) {
  std::vector<int> out;
  for (const auto& tok : split(s, ','))
    out.push_back(int(parse_long(trim(tok), where)));
  return out;
}

inline std::string activations_to_string(const NetworkShape& shape) {
  std::ostringstream os;
  for (std::size_t k = 0; k < shape.activations.size(); ++k) {
    if (k) os << ',';
    os << to_string(shape.activations[k]);
  }
  return os.str();
}

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw ParseError("unknown activation: '" + s + "'");
}

inline NetworkShape shape_from_comments(const std::vector<std::string>& comments,
                                        const std::string& where) {
  std::optional<std::vector<int>> sizes;
  std::optional<std::vector<Activation>> acts;
  for (const auto& c : comments) {
    const auto col = c.find(':');
    if (col == std::string::npos) continue;
    const std::string key = trim(c.substr(0, col));
    const std::string val = trim(c.substr(col + 1));
    if (key == "layer_sizes") sizes = parse_int_list(val, where);
    if (key == "activations") {
      std::vector<Activation> a;
      for (const auto& tok : split(val, ',')) a.push_back(parse_activation(trim(tok)));
      acts = std::move(a);
    }
  }
  if (!sizes) throw ParseError(where + ": missing '# layer_sizes:' metadata");
  NetworkShape shape;
  shape.layer_sizes = *sizes;
  shape.activations = acts ? *acts : NetworkShape::mlp(*sizes).activations;
  shape.validate();
  return shape;
}

inline std::vector<std::string> shape_comments(const NetworkShape& shape) {
  return {"layer_sizes: " + shape_to_string(shape),
          "activations: " + activations_to_string(shape)};
}

inline void write_params(const std::filesystem::path& path, const NetworkShape& shape,
                         const ParamSet& params) {
  params.require_conforms(shape, "write_params");
  CsvWriter w(path, {"kind", "layer", "i", "j", "value"}, shape_comments(shape));
  for_each_coord(shape, [&](const ParamCoord& c, std::size_t flat) {
    w.field(std::string(c.kind == ParamCoord::weight ? "w" : "b"));
    w.field(c.layer);
    w.field(c.i);
    w.field(c.j);
    w.field(params[flat]);
    w.end_row();
  });
}

inline std::pair<NetworkShape, ParamSet> read_params(const std::filesystem::path& path) {
  const CsvTable t = CsvTable::load(path);
  const NetworkShape shape = shape_from_comments(t.comments, path.string());
  ParamSet params(shape);
  if (t.rows.size() != params.size())
    throw ParseError(path.string() + ": expected " + std::to_string(params.size()) +
                     " coordinate rows");
  const int kind = t.column("kind"), layer = t.column("layer"), ci = t.column("i"),
            cj = t.column("j"), cv = t.column("value");
  for (const auto& row : t.rows) {
    const int l = int(parse_long(row[std::size_t(layer)], path.string()));
    const int i = int(parse_long(row[std::size_t(ci)], path.string()));
    const double v = parse_double(row[std::size_t(cv)], path.string());
    if (row[std::size_t(kind)] == "w") {
      const int j = int(parse_long(row[std::size_t(cj)], path.string()));
      params.w(l, i, j) = v;
    } else {
      params.b(l, i) = v;
    }
  }
  return {shape, params};
}

// Flagged coordinates in enumeration order; the row order defines the draw
// archive's column order.
inline void write_mask(const std::filesystem::path& path, const NetworkShape& shape,
                       const BayesMask& mask) {
  mask.require_matches(shape, "write_mask");
  CsvWriter w(path, {"ordinal", "kind", "layer", "i", "j"}, shape_comments(shape));
  long ord = 0;
  for_each_coord(shape, [&](const ParamCoord& c, std::size_t flat) {
    if (!mask.is_bayes(flat)) return;
    w.field(ord++);
    w.field(std::string(c.kind == ParamCoord::weight ? "w" : "b"));
    w.field(c.layer);
    w.field(c.i);
    w.field(c.j);
    w.end_row();
  });
}

inline void write_permutations(const std::filesystem::path& path, const NetworkShape& shape,
                               const BayesMask& mask) {
  CsvWriter w(path, {"layer", "original", "rank"}, shape_comments(shape));
  for (int l = 1; l < int(mask.perms.size()); ++l) {
    const auto& p = mask.perms[std::size_t(l)];
    for (std::size_t i = 0; i < p.size(); ++i) {
      w.field(l);
      w.field(long(i + 1));
      w.field(long(p[i]));
      w.end_row();
    }
  }
}

inline BayesMask read_mask(const std::filesystem::path& mask_path,
                           const std::filesystem::path& perms_path) {
  const CsvTable t = CsvTable::load(mask_path);
  const NetworkShape shape = shape_from_comments(t.comments, mask_path.string());
  BayesMask mask = BayesMask::none(shape);
  ParamSet layout(shape);
  const int kind = t.column("kind"), layer = t.column("layer"), ci = t.column("i"),
            cj = t.column("j");
  for (const auto& row : t.rows) {
    const int l = int(parse_long(row[std::size_t(layer)], mask_path.string()));
    const int i = int(parse_long(row[std::size_t(ci)], mask_path.string()));
    if (row[std::size_t(kind)] == "w") {
      const int j = int(parse_long(row[std::size_t(cj)], mask_path.string()));
      mask.flags[layout.w_index(l, i, j)] = 1;
    } else {
      mask.flags[layout.b_index(l, i)] = 1;
    }
  }
  mask.recount();
  const CsvTable pt = CsvTable::load(perms_path);
  const int pl = pt.column("layer"), po = pt.column("original"), pr = pt.column("rank");
  for (const auto& row : pt.rows) {
    const int l = int(parse_long(row[std::size_t(pl)], perms_path.string()));
    const int orig = int(parse_long(row[std::size_t(po)], perms_path.string()));
    const int rank = int(parse_long(row[std::size_t(pr)], perms_path.string()));
    auto& perm = mask.perms[std::size_t(l)];
    if (orig < 1 || orig > int(perm.size()))
      throw ParseError(perms_path.string() + ": node index out of range");
    perm[std::size_t(orig - 1)] = rank;
  }
  return mask;
}

inline void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::vector<std::string> header;
  for (int k = 1; k <= data.input_dim; ++k) header.push_back("x" + std::to_string(k));
  for (int k = 1; k <= data.output_dim; ++k) header.push_back("y" + std::to_string(k));
  CsvWriter w(path, header);
  for (std::size_t n = 0; n < data.size(); ++n) {
    for (double x : data.input(n)) w.field(x);
    for (double y : data.target(n)) w.field(y);
    w.end_row();
  }
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  const CsvTable t = CsvTable::load(path);
  Dataset d;
  for (const auto& name : t.header) {
    if (name.starts_with("x"))
      ++d.input_dim;
    else if (name.starts_with("y"))
      ++d.output_dim;
    else
      throw ParseError(path.string() + ": unexpected column '" + name + "'");
  }
  if (d.input_dim == 0 || d.output_dim == 0)
    throw ParseError(path.string() + ": need x* and y* columns");
  for (const auto& row : t.rows) {
    for (int k = 0; k < d.input_dim; ++k)
      d.inputs.push_back(parse_double(row[std::size_t(k)], path.string()));
    for (int k = 0; k < d.output_dim; ++k)
      d.targets.push_back(parse_double(row[std::size_t(d.input_dim + k)], path.string()));
  }
  return d;
}

}  // namespace patrac
