#include "coml/io.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "coml/errors.hpp"

namespace coml::io {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, std::size_t line) {
  if (s.empty()) throw ParseError("empty numeric field", line);
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE) {
    throw ParseError("malformed number '" + s + "'", line);
  }
  if (!std::isfinite(v)) throw ParseError("non-finite number '" + s + "'", line);
  return v;
}

std::size_t parse_size(const std::string& s, std::size_t line) {
  if (s.empty() || s[0] == '-' || s[0] == '+') {
    throw ParseError("malformed integer '" + s + "'", line);
  }
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size() || errno == ERANGE) {
    throw ParseError("malformed integer '" + s + "'", line);
  }
  return static_cast<std::size_t>(v);
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw ParseError(source.string() + ": missing column '" + name + "'", 1);
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  return parse_double(rows[row][col], lines[row]);
}

std::size_t CsvTable::integer(std::size_t row, std::size_t col) const {
  return parse_size(rows[row][col], lines[row]);
}

CsvTable read_csv(const fs::path& path,
                  const std::vector<std::string>& expected_header) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  CsvTable t;
  t.source = path;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = strip_cr(line);
    if (n == 1) {
      t.header = split(line, ',');
      if (!expected_header.empty() && t.header != expected_header) {
        throw ParseError(path.string() + ": unexpected header '" + line + "'", 1);
      }
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> fields = split(line, ',');
    if (fields.size() != t.header.size()) {
      throw ParseError(path.string() + ": expected " +
                           std::to_string(t.header.size()) + " fields, found " +
                           std::to_string(fields.size()),
                       n);
    }
    t.rows.push_back(std::move(fields));
    t.lines.push_back(n);
  }
  if (n == 0) throw ParseError(path.string() + ": empty file", 0);
  return t;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::string s;
  auto line = [&s](const std::vector<std::string>& f) {
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (i) s += ',';
      s += f[i];
    }
    s += '\n';
  };
  line(header);
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw ShapeError("csv row width mismatch");
    line(r);
  }
  write_text(path, s);
}

const std::vector<std::string>& trajectory_header() {
  static const std::vector<std::string> h{"t",    "x",      "y",  "phi", "xdot",
                                          "ydot", "phidot", "u1", "u2",  "u3"};
  return h;
}

void save_trajectory(const fs::path& path, const ensemble::TrajectoryLog& log) {
  log.validate();
  std::vector<std::vector<std::string>> rows;
  rows.reserve(log.t.size());
  for (std::size_t k = 0; k < log.t.size(); ++k) {
    std::vector<std::string> r{format_double(log.t[k])};
    for (int c = 0; c < 6; ++c) r.push_back(format_double(log.x[k][c]));
    for (int c = 0; c < 3; ++c) r.push_back(format_double(log.u[k][c]));
    rows.push_back(std::move(r));
  }
  write_csv(path, trajectory_header(), rows);
}

ensemble::TrajectoryLog load_trajectory(const fs::path& path, std::size_t id) {
  const CsvTable t = read_csv(path, trajectory_header());
  ensemble::TrajectoryLog log;
  log.id = id;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    log.t.push_back(t.number(r, 0));
    pfar::Vec6 x;
    for (int c = 0; c < 6; ++c) x[c] = t.number(r, 1 + c);
    pfar::Vec3 u;
    for (int c = 0; c < 3; ++c) u[c] = t.number(r, 7 + c);
    log.x.push_back(x);
    log.u.push_back(u);
    if (r > 0 && !(log.t[r] > log.t[r - 1])) {
      throw ParseError(path.string() + ": time column is not strictly increasing",
                       t.lines[r]);
    }
  }
  return log;
}

void Checkpoint::set_meta(const std::string& key, const std::string& value) {
  if (key.find_first_of(" \n=") != std::string::npos ||
      value.find('\n') != std::string::npos) {
    throw Error("checkpoint metadata must be single-line key=value text");
  }
  for (auto& kv : meta) {
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  }
  meta.emplace_back(key, value);
}

bool Checkpoint::has_meta(const std::string& key) const {
  for (const auto& kv : meta)
    if (kv.first == key) return true;
  return false;
}

const std::string& Checkpoint::get_meta(const std::string& key) const {
  for (const auto& kv : meta)
    if (kv.first == key) return kv.second;
  throw Error("checkpoint has no metadata '" + key + "'");
}

void Checkpoint::add(const std::string& name, ad::Tensor t) {
  if (name.empty() || name.find_first_of(" \n") != std::string::npos) {
    throw Error("invalid checkpoint array name '" + name + "'");
  }
  if (has(name)) throw Error("duplicate checkpoint array '" + name + "'");
  arrays.emplace_back(name, std::move(t));
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.first == name) return true;
  return false;
}

const ad::Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.first == name) return a.second;
  throw Error("checkpoint has no array '" + name + "'");
}

const ad::Tensor& Checkpoint::get(const std::string& name,
                                  const ad::Shape& expected) const {
  const ad::Tensor& t = get(name);
  if (!(t.shape() == expected)) {
    throw ShapeError("checkpoint array '" + name + "' has shape " +
                     t.shape().str() + ", expected " + expected.str());
  }
  return t;
}

// Layout:
//   coml-checkpoint 1
//   meta <key>=<value>
//   array <name> <rank> <dims...>
//   <one line per row of the last axis>
//   end
void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  std::string s = "coml-checkpoint 1\n";
  for (const auto& [k, v] : ckpt.meta) s += "meta " + k + "=" + v + "\n";
  for (const auto& [name, t] : ckpt.arrays) {
    s += "array " + name + " " + std::to_string(t.shape().rank());
    for (std::size_t d : t.shape().dims()) s += " " + std::to_string(d);
    s += "\n";
    const std::size_t cols = t.shape().rank() ? t.cols() : 1;
    for (std::size_t i = 0; i < t.size(); ++i) {
      s += format_double(t[i]);
      s += ((i + 1) % cols == 0) ? '\n' : ' ';
    }
  }
  s += "end\n";
  write_text(path, s);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Checkpoint ck;
  std::string line;
  std::size_t n = 0;
  auto next = [&](std::string& out) {
    if (!std::getline(in, out)) return false;
    out = strip_cr(out);
    ++n;
    return true;
  };
  if (!next(line) || line != "coml-checkpoint 1") {
    throw ParseError(path.string() + ": not a checkpoint", 1);
  }
  bool ended = false;
  while (next(line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    if (line.rfind("meta ", 0) == 0) {
      const std::string kv = line.substr(5);
      const std::size_t eq = kv.find('=');
      if (eq == std::string::npos) throw ParseError("malformed metadata", n);
      ck.meta.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
      continue;
    }
    if (line.rfind("array ", 0) != 0) throw ParseError("unexpected line", n);
    std::istringstream hs(line.substr(6));
    std::string name;
    std::size_t rank = 0;
    if (!(hs >> name >> rank) || rank > ad::Shape::kMaxRank) {
      throw ParseError("malformed array header", n);
    }
    std::vector<std::size_t> dims(rank);
    for (std::size_t& d : dims)
      if (!(hs >> d)) throw ParseError("malformed array dims", n);
    std::string extra;
    if (hs >> extra) throw ParseError("trailing text in array header", n);
    const ad::Shape shape(dims);
    const std::size_t cols = rank ? shape.last() : 1;
    const std::size_t nrows = cols ? shape.numel() / cols : 0;
    std::vector<double> vals;
    vals.reserve(shape.numel());
    for (std::size_t r = 0; r < nrows; ++r) {
      if (!next(line)) throw ParseError("truncated array '" + name + "'", n);
      const std::vector<std::string> f = split(line, ' ');
      if (f.size() != cols) {
        throw ParseError("array '" + name + "' row has " + std::to_string(f.size()) +
                             " values, expected " + std::to_string(cols),
                         n);
      }
      for (const std::string& v : f) vals.push_back(parse_double(v, n));
    }
    ck.add(name, ad::Tensor(shape, std::move(vals)));
  }
  if (!ended) throw ParseError(path.string() + ": missing end marker", n);
  return ck;
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace coml::io
