#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "coml/ad/tensor.hpp"
#include "coml/ensemble.hpp"

namespace coml::io {

namespace fs = std::filesystem;

// Shortest text that reads back to the same double: 17 significant digits.
std::string format_double(double v);
// Strict parse of a whole field; throws ParseError with `line`.
double parse_double(const std::string& s, std::size_t line);
std::size_t parse_size(const std::string& s, std::size_t line);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // 1-based source line of each row
  fs::path source;

  std::size_t column(const std::string& name) const;
  double number(std::size_t row, std::size_t col) const;
  std::size_t integer(std::size_t row, std::size_t col) const;
};

// Rejects rows whose field count differs from the header. If
// `expected_header` is non-empty it must match exactly.
CsvTable read_csv(const fs::path& path,
                  const std::vector<std::string>& expected_header = {});
void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// t, x, y, phi, xdot, ydot, phidot, u1, u2, u3
const std::vector<std::string>& trajectory_header();
void save_trajectory(const fs::path& path, const ensemble::TrajectoryLog& log);
ensemble::TrajectoryLog load_trajectory(const fs::path& path, std::size_t id);

// Named arrays plus string metadata, saved as text.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, ad::Tensor>> arrays;

  void set_meta(const std::string& key, const std::string& value);
  const std::string& get_meta(const std::string& key) const;
  bool has_meta(const std::string& key) const;
  void add(const std::string& name, ad::Tensor t);
  bool has(const std::string& name) const;
  // Throws ShapeError if the stored shape differs from `expected`.
  const ad::Tensor& get(const std::string& name, const ad::Shape& expected) const;
  const ad::Tensor& get(const std::string& name) const;
};

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const fs::path& path);

// Writes atomically via a temporary file in the same directory.
void write_text(const fs::path& path, const std::string& content);
std::string read_text(const fs::path& path);

}  // namespace coml::io
