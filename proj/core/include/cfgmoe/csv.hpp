#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cfgmoe/tensor.hpp"

namespace cfgmoe {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

/// Plain numeric matrix: one row per line, comma separated, no header.
void write_matrix_csv(const std::filesystem::path& path, const Tensor& matrix);
Tensor read_matrix_csv(const std::filesystem::path& path);

/// Small helper for headered tables whose cells are already formatted.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(std::vector<std::string> cells);
  std::string str() const;
  void write(const std::filesystem::path& path) const;

  const std::vector<std::vector<std::string>>& rows() const noexcept { return rows_; }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

void write_text_file(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace cfgmoe
