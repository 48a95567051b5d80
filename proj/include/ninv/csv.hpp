#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

namespace ninv {

using CsvValue = std::variant<std::int64_t, double, std::string>;
using CsvRow = std::vector<CsvValue>;

enum class CsvType { Integer, Real, Text };

struct CsvColumn {
  std::string name;
  CsvType type = CsvType::Real;
};

struct CsvSchema {
  std::vector<CsvColumn> columns;
  // Throws ContractError if the row has the wrong arity or a mistyped cell.
  void check(const CsvRow& row) const;
};

/// Reals use 9 significant digits; fields with a comma, quote or newline
/// are quoted with doubled inner quotes.
std::string csv_field(const CsvValue& value);

/// Streams rows to a file; the header is written on construction.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, CsvSchema schema);
  void write(const CsvRow& row);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  CsvSchema schema_;
  std::ofstream out_;
};

void write_csv(const std::vector<CsvRow>& rows, const CsvSchema& schema, const std::filesystem::path& path);

}  // namespace ninv
