#include "ninv/csv.hpp"

#include <cstdio>

#include "ninv/errors.hpp"

namespace ninv {

void CsvSchema::check(const CsvRow& row) const {
  if (row.size() != columns.size()) {
    throw ContractError("csv row has " + std::to_string(row.size()) + " fields, schema has " +
                        std::to_string(columns.size()));
  }
  for (std::size_t i = 0; i < row.size(); ++i) {
    const auto expected = static_cast<std::size_t>(columns[i].type);
    if (row[i].index() != expected) throw ContractError("csv column '" + columns[i].name + "' has the wrong type");
  }
}

namespace {

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

std::string csv_field(const CsvValue& value) {
  if (const auto* i = std::get_if<std::int64_t>(&value)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&value)) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", *d);
    return buf;
  }
  return quote(std::get<std::string>(value));
}

CsvWriter::CsvWriter(const std::filesystem::path& path, CsvSchema schema)
    : path_(path), schema_(std::move(schema)), out_(path) {
  if (!out_) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < schema_.columns.size(); ++i) {
    out_ << (i ? "," : "") << quote(schema_.columns[i].name);
  }
  out_ << "\r\n";
}

void CsvWriter::write(const CsvRow& row) {
  schema_.check(row);
  for (std::size_t i = 0; i < row.size(); ++i) out_ << (i ? "," : "") << csv_field(row[i]);
  out_ << "\r\n";
  out_.flush();
  if (!out_) throw IoError("write failed on " + path_.string());
}

void write_csv(const std::vector<CsvRow>& rows, const CsvSchema& schema, const std::filesystem::path& path) {
  for (const auto& row : rows) schema.check(row);
  CsvWriter writer(path, schema);
  for (const auto& row : rows) writer.write(row);
}

}  // namespace ninv
