#pragma once

// Minimal CSV writer with fixed 17-significant-digit number formatting.

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "qshadow/error.hpp"

namespace qshadow {

/// Decimal text of v with 17 significant digits ("nan"/"inf" spelled out).
std::string format_number(double v);

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);

  CsvWriter& operator<<(double v);
  CsvWriter& operator<<(long v);
  CsvWriter& operator<<(int v) { return *this << static_cast<long>(v); }
  CsvWriter& operator<<(bool v);
  CsvWriter& operator<<(const std::string& v);
  CsvWriter& operator<<(const char* v) { return *this << std::string(v); }
  /// Terminates the current row.
  void end_row();

 private:
  void sep();
  std::ofstream out_;
  bool row_started_ = false;
};

}  // namespace qshadow
