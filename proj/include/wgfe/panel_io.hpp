#pragma once

// Long-format panel CSV: header `unit,time,y,x1,...,xp`, one row per cell.

#include "wgfe/errors.hpp"
#include "wgfe/panel.hpp"

#include <iosfwd>
#include <string>

namespace wgfe {

class ParseError : public Error {
 public:
  ParseError(int line, int column, const std::string& what);
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

/// Units keep first-appearance order; periods sort numerically when every
/// label parses as a number, lexicographically otherwise. Throws ParseError,
/// Error(DuplicateCell) or Error(UnbalancedPanel) listing missing cells.
PanelDataset parse_csv(std::istream& in);
PanelDataset ingest_csv(const std::string& path);

/// Writes rows in unit-major order using the dataset's labels; numbers are
/// printed with round-trip precision.
void emit_csv(const PanelDataset& data, std::ostream& out);
void emit_csv(const PanelDataset& data, const std::string& path);

/// Two-column `unit,group` file with 1-based groups, reordered to the
/// dataset's unit order. `n_groups` is the largest label seen.
GroupAssignment ingest_truth_csv(const std::string& path, const PanelDataset& data);

}  // namespace wgfe
