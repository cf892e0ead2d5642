#include "oracles.hpp"

#include "wgfe/panel_io.hpp"

#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

using namespace wgfe;

namespace {

PanelDataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in);
}

template <class F>
Error caught(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e;
  }
  FAIL("expected an exception");
  return Error(ErrorCode::InvalidInput, "");
}

}  // namespace

TEST_CASE("well-formed two by two panel") {
  const PanelDataset d = parse("unit,time,y,x1\na,1,1.5,2\na,2,2.5,3\nb,1,-1,0\nb,2,0,1e-3\n");
  CHECK(d.n_units() == 2);
  CHECK(d.n_periods() == 2);
  CHECK(d.n_covariates() == 1);
  CHECK(d.outcomes()(1, 0) == -1.0);
  CHECK(d.covariate(0)(1, 1) == 1e-3);
  CHECK(d.unit_labels() == std::vector<std::string>{"a", "b"});
}

TEST_CASE("row order, label order and line endings") {
  // Units by first appearance, periods numerically.
  const PanelDataset d = parse("\xEF\xBB\xBFunit,time,y\r\nz,10,1\r\ny,2,2\r\nz,2,3\r\ny,10,4\r\n");
  CHECK(d.unit_labels() == std::vector<std::string>{"z", "y"});
  CHECK(d.period_labels() == std::vector<std::string>{"2", "10"});
  CHECK(d.outcomes()(0, 0) == 3.0);
  CHECK(d.outcomes()(1, 1) == 4.0);
  const PanelDataset s = parse("unit,time,y\n1,b,1\n1,a,2\n");
  CHECK(s.period_labels() == std::vector<std::string>{"a", "b"});
}

TEST_CASE("missing cell names the gap") {
  const Error e = caught([] { parse("unit,time,y\na,1,1\na,2,2\nb,1,3\n"); });
  CHECK(e.code() == ErrorCode::UnbalancedPanel);
  CHECK(std::string(e.what()).find("(b,2)") != std::string::npos);
}

TEST_CASE("duplicate cell") {
  CHECK(caught([] { parse("unit,time,y\na,1,1\na,1,2\n"); }).code() == ErrorCode::DuplicateCell);
  CHECK(caught([] { parse("unit,time,y\na,1,1\na,1.0,2\n"); }).code() == ErrorCode::DuplicateCell);
}

TEST_CASE("parse errors carry line and column") {
  try {
    parse("unit,time,y,x1\na,1,1,2\na,2,oops,3\n");
    FAIL("no throw");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(e.column() == 3);
    CHECK(e.code() == ErrorCode::ParseError);
  }
  try {
    parse("unit,time,y\na,1,1,7\n");
    FAIL("no throw");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse("id,time,y\n"), ParseError);
  CHECK_THROWS_AS(parse(""), ParseError);
  CHECK_THROWS_AS(parse("unit,time,y\n"), Error);
  CHECK_THROWS_AS(parse("unit,time,y\na,1,nan\n"), ParseError);
  CHECK_THROWS_AS(ingest_csv("/nonexistent/panel.csv"), Error);
}

TEST_CASE("emit then ingest reproduces the dataset") {
  std::mt19937_64 rng(3);
  for (int p = 0; p < 3; ++p) {
    const PanelDataset d = oracle::random_panel(7, 4, p, rng, 1e3);
    std::ostringstream out;
    emit_csv(d, out);
    const PanelDataset back = parse(out.str());
    CHECK(back.outcomes() == d.outcomes());
    for (int k = 0; k < p; ++k) CHECK(back.covariate(k) == d.covariate(k));
    CHECK(back.unit_labels() == d.unit_labels());
    CHECK(back.period_labels() == d.period_labels());
  }
}

TEST_CASE("truth labels follow the dataset's unit order") {
  const PanelDataset d = parse("unit,time,y\nb,1,1\na,1,2\nc,1,3\n");
  const std::string path = "test_panel_io_truth.csv";
  {
    std::ofstream f(path);
    f << "unit,group\na,2\nc,1\nb,1\n";
  }
  const GroupAssignment g = ingest_truth_csv(path, d);
  CHECK(g.labels() == std::vector<int>{0, 1, 0});
  CHECK(g.n_groups() == 2);
  {
    std::ofstream f(path);
    f << "unit,group\na,2\nb,1\n";
  }
  CHECK_THROWS_AS(ingest_truth_csv(path, d), Error);
  std::remove(path.c_str());
}
