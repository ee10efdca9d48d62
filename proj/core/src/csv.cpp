#include "nfid/csv.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nfid/error.hpp"

namespace nfid::csv {

std::string format_double(double x) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  if (res.ec != std::errc()) throw Error("format_double: conversion failed");
  return std::string(buf.data(), res.ptr);
}

double parse_double(std::string_view field, const std::string& where) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) {
    field.remove_suffix(1);
  }
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw InputError(where + ": cannot parse number '" + std::string(field) + "'");
  }
  if (!std::isfinite(v)) throw InputError(where + ": non-finite value");
  return v;
}

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

// Reads numeric rows under an exact header.
std::vector<std::vector<double>> read_rows(std::istream& in, const std::string& source,
                                           const std::string& header) {
  std::string line;
  if (!std::getline(in, line)) throw InputError(source + ":1: empty file");
  if (strip_cr(line) != header) {
    throw InputError(source + ":1: expected header '" + header + "'");
  }
  const std::size_t cols = split(header).size();
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split(line);
    const std::string where = source + ":" + std::to_string(lineno);
    if (fields.size() != cols) {
      throw InputError(where + ": expected " + std::to_string(cols) + " fields, found " +
                       std::to_string(fields.size()));
    }
    std::vector<double> row(cols);
    for (std::size_t c = 0; c < cols; ++c) row[c] = parse_double(fields[c], where);
    rows.push_back(std::move(row));
  }
  if (rows.size() < 2) throw InputError(source + ": need at least two samples");
  return rows;
}

DqSeries make_series(std::vector<DqSample> samples, const std::string& source) {
  const double dt = samples[1].t - samples[0].t;
  try {
    return DqSeries(std::move(samples), dt);
  } catch (const InputError& e) {
    throw InputError(source + ": " + e.what());
  }
}

}  // namespace

void write_dq(std::ostream& out, const DqSeries& series) {
  out << "t,v_d,v_q,i_d,i_q\n";
  for (const auto& s : series.samples()) {
    out << format_double(s.t) << ',' << format_double(s.v.real()) << ','
        << format_double(s.v.imag()) << ',' << format_double(s.i.real()) << ','
        << format_double(s.i.imag()) << '\n';
  }
}

void write_dq(const std::filesystem::path& path, const DqSeries& series) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  write_dq(out, series);
  if (!out) throw InputError("write failed: " + path.string());
}

DqSeries read_dq(std::istream& in, const std::string& source) {
  const auto rows = read_rows(in, source, "t,v_d,v_q,i_d,i_q");
  std::vector<DqSample> samples;
  samples.reserve(rows.size());
  for (const auto& r : rows) samples.push_back({r[0], {r[1], r[2]}, {r[3], r[4]}});
  return make_series(std::move(samples), source);
}

DqSeries read_dq(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  return read_dq(in, path.string());
}

DqSeries read_abc(const std::filesystem::path& path, double frame_omega) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  const auto rows = read_rows(in, path.string(), "t,v_a,v_b,v_c,i_a,i_b,i_c");
  std::vector<DqSample> samples;
  samples.reserve(rows.size());
  for (const auto& r : rows) {
    const double angle = frame_omega * r[0];
    samples.push_back({r[0], park_transform({r[1], r[2], r[3]}, angle),
                       park_transform({r[4], r[5], r[6]}, angle)});
  }
  return make_series(std::move(samples), path.string());
}

void write_table(const std::filesystem::path& path, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << row[k];
    out << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
}

}  // namespace nfid::csv
