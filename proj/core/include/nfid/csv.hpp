#pragma once

// Record files. dq records: header `t,v_d,v_q,i_d,i_q`; raw three-phase
// records: header `t,v_a,v_b,v_c,i_a,i_b,i_c`, converted with the Park
// transform at the nominal frame angle. Numbers are written in the shortest
// form that reads back to the same double.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "nfid/signal.hpp"

namespace nfid::csv {

std::string format_double(double x);

/// Parses a full field as a double; throws InputError mentioning `where`.
double parse_double(std::string_view field, const std::string& where);

void write_dq(std::ostream& out, const DqSeries& series);
void write_dq(const std::filesystem::path& path, const DqSeries& series);

/// Errors name the file and the 1-based line.
DqSeries read_dq(const std::filesystem::path& path);
DqSeries read_dq(std::istream& in, const std::string& source);

DqSeries read_abc(const std::filesystem::path& path, double frame_omega = kNominalOmega);

/// Plain table writer for reports and overlays.
void write_table(const std::filesystem::path& path, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows);

}  // namespace nfid::csv
