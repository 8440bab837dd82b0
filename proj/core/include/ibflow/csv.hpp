#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ibflow::csv {

inline constexpr const char* kVersionLine = "# ibflow-csv v1";

// Shortest decimal text that round-trips the double exactly.
std::string format(double value);

void write_header(std::ostream& out, const std::vector<std::string>& columns);
void write_row(std::ostream& out, const std::vector<double>& values);

void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m);
// Skips lines starting with '#' and a leading row of column names. Rows must have equal length.
Eigen::MatrixXd read_matrix(const std::filesystem::path& path);

}  // namespace ibflow::csv
