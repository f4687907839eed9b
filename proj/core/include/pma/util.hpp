// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>

namespace pma {

// All recoverable failures surface as pma::Error with a message suitable for
// verbatim propagation to the CLI user.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Shortest decimal representation that round-trips the exact double value.
std::string format_double(double v);

// Compensated (Neumaier) summation: faithfully rounded even for long inputs.
double neumaier_sum(std::span<const double> values);

// Hex-encoded SHA-256 of a file's contents.
std::string sha256_file(const std::filesystem::path& path);

// Parallelism cap: PMA_THREADS env var if set (>=1), else hardware_concurrency.
int thread_cap();

}  // namespace pma
