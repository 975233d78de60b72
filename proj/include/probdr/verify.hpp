#pragma once

#include <string>
#include <vector>

namespace probdr::verify {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  double residual = 0.0;   // worst observed value of the checked quantity
  double tolerance = 0.0;
};

std::vector<std::string> suite_names();  // linalg, graph, objective, block

// Runs one suite, or every suite for "all". Throws InvalidParameter for an
// unknown suite name.
std::vector<CheckResult> run_suite(const std::string& suite);

}  // namespace probdr::verify
