#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace matter {

struct CriterionResult {
  std::string id;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  std::filesystem::path work_dir = "acceptance_work";
  // Criteria to run ("A1".."A9"); empty means all.
  std::vector<std::string> only;
  std::function<void(const std::string&)> log;
};

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options);

// "A5 PASS  <detail>  (12.3 s)"
std::string format_result(const CriterionResult& r);

}  // namespace matter
