#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace m2h {

enum class System { kDnnTrs, kDnnAsr, kGan, kM2hGan };

inline constexpr System kAllSystems[] = {System::kDnnTrs, System::kDnnAsr, System::kGan, System::kM2hGan};

/// "DNN-TRS", "DNN-ASR", "GAN", "M2H-GAN".
std::string_view system_name(System system);
System parse_system(std::string_view name);

/// Metrics of one system for one seed. Accuracies are fractions in [0, 1].
struct SeedMetrics {
  std::uint64_t seed = 0;
  bool complete = true;
  std::string error;
  double dev = 0.0;
  double real_test = 0.0;
  double max_test = 0.0;

  friend bool operator==(const SeedMetrics&, const SeedMetrics&) = default;
};

struct AggregateRow {
  int seeds = 0;
  double mean_dev = 0.0;
  double mean_real_test = 0.0;
  double mean_max_test = 0.0;
  double std_real_test = 0.0;  // population standard deviation

  friend bool operator==(const AggregateRow&, const AggregateRow&) = default;
};

/// Means and population std of real_test over the complete seeds.
AggregateRow aggregate(std::span<const SeedMetrics> runs);

struct SystemReport {
  System system = System::kDnnTrs;
  std::vector<SeedMetrics> runs;
  AggregateRow summary;

  friend bool operator==(const SystemReport&, const SystemReport&) = default;
};

struct RunReport {
  std::vector<SystemReport> systems;

  bool complete() const;
  const SystemReport* find(System system) const;

  friend bool operator==(const RunReport&, const RunReport&) = default;
};

enum class ReportFormat { kText, kJson };

/// kText: aligned "Models | Data | Dev. | Real Test | Max Test | Std. Dev."
/// table, accuracies as percentages with one decimal, std with three.
/// kJson: the full report, readable by parse_report().
std::string render_report(const RunReport& report, ReportFormat format);
RunReport parse_report(std::string_view json_text);

}  // namespace m2h
