#include "m2h/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "m2h/error.hpp"

namespace m2h {

using nlohmann::json;

std::string_view system_name(System system) {
  switch (system) {
    case System::kDnnTrs:
      return "DNN-TRS";
    case System::kDnnAsr:
      return "DNN-ASR";
    case System::kGan:
      return "GAN";
    case System::kM2hGan:
      return "M2H-GAN";
  }
  return "?";
}

System parse_system(std::string_view name) {
  for (System s : kAllSystems) {
    if (system_name(s) == name) return s;
  }
  throw ConfigError("unknown system '" + std::string(name) + "'");
}

AggregateRow aggregate(std::span<const SeedMetrics> runs) {
  AggregateRow row;
  for (const auto& r : runs) {
    if (!r.complete) continue;
    ++row.seeds;
    row.mean_dev += r.dev;
    row.mean_real_test += r.real_test;
    row.mean_max_test += r.max_test;
  }
  if (row.seeds == 0) return row;
  const double n = row.seeds;
  row.mean_dev /= n;
  row.mean_real_test /= n;
  row.mean_max_test /= n;
  double ss = 0.0;
  for (const auto& r : runs) {
    if (r.complete) ss += (r.real_test - row.mean_real_test) * (r.real_test - row.mean_real_test);
  }
  row.std_real_test = std::sqrt(ss / n);
  return row;
}

bool RunReport::complete() const {
  return std::all_of(systems.begin(), systems.end(), [](const SystemReport& s) {
    return std::all_of(s.runs.begin(), s.runs.end(), [](const SeedMetrics& m) { return m.complete; });
  });
}

const SystemReport* RunReport::find(System system) const {
  for (const auto& s : systems) {
    if (s.system == system) return &s;
  }
  return nullptr;
}

namespace {

std::string fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

std::string render_text(const RunReport& report) {
  using Row = std::array<std::string, 6>;
  std::vector<Row> rows{{"Models", "Data", "Dev.", "Real Test", "Max Test", "Std. Dev."}};
  std::vector<std::string> notes;
  for (const auto& s : report.systems) {
    const bool trs = s.system == System::kDnnTrs;
    const std::string model = (s.system == System::kDnnTrs || s.system == System::kDnnAsr)
                                  ? "DNN"
                                  : std::string(system_name(s.system));
    const auto& a = s.summary;
    if (a.seeds == 0) {
      rows.push_back({model, trs ? "TRS" : "ASR", "-", "-", "-", "-"});
    } else {
      rows.push_back({model, trs ? "TRS" : "ASR", fixed(100 * a.mean_dev, 1), fixed(100 * a.mean_real_test, 1),
                      fixed(100 * a.mean_max_test, 1), fixed(a.std_real_test, 3)});
    }
    for (const auto& r : s.runs) {
      if (!r.complete) {
        notes.push_back(std::string(system_name(s.system)) + " seed " + std::to_string(r.seed) +
                        " incomplete: " + r.error);
      }
    }
  }

  std::array<std::size_t, 6> width{};
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) out += " | ";
      out += row[c];
      if (c + 1 < row.size()) out.append(width[c] - row[c].size(), ' ');
    }
    out += '\n';
  }
  for (const auto& note : notes) out += "# " + note + '\n';
  return out;
}

}  // namespace

std::string render_report(const RunReport& report, ReportFormat format) {
  if (format == ReportFormat::kText) return render_text(report);

  json systems = json::array();
  for (const auto& s : report.systems) {
    json runs = json::array();
    for (const auto& r : s.runs) {
      runs.push_back({{"seed", r.seed},
                      {"complete", r.complete},
                      {"error", r.error},
                      {"dev", r.dev},
                      {"real_test", r.real_test},
                      {"max_test", r.max_test}});
    }
    const auto& a = s.summary;
    systems.push_back({{"system", system_name(s.system)},
                       {"runs", std::move(runs)},
                       {"aggregate",
                        {{"seeds", a.seeds},
                         {"mean_dev", a.mean_dev},
                         {"mean_real_test", a.mean_real_test},
                         {"mean_max_test", a.mean_max_test},
                         {"std_real_test", a.std_real_test}}}});
  }
  json doc = {{"format", "m2h-report"}, {"version", 1}, {"systems", std::move(systems)}};
  return doc.dump(2) + '\n';
}

RunReport parse_report(std::string_view json_text) {
  RunReport report;
  try {
    const auto doc = json::parse(json_text);
    if (doc.at("format").get<std::string>() != "m2h-report") throw ParseError("not an m2h report", 0);
    if (doc.at("version").get<int>() != 1) throw ParseError("unsupported report version", 0);
    for (const auto& s : doc.at("systems")) {
      SystemReport sr;
      sr.system = parse_system(s.at("system").get<std::string>());
      for (const auto& r : s.at("runs")) {
        SeedMetrics m;
        m.seed = r.at("seed").get<std::uint64_t>();
        m.complete = r.at("complete").get<bool>();
        m.error = r.at("error").get<std::string>();
        m.dev = r.at("dev").get<double>();
        m.real_test = r.at("real_test").get<double>();
        m.max_test = r.at("max_test").get<double>();
        sr.runs.push_back(std::move(m));
      }
      const auto& a = s.at("aggregate");
      sr.summary.seeds = a.at("seeds").get<int>();
      sr.summary.mean_dev = a.at("mean_dev").get<double>();
      sr.summary.mean_real_test = a.at("mean_real_test").get<double>();
      sr.summary.mean_max_test = a.at("mean_max_test").get<double>();
      sr.summary.std_real_test = a.at("std_real_test").get<double>();
      report.systems.push_back(std::move(sr));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed report: ") + e.what(), 0);
  }
  return report;
}

}  // namespace m2h
