#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef PODE_TEST_DATA_DIR
#define PODE_TEST_DATA_DIR "tests/data"
#endif

namespace pode::test {

inline std::filesystem::path pems_fixture() { return std::filesystem::path(PODE_TEST_DATA_DIR) / "pems_fixture.csv"; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Small traffic-like CSV: `days` days from 2017-03-01, one row per 5 minutes.
// Days in `short_days` lose one reading, days in `nan_days` get a NaN.
inline void write_pems_csv(const std::filesystem::path& path, int days, std::set<int> short_days,
                           std::set<int> nan_days, std::vector<std::string> sensors = {"1"}) {
  std::ofstream os(path);
  os << "timestamp,sensor_id,flow\n";
  for (const auto& sensor : sensors)
    for (int d = 0; d < days; ++d)
      for (int i = 0; i < 288; ++i) {
        if (short_days.count(d) && i == 17) continue;
        char ts[32];
        std::snprintf(ts, sizeof ts, "2017-03-%02dT%02d:%02d:00", d + 1, i / 12, (i % 12) * 5);
        os << ts << ',' << sensor << ',';
        if (nan_days.count(d) && i == 40) {
          os << "NaN\n";
        } else {
          os << 100.0 + 50.0 * std::sin(6.283185307179586 * i / 288.0) + d << '\n';
        }
      }
}

}  // namespace pode::test
