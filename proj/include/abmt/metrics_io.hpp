#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "abmt/common.hpp"

namespace abmt {

struct TrainRow {
  long step = 0;
  int update = 0;
  double mean_return = 0.0;
  double deliveries = 0.0;
  double collisions = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double approx_kl = 0.0;
};

inline constexpr const char* kTrainCsvHeader =
    "step,update,mean_return,deliveries,collisions,policy_loss,value_loss,"
    "entropy,clip_frac,approx_kl";

// Shortest round-trippable decimal encoding of a double.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  // Prefer the shorter form when it parses back exactly.
  for (int prec = 1; prec < 17; ++prec) {
    char probe[40];
    std::snprintf(probe, sizeof(probe), "%.*g", prec, x);
    if (std::strtod(probe, nullptr) == x) return probe;
  }
  return buf;
}

// Training metrics CSV: fixed header, UTF-8, LF line endings.
inline void write_train_csv(const std::string& path,
                            const std::vector<TrainRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write metrics CSV: " + path);
  out << kTrainCsvHeader << "\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.update << ',' << format_double(r.mean_return)
        << ',' << format_double(r.deliveries) << ','
        << format_double(r.collisions) << ',' << format_double(r.policy_loss)
        << ',' << format_double(r.value_loss) << ','
        << format_double(r.entropy) << ',' << format_double(r.clip_frac)
        << ',' << format_double(r.approx_kl) << '\n';
  }
  if (!out) throw IoError("write failed for metrics CSV: " + path);
}

inline std::vector<TrainRow> read_train_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open metrics CSV: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty metrics CSV: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTrainCsvHeader)
    throw IoError("unexpected metrics CSV header in " + path);
  std::vector<TrainRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 10)
      throw IoError("malformed metrics CSV row in " + path + ": " + line);
    TrainRow r;
    r.step = std::strtol(fields[0].c_str(), nullptr, 10);
    r.update = static_cast<int>(std::strtol(fields[1].c_str(), nullptr, 10));
    r.mean_return = std::strtod(fields[2].c_str(), nullptr);
    r.deliveries = std::strtod(fields[3].c_str(), nullptr);
    r.collisions = std::strtod(fields[4].c_str(), nullptr);
    r.policy_loss = std::strtod(fields[5].c_str(), nullptr);
    r.value_loss = std::strtod(fields[6].c_str(), nullptr);
    r.entropy = std::strtod(fields[7].c_str(), nullptr);
    r.clip_frac = std::strtod(fields[8].c_str(), nullptr);
    r.approx_kl = std::strtod(fields[9].c_str(), nullptr);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace abmt
