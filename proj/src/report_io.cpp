#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "vlmtta/metrics.hpp"

namespace vlmtta {

namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& field) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("report column '" + field + "' is not a number: '" + s + "'");
  }
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

const std::vector<std::string>& columns() {
  static const std::vector<std::string> cols = {
      "method_tag", "bundle_name", "config_hash", "seed",          "accuracy",
      "ece",        "auroc",       "n_evaluated", "per_class_accuracy", "evaluated_ids_digest"};
  return cols;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

std::string report_csv_header() {
  std::string out;
  for (const std::string& c : columns()) out += (out.empty() ? "" : ",") + c;
  return out;
}

std::string report_csv_row(const MetricReport& r) {
  std::string per_class;
  for (std::size_t k = 0; k < r.per_class_accuracy.size(); ++k)
    per_class += (k ? ";" : "") + fmt_double(r.per_class_accuracy[k]);
  std::ostringstream o;
  o << r.method_tag << ',' << r.bundle_name << ',' << r.config_hash << ',' << r.seed << ','
    << fmt_double(r.accuracy) << ',' << (r.ece ? fmt_double(*r.ece) : "") << ','
    << (r.auroc ? fmt_double(*r.auroc) : "") << ',' << r.n_evaluated << ',' << per_class << ','
    << r.evaluated_ids_digest;
  return o.str();
}

void write_reports_csv(std::ostream& out, const std::vector<MetricReport>& reports) {
  out << report_csv_header() << '\n';
  for (const MetricReport& r : reports) out << report_csv_row(r) << '\n';
}

std::vector<MetricReport> read_reports_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("report file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != report_csv_header()) throw FormatError("unexpected report header: " + line);
  std::vector<MetricReport> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != columns().size())
      throw FormatError("report line " + std::to_string(lineno) + " has " +
                        std::to_string(f.size()) + " fields, expected " +
                        std::to_string(columns().size()));
    MetricReport r;
    r.method_tag = f[0];
    r.bundle_name = f[1];
    r.config_hash = f[2];
    try {
      r.seed = std::stoull(f[3]);
      r.n_evaluated = std::stoull(f[7]);
    } catch (const std::exception&) {
      throw FormatError("report line " + std::to_string(lineno) + " has a malformed integer");
    }
    r.accuracy = parse_double(f[4], "accuracy");
    if (!f[5].empty()) r.ece = parse_double(f[5], "ece");
    if (!f[6].empty()) r.auroc = parse_double(f[6], "auroc");
    if (!f[8].empty())
      for (const std::string& v : split(f[8], ';'))
        r.per_class_accuracy.push_back(parse_double(v, "per_class_accuracy"));
    r.evaluated_ids_digest = f[9];
    out.push_back(std::move(r));
  }
  return out;
}

std::string render_markdown_table(const std::vector<MetricReport>& reports) {
  std::vector<std::string> methods, bundles;
  auto remember = [](std::vector<std::string>& v, const std::string& s) {
    for (const std::string& x : v)
      if (x == s) return;
    v.push_back(s);
  };
  // Repeated (method, bundle) pairs, e.g. several seeds, are averaged.
  std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> cells;
  for (const MetricReport& r : reports) {
    remember(methods, r.method_tag);
    remember(bundles, r.bundle_name);
    auto& c = cells[{r.method_tag, r.bundle_name}];
    c.first += r.accuracy;
    ++c.second;
  }
  std::ostringstream o;
  o << "| Method |";
  for (const std::string& b : bundles) o << ' ' << b << " |";
  o << " Avg. |\n|---|";
  for (std::size_t i = 0; i < bundles.size(); ++i) o << "---:|";
  o << "---:|\n";
  for (const std::string& m : methods) {
    o << "| " << m << " |";
    double total = 0.0;
    std::size_t present = 0;
    for (const std::string& b : bundles) {
      const auto it = cells.find({m, b});
      if (it == cells.end()) {
        o << " - |";
        continue;
      }
      const double acc = it->second.first / static_cast<double>(it->second.second);
      total += acc;
      ++present;
      o << ' ' << pct(acc) << " |";
    }
    o << ' ' << pct(total / static_cast<double>(present)) << " |\n";
  }
  return o.str();
}

}  // namespace vlmtta
