#include "fruitnet/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "fruitnet/errors.hpp"

namespace fruitnet {

EvalReport classification_report(const ConfusionMatrix& m, std::vector<std::string> names) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw ConfigError("confusion matrix must be square and nonempty, got " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()));
  }
  if ((m.array() < 0).any()) throw ConfigError("confusion matrix has negative entries");
  const auto k = static_cast<std::size_t>(m.rows());
  if (names.empty()) {
    for (std::size_t c = 0; c < k; ++c) names.push_back("class_" + std::to_string(c));
  }
  if (names.size() != k) throw ConfigError("class name count does not match the confusion matrix");
  EvalReport r;
  r.class_names = std::move(names);
  r.confusion = m;
  for (Eigen::Index c = 0; c < m.rows(); ++c) {
    const std::int64_t tp = m(c, c);
    const std::int64_t row = m.row(c).sum();
    const std::int64_t col = m.col(c).sum();
    r.per_class.push_back({{tp, col}, {tp, row}, {2 * tp, row + col}, row});
  }
  r.accuracy = {m.trace(), m.sum()};
  return r;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted, int k) {
  if (truth.size() != predicted.size()) throw ShapeError("label and prediction counts differ");
  ConfusionMatrix m = ConfusionMatrix::Zero(k, k);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= k || predicted[i] < 0 || predicted[i] >= k) {
      throw ConfigError("class index out of range in confusion counting");
    }
    ++m(truth[i], predicted[i]);
  }
  return m;
}

namespace {

std::string grid(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size(), 0);
  auto widen = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  };
  widen(header);
  for (const auto& row : rows) widen(row);
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::string pad(width[c] - row[c].size(), ' ');
      // First column left-aligned, numbers right-aligned.
      os << (c ? "  " : "") << (c ? pad + row[c] : row[c] + pad);
    }
    os << '\n';
  };
  emit(header);
  for (const auto& row : rows) emit(row);
  return os.str();
}

std::string pct(const Ratio& r) { return std::to_string(r.percent()) + "%"; }

}  // namespace

std::string render_text(const EvalReport& r) {
  std::vector<std::string> header{""};
  header.insert(header.end(), r.class_names.begin(), r.class_names.end());
  std::vector<std::vector<std::string>> rows(4);
  rows[0] = {"precision"};
  rows[1] = {"recall"};
  rows[2] = {"f1-score"};
  rows[3] = {"support"};
  for (const auto& m : r.per_class) {
    rows[0].push_back(pct(m.precision));
    rows[1].push_back(pct(m.recall));
    rows[2].push_back(pct(m.f1));
    rows[3].push_back(std::to_string(m.support));
  }
  std::vector<std::vector<std::string>> conf;
  for (Eigen::Index i = 0; i < r.confusion.rows(); ++i) {
    conf.push_back({r.class_names[static_cast<std::size_t>(i)]});
    for (Eigen::Index j = 0; j < r.confusion.cols(); ++j) conf.back().push_back(std::to_string(r.confusion(i, j)));
  }
  std::ostringstream os;
  os << "Classification report\n" << grid(header, rows) << '\n';
  os << "Confusion matrix (rows: true, columns: predicted)\n" << grid(header, conf) << '\n';
  char acc[32];
  std::snprintf(acc, sizeof acc, "%.1f%%", 100.0 * r.accuracy.value());
  os << "accuracy " << acc << " (" << r.accuracy.num << "/" << r.accuracy.den << ")\n";
  return os.str();
}

namespace {

nlohmann::ordered_json ratio_json(const Ratio& r) {
  nlohmann::ordered_json j;
  j["num"] = r.num;
  j["den"] = r.den;
  j["percent"] = r.percent();
  return j;
}

}  // namespace

std::string render_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["class_names"] = r.class_names;
  auto& conf = j["confusion"] = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < r.confusion.rows(); ++i) {
    std::vector<std::int64_t> row(r.confusion.row(i).begin(), r.confusion.row(i).end());
    conf.push_back(row);
  }
  auto& classes = j["classes"] = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    nlohmann::ordered_json e;
    e["name"] = r.class_names[c];
    e["precision"] = ratio_json(m.precision);
    e["recall"] = ratio_json(m.recall);
    e["f1"] = ratio_json(m.f1);
    e["support"] = m.support;
    classes.push_back(e);
  }
  j["accuracy"] = ratio_json(r.accuracy);
  j["total"] = r.total();
  return j.dump(2) + "\n";
}

EvalReport parse_json_report(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const auto names = j.at("class_names").get<std::vector<std::string>>();
    const auto rows = j.at("confusion").get<std::vector<std::vector<std::int64_t>>>();
    ConfusionMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.size()) throw FormatError("report confusion matrix is not square");
      for (std::size_t c = 0; c < rows.size(); ++c) {
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
      }
    }
    EvalReport r = classification_report(m, names);
    auto ratio = [](const nlohmann::json& e) { return Ratio{e.at("num").get<std::int64_t>(), e.at("den").get<std::int64_t>()}; };
    const auto& classes = j.at("classes");
    if (classes.size() != r.per_class.size()) throw FormatError("report class count mismatch");
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const ClassMetrics stored{ratio(classes[c].at("precision")), ratio(classes[c].at("recall")),
                                ratio(classes[c].at("f1")), classes[c].at("support").get<std::int64_t>()};
      if (!(stored == r.per_class[c])) {
        throw FormatError("stored metrics of class '" + names[c] + "' disagree with its confusion counts");
      }
    }
    if (!(ratio(j.at("accuracy")) == r.accuracy)) throw FormatError("stored accuracy disagrees with the confusion counts");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report JSON: ") + e.what());
  }
}

void export_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << (format == ReportFormat::kJson ? render_json(report) : render_text(report));
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

}  // namespace fruitnet
