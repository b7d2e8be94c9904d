#include "volsynth/ingest.hpp"

#include "volsynth/error.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

namespace volsynth {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string::npos) {
            cells.push_back(trim(std::string_view(line).substr(start)));
            break;
        }
        cells.push_back(trim(std::string_view(line).substr(start, pos - start)));
        start = pos + 1;
    }
    return cells;
}

std::optional<double> parse_number(const std::string& cell) {
    if (cell.empty()) return std::nullopt;
    double value = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || !std::isfinite(value)) return std::nullopt;
    return value;
}

std::chrono::year_month_day parse_ymd(const std::string& date) {
    int y = 0;
    unsigned m = 0;
    unsigned d = 0;
    char dash1 = 0;
    char dash2 = 0;
    std::istringstream in(date);
    if (date.size() != 10 || !(in >> y >> dash1 >> m >> dash2 >> d) || dash1 != '-' || dash2 != '-') {
        throw DataError(fmt::format("invalid ISO-8601 date '{}'", date));
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw DataError(fmt::format("invalid calendar date '{}'", date));
    return ymd;
}

std::string format_ymd(const std::chrono::year_month_day& ymd) {
    return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(ymd.year()),
                       static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
}

double percent_log_return(double prev_close, double close) {
    return (std::log(close) - std::log(prev_close)) * 100.0;
}

}  // namespace

void check_iso_date(const std::string& date) { (void)parse_ymd(date); }

std::string format_double(double value) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) throw NumericalError("cannot format value");
    return std::string(buf, ptr);
}

Eigen::VectorXd demean(const Eigen::VectorXd& x) {
    if (x.size() == 0) return x;
    return (x.array() - x.mean()).matrix();
}

void MeasurePanel::validate() const {
    const auto T = rows();
    if (static_cast<std::size_t>(close.size()) != T || static_cast<std::size_t>(returns.size()) != T ||
        static_cast<std::size_t>(raw_returns.size()) != T || static_cast<std::size_t>(measures.rows()) != T) {
        throw DataError("panel series lengths disagree");
    }
    if (measure_names.size() != dims()) throw DataError("measure name count does not match measure columns");
    for (std::size_t t = 1; t < T; ++t) {
        if (!(dates[t - 1] < dates[t])) {
            throw DataError(fmt::format("dates not strictly increasing at row {} ({})", t, dates[t]));
        }
    }
    if ((measures.array() <= 0.0).any() || !measures.allFinite()) {
        throw DataError("panel measures must be finite and strictly positive");
    }
}

MeasurePanel load_panel(const std::filesystem::path& path, const ColumnMap& columns) {
    std::ifstream in(path);
    if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));

    std::string line;
    if (!std::getline(in, line)) throw DataError(fmt::format("{}: empty file, header row required", path.string()));
    const auto header = split_csv_line(line);

    auto find_column = [&](const std::string& name) -> std::size_t {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            throw ConfigError(fmt::format("{}: required column '{}' not found", path.string(), name));
        }
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t date_col = find_column(columns.date);
    const std::size_t close_col = find_column(columns.close);
    std::vector<std::size_t> measure_cols;
    std::vector<std::string> names;
    if (columns.measures.empty()) {
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (c != date_col && c != close_col) {
                measure_cols.push_back(c);
                names.push_back(header[c]);
            }
        }
    } else {
        for (const auto& name : columns.measures) {
            measure_cols.push_back(find_column(name));
            names.push_back(name);
        }
    }
    if (measure_cols.empty()) throw ConfigError(fmt::format("{}: no measure columns", path.string()));

    struct Row {
        std::string date;
        std::optional<double> close;
        std::vector<std::optional<double>> measures;
        std::size_t line_no;
    };
    std::vector<Row> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw DataError(fmt::format("{}:{}: expected {} cells, found {}", path.string(), line_no, header.size(),
                                        cells.size()));
        }
        Row row{cells[date_col], parse_number(cells[close_col]), {}, line_no};
        try {
            check_iso_date(row.date);
        } catch (const DataError& e) {
            throw DataError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
        }
        for (auto c : measure_cols) row.measures.push_back(parse_number(cells[c]));
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.date < b.date; });
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].date == rows[i - 1].date) {
            throw DataError(fmt::format("{}:{}: duplicate date {}", path.string(), rows[i].line_no, rows[i].date));
        }
    }

    // The first row with a usable close is the base; its measures are never used.
    std::size_t dropped = 0;
    std::size_t first = 0;
    while (first < rows.size() && !(rows[first].close && *rows[first].close > 0.0)) {
        ++first;
        ++dropped;
    }
    std::vector<const Row*> kept;
    for (std::size_t i = first + 1; i < rows.size(); ++i) {
        const Row& r = rows[i];
        bool ok = r.close && *r.close > 0.0;
        for (const auto& m : r.measures) ok = ok && m && *m > 0.0;
        if (ok) {
            kept.push_back(&r);
        } else {
            ++dropped;
        }
    }
    if (dropped > 0) {
        spdlog::warn("{}: dropped {} row(s) with missing or non-positive values", path.string(), dropped);
    }
    if (first >= rows.size() || kept.size() < 3) {
        throw DataError(fmt::format("{}: fewer than 3 usable rows after cleaning", path.string()));
    }

    MeasurePanel panel;
    const auto T = static_cast<Eigen::Index>(kept.size());
    const auto D = static_cast<Eigen::Index>(measure_cols.size());
    panel.base_date = rows[first].date;
    panel.base_close = *rows[first].close;
    panel.measure_names = std::move(names);
    panel.close.resize(T);
    panel.raw_returns.resize(T);
    panel.measures.resize(T, D);
    double prev = panel.base_close;
    for (Eigen::Index t = 0; t < T; ++t) {
        const Row& r = *kept[static_cast<std::size_t>(t)];
        panel.dates.push_back(r.date);
        panel.close(t) = *r.close;
        panel.raw_returns(t) = percent_log_return(prev, *r.close);
        prev = *r.close;
        for (Eigen::Index d = 0; d < D; ++d) panel.measures(t, d) = *r.measures[static_cast<std::size_t>(d)];
    }
    panel.returns = demean(panel.raw_returns);
    panel.validate();
    return panel;
}

void write_panel(const MeasurePanel& panel, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
    out << "date,close";
    for (const auto& n : panel.measure_names) out << ',' << n;
    out << '\n';
    out << panel.base_date << ',' << format_double(panel.base_close);
    for (std::size_t d = 0; d < panel.dims(); ++d) out << ',';
    out << '\n';
    for (std::size_t t = 0; t < panel.rows(); ++t) {
        const auto i = static_cast<Eigen::Index>(t);
        out << panel.dates[t] << ',' << format_double(panel.close(i));
        for (Eigen::Index d = 0; d < panel.measures.cols(); ++d) out << ',' << format_double(panel.measures(i, d));
        out << '\n';
    }
}

std::vector<std::string> business_days(const std::string& start, std::size_t count) {
    using namespace std::chrono;
    sys_days day{parse_ymd(start)};
    auto is_weekend = [](sys_days d) {
        const weekday wd{d};
        return wd == Saturday || wd == Sunday;
    };
    while (is_weekend(day)) day += days{1};
    std::vector<std::string> out;
    out.reserve(count);
    while (out.size() < count) {
        out.push_back(format_ymd(year_month_day{day}));
        do {
            day += days{1};
        } while (is_weekend(day));
    }
    return out;
}

MeasurePanel panel_from_returns(std::span<const double> raw_returns, const Eigen::MatrixXd& measures,
                                std::vector<std::string> names, const std::string& start_date, double base_close) {
    const auto T = static_cast<Eigen::Index>(raw_returns.size());
    if (measures.rows() != T) throw DataError("returns and measures have different lengths");
    if (static_cast<Eigen::Index>(names.size()) != measures.cols()) throw DataError("measure name count mismatch");
    MeasurePanel panel;
    auto all_dates = business_days(start_date, raw_returns.size() + 1);
    panel.base_date = all_dates.front();
    panel.base_close = base_close;
    panel.dates.assign(all_dates.begin() + 1, all_dates.end());
    panel.close.resize(T);
    panel.raw_returns.resize(T);
    double prev = base_close;
    for (Eigen::Index t = 0; t < T; ++t) {
        panel.close(t) = prev * std::exp(raw_returns[static_cast<std::size_t>(t)] / 100.0);
        panel.raw_returns(t) = percent_log_return(prev, panel.close(t));
        prev = panel.close(t);
    }
    panel.returns = demean(panel.raw_returns);
    panel.measures = measures;
    panel.measure_names = std::move(names);
    panel.validate();
    return panel;
}

MeasurePanel slice_panel(const MeasurePanel& panel, std::size_t begin, std::size_t count) {
    if (begin + count > panel.rows()) throw DataError("slice exceeds panel length");
    MeasurePanel out;
    const auto b = static_cast<Eigen::Index>(begin);
    const auto n = static_cast<Eigen::Index>(count);
    out.dates.assign(panel.dates.begin() + static_cast<std::ptrdiff_t>(begin),
                     panel.dates.begin() + static_cast<std::ptrdiff_t>(begin + count));
    out.close = panel.close.segment(b, n);
    out.raw_returns = panel.raw_returns.segment(b, n);
    out.returns = demean(out.raw_returns);
    out.measures = panel.measures.middleRows(b, n);
    out.measure_names = panel.measure_names;
    if (begin == 0) {
        out.base_date = panel.base_date;
        out.base_close = panel.base_close;
    } else {
        out.base_date = panel.dates[begin - 1];
        out.base_close = panel.close(b - 1);
    }
    return out;
}

std::pair<MeasurePanel, MeasurePanel> split(const MeasurePanel& panel, double in_fraction) {
    if (!(in_fraction > 0.0 && in_fraction < 1.0)) {
        throw ConfigError(fmt::format("split fraction {} outside (0, 1)", in_fraction));
    }
    const auto T = panel.rows();
    const auto n_in = static_cast<std::size_t>(std::floor(in_fraction * static_cast<double>(T)));
    if (n_in < 2 || T - n_in < 2) {
        throw ConfigError(fmt::format("split fraction {} on {} rows leaves a part with fewer than 2 rows",
                                      in_fraction, T));
    }
    return {slice_panel(panel, 0, n_in), slice_panel(panel, n_in, T - n_in)};
}

std::pair<MeasurePanel, MeasurePanel> split_at_date(const MeasurePanel& panel, const std::string& first_out_date) {
    check_iso_date(first_out_date);
    const auto it = std::lower_bound(panel.dates.begin(), panel.dates.end(), first_out_date);
    const auto n_in = static_cast<std::size_t>(it - panel.dates.begin());
    if (n_in < 2 || panel.rows() - n_in < 2) {
        throw ConfigError(fmt::format("split date {} leaves a part with fewer than 2 rows", first_out_date));
    }
    return {slice_panel(panel, 0, n_in), slice_panel(panel, n_in, panel.rows() - n_in)};
}

SummaryStats summarize(std::span<const double> series) {
    const std::size_t n = series.size();
    if (n < 2) throw DataError("summary statistics need at least 2 observations");
    SummaryStats s;
    const double dn = static_cast<double>(n);
    s.mean = std::accumulate(series.begin(), series.end(), 0.0) / dn;
    double m2 = 0.0;
    double m3 = 0.0;
    double m4 = 0.0;
    for (double x : series) {
        const double d = x - s.mean;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    s.std_dev = std::sqrt(m2 / (dn - 1.0));
    if (s.std_dev > 0.0) {
        s.skewness = (m3 / dn) / (s.std_dev * s.std_dev * s.std_dev);
        s.excess_kurtosis = (m4 / dn) / (s.std_dev * s.std_dev * s.std_dev * s.std_dev) - 3.0;
    }
    std::vector<double> sorted(series.begin(), series.end());
    std::sort(sorted.begin(), sorted.end());
    s.min = sorted.front();
    s.max = sorted.back();
    s.median = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    return s;
}

void write_summary_csv(const std::vector<std::pair<std::string, SummaryStats>>& rows,
                       const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
    out << "series,mean,std_dev,median,min,max,skewness,excess_kurtosis\n";
    for (const auto& [name, s] : rows) {
        out << name << ',' << format_double(s.mean) << ',' << format_double(s.std_dev) << ','
            << format_double(s.median) << ',' << format_double(s.min) << ',' << format_double(s.max) << ','
            << format_double(s.skewness) << ',' << format_double(s.excess_kurtosis) << '\n';
    }
}

}  // namespace volsynth
