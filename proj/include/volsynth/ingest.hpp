#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace volsynth {

/**
 * Date-indexed panel of realised measures with aligned closes and returns.
 *
 * Row t holds the close of day t, the percentage log return from the
 * previous retained close, and D strictly positive variance-scale measures.
 * `base_date`/`base_close` describe the row that supplied the first prior
 * close; it is not part of the panel but is kept so the panel can be written
 * back out and reloaded without loss.
 */
struct MeasurePanel {
    std::vector<std::string> dates;
    Eigen::VectorXd close;
    Eigen::VectorXd raw_returns;  // 100 * log(C_t / C_{t-1}), before de-meaning
    Eigen::VectorXd returns;      // raw_returns minus their mean over this panel
    Eigen::MatrixXd measures;     // T x D
    std::vector<std::string> measure_names;
    std::string base_date;
    double base_close = 0.0;

    std::size_t rows() const noexcept { return dates.size(); }
    std::size_t dims() const noexcept { return static_cast<std::size_t>(measures.cols()); }

    /// Throws DataError when any structural invariant is broken.
    void validate() const;
};

struct SummaryStats {
    double mean = 0.0;
    double std_dev = 0.0;
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
};

/// Column names to read. An empty `measures` list selects every column that
/// is neither the date nor the close column, in file order.
struct ColumnMap {
    std::string date = "date";
    std::string close = "close";
    std::vector<std::string> measures;
};

/// Load a canonical panel CSV. Rows are sorted by date; rows with a missing or
/// non-positive close or measure are dropped (count logged) before returns are
/// formed from consecutive retained closes. The first retained row only
/// supplies the prior close, so its measure cells may be empty.
MeasurePanel load_panel(const std::filesystem::path& path, const ColumnMap& columns = {});

/// Write the canonical CSV (base row first, then one row per panel day).
/// Numbers use shortest round-trip formatting, so load_panel reproduces the
/// panel bit for bit.
void write_panel(const MeasurePanel& panel, const std::filesystem::path& path);

/// Build a panel from raw percentage returns and a measure matrix. Closes are
/// accumulated from `base_close`; stored returns are recomputed from those
/// closes exactly as load_panel would, so the result round-trips through CSV.
MeasurePanel panel_from_returns(std::span<const double> raw_returns, const Eigen::MatrixXd& measures,
                                std::vector<std::string> names, const std::string& start_date = "2000-01-03",
                                double base_close = 100.0);

/// Rows [begin, begin + count) as a panel of their own, re-de-meaned.
MeasurePanel slice_panel(const MeasurePanel& panel, std::size_t begin, std::size_t count);

/// First floor(in_fraction * T) rows and the rest. Each part must keep at least two rows.
std::pair<MeasurePanel, MeasurePanel> split(const MeasurePanel& panel, double in_fraction);

/// In-sample rows are those dated strictly before `first_out_date` (ISO-8601).
std::pair<MeasurePanel, MeasurePanel> split_at_date(const MeasurePanel& panel, const std::string& first_out_date);

Eigen::VectorXd demean(const Eigen::VectorXd& x);

/// Sample statistics: (n-1) variance; skewness and kurtosis are the central
/// third/fourth moments over s^3 and s^4. A constant series reports 0 for both.
SummaryStats summarize(std::span<const double> series);
inline SummaryStats summarize(const Eigen::VectorXd& series) {
    return summarize(std::span<const double>(series.data(), static_cast<std::size_t>(series.size())));
}

/// One row per named series: name,mean,std_dev,median,min,max,skewness,excess_kurtosis.
void write_summary_csv(const std::vector<std::pair<std::string, SummaryStats>>& rows,
                       const std::filesystem::path& path);

/// `count` consecutive weekdays starting at `start` (which is advanced to a weekday first).
std::vector<std::string> business_days(const std::string& start, std::size_t count);

/// Throws DataError unless `date` is a valid YYYY-MM-DD calendar date.
void check_iso_date(const std::string& date);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace volsynth
