#include "esnuq/time_series.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "esnuq/rng.hpp"

namespace esnuq {

SeasonalSpec::SeasonalSpec(int lag, int horizon) : s(lag), h(horizon) {
    if (s < 1) throw std::invalid_argument("seasonal lag must be >= 1");
    if (h < 1) throw std::invalid_argument("forecast horizon must be >= 1");
    if (h > s)
        throw std::invalid_argument(
            "forecast horizon must not exceed the seasonal lag (h <= s)");
}

void SplitSpec::validate() const {
    if (train_frac <= 0.0 || cal_frac < 0.0 || test_frac < 0.0)
        throw std::invalid_argument("split fractions must be non-negative, train > 0");
    const double sum = train_frac + cal_frac + test_frac;
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("split fractions must sum to 1");
}

namespace {

// Split one CSV line on commas. No quoting support; the datasets this tool
// ingests are plain numeric tables.
std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(const std::string& s) {
    auto b = s.begin(), e = s.end();
    while (b != e && std::isspace(static_cast<unsigned char>(*b))) ++b;
    while (e != b && std::isspace(static_cast<unsigned char>(*(e - 1)))) --e;
    return std::string(b, e);
}

bool parse_double(const std::string& cell, double* out) {
    const std::string t = trim(cell);
    if (t.empty()) return false;
    const char* first = t.data();
    const char* last = t.data() + t.size();
    auto [ptr, ec] = std::from_chars(first, last, *out);
    return ec == std::errc() && ptr == last;
}

} // namespace

TimeSeries load_csv(const std::string& path, const std::string& column,
                    bool has_header) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open CSV file: " + path);

    std::string line;
    std::size_t row = 0;
    std::size_t col_idx = 0;
    bool col_resolved = false;

    // Column given as a 0-based index works with or without a header.
    {
        std::size_t idx = 0;
        auto [ptr, ec] =
            std::from_chars(column.data(), column.data() + column.size(), idx);
        if (ec == std::errc() && ptr == column.data() + column.size()) {
            col_idx = idx;
            col_resolved = true;
        }
    }

    if (has_header) {
        if (!std::getline(in, line))
            throw std::runtime_error(path + ": empty file, expected a header row");
        ++row;
        if (!col_resolved) {
            const auto cells = split_line(line);
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (trim(cells[i]) == column) {
                    col_idx = i;
                    col_resolved = true;
                    break;
                }
            }
            if (!col_resolved)
                throw std::runtime_error(path + ": no column named '" + column +
                                         "' in header");
        }
    } else if (!col_resolved) {
        throw std::runtime_error(
            path + ": column must be a 0-based index when there is no header");
    }

    TimeSeries ts;
    ts.name = column;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto cells = split_line(line);
        if (col_idx >= cells.size())
            throw std::runtime_error(path + ": row " + std::to_string(row) +
                                     " has only " + std::to_string(cells.size()) +
                                     " columns, need column " +
                                     std::to_string(col_idx + 1));
        double v = 0.0;
        if (!parse_double(cells[col_idx], &v))
            throw std::runtime_error(path + ": row " + std::to_string(row) +
                                     ": cannot parse '" + trim(cells[col_idx]) +
                                     "' as a number");
        if (!std::isfinite(v))
            throw std::runtime_error(path + ": row " + std::to_string(row) +
                                     ": non-finite value");
        ts.values.push_back(v);
    }
    if (ts.values.empty())
        throw std::runtime_error(path + ": no data rows");
    return ts;
}

TimeSeries apply_exclusions(const TimeSeries& series,
                            const std::vector<ExclusionRange>& ranges) {
    for (const auto& r : ranges) {
        if (r.begin > r.end || r.end > series.size())
            throw std::invalid_argument("exclusion range out of bounds");
    }
    auto sorted = ranges;
    std::sort(sorted.begin(), sorted.end(),
              [](const ExclusionRange& a, const ExclusionRange& b) {
                  return a.begin < b.begin;
              });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i].begin < sorted[i - 1].end)
            throw std::invalid_argument("exclusion ranges overlap");
    }

    TimeSeries out;
    out.step = series.step;
    out.name = series.name;
    std::size_t pos = 0;
    for (const auto& r : sorted) {
        out.values.insert(out.values.end(), series.values.begin() + pos,
                          series.values.begin() + r.begin);
        pos = r.end;
    }
    out.values.insert(out.values.end(), series.values.begin() + pos,
                      series.values.end());
    return out;
}

NormStats fit_normalizer(const TimeSeries& train, double std_tolerance) {
    if (train.size() < 2)
        throw std::invalid_argument("need at least 2 samples to fit a normalizer");
    double mean = 0.0;
    for (double v : train.values) mean += v;
    mean /= static_cast<double>(train.size());
    double ss = 0.0;
    for (double v : train.values) ss += (v - mean) * (v - mean);
    // Sample standard deviation (n-1 denominator).
    const double sd = std::sqrt(ss / static_cast<double>(train.size() - 1));
    if (sd < std_tolerance)
        throw std::runtime_error("training series is (near-)constant; cannot normalize");
    return NormStats{mean, sd, "train"};
}

TimeSeries apply_normalizer(const TimeSeries& series, const NormStats& stats) {
    TimeSeries out = series;
    for (double& v : out.values) v = (v - stats.mean) / stats.std;
    return out;
}

TimeSeries invert_normalizer(const TimeSeries& series, const NormStats& stats) {
    TimeSeries out = series;
    for (double& v : out.values) v = v * stats.std + stats.mean;
    return out;
}

TimeSeries seasonal_difference(const TimeSeries& series, const SeasonalSpec& spec) {
    const auto s = static_cast<std::size_t>(spec.s);
    if (series.size() <= s)
        throw std::invalid_argument("series too short for seasonal differencing");
    TimeSeries out;
    out.step = series.step;
    out.name = series.name;
    out.values.resize(series.size() - s);
    for (std::size_t t = 0; t < out.values.size(); ++t)
        out.values[t] = series.values[t + s] - series.values[t];
    return out;
}

TimeSeries seasonal_undifference(const TimeSeries& diff,
                                 const std::vector<double>& head,
                                 const SeasonalSpec& spec) {
    const auto s = static_cast<std::size_t>(spec.s);
    if (head.size() != s)
        throw std::invalid_argument(
            "seasonal_undifference needs exactly s leading original values");
    TimeSeries out;
    out.step = diff.step;
    out.name = diff.name;
    out.values.resize(diff.size() + s);
    std::copy(head.begin(), head.end(), out.values.begin());
    for (std::size_t t = 0; t < diff.size(); ++t)
        out.values[t + s] = diff.values[t] + out.values[t];
    return out;
}

SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
    spec.validate();
    SplitSizes sz;
    sz.train = static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * spec.train_frac));
    const std::size_t rem = n - sz.train;
    const double denom = spec.cal_frac + spec.test_frac;
    if (denom <= 0.0) {
        sz.cal = 0;
        sz.test = rem;
        return sz;
    }
    sz.cal = static_cast<std::size_t>(
        std::floor(static_cast<double>(rem) * spec.cal_frac / denom));
    sz.test = rem - sz.cal;
    return sz;
}

std::array<TimeSeries, 3> split(const TimeSeries& series, const SplitSpec& spec) {
    const SplitSizes sz = split_sizes(series.size(), spec);
    if (sz.train == 0 || sz.cal == 0 || sz.test == 0)
        throw std::runtime_error("split produced an empty part (series too short "
                                 "for the requested fractions)");
    auto take = [&](std::size_t begin, std::size_t count) {
        TimeSeries part;
        part.step = series.step;
        part.name = series.name;
        part.values.assign(series.values.begin() + begin,
                           series.values.begin() + begin + count);
        return part;
    };
    return {take(0, sz.train), take(sz.train, sz.cal),
            take(sz.train + sz.cal, sz.test)};
}

TimeSeries synth_seasonal(std::size_t length, int period, double trend,
                          double noise_std, std::uint64_t seed) {
    if (period < 1) throw std::invalid_argument("period must be >= 1");
    if (length <= 2 * static_cast<std::size_t>(period))
        throw std::invalid_argument("synthetic series must span more than two periods");
    Rng rng = make_rng(seed);
    std::normal_distribution<double> noise(0.0, noise_std);
    TimeSeries out;
    out.name = "synthetic";
    out.values.resize(length);
    const double two_pi = 2.0 * std::acos(-1.0);
    for (std::size_t t = 0; t < length; ++t) {
        const double phase = two_pi * static_cast<double>(t) /
                             static_cast<double>(period);
        double v = std::sin(phase) + trend * static_cast<double>(t);
        if (noise_std > 0.0) v += noise(rng);
        out.values[t] = v;
    }
    return out;
}

} // namespace esnuq
