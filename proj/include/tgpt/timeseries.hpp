#pragma once

#include "tgpt/detail/text.hpp"
#include "tgpt/error.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace tgpt {

enum class FrequencyKind { Hourly, Daily, Weekly, Monthly };

/**
 * @brief Sampling frequency of a regular series.
 *
 * Carries the seasonal period used by the seasonal baselines and the
 * evaluation horizon used by the benchmark protocol. The season length
 * defaults to the conventional value per kind but may be overridden per
 * dataset (weekly data is frequently treated as non-seasonal).
 */
class Frequency {
public:
    static Frequency hourly() { return Frequency(FrequencyKind::Hourly, 24, 24); }
    static Frequency daily() { return Frequency(FrequencyKind::Daily, 7, 7); }
    static Frequency weekly() { return Frequency(FrequencyKind::Weekly, 52, 1); }
    static Frequency monthly() { return Frequency(FrequencyKind::Monthly, 12, 12); }

    static Frequency of(FrequencyKind kind) {
        switch (kind) {
            case FrequencyKind::Hourly: return hourly();
            case FrequencyKind::Daily: return daily();
            case FrequencyKind::Weekly: return weekly();
            case FrequencyKind::Monthly: return monthly();
        }
        throw ConfigError("unknown frequency kind");
    }

    /// Accepts "hourly", "daily", "weekly", "monthly" (case-insensitive) and the
    /// single-letter aliases H, D, W, M.
    static Frequency parse(std::string_view name) {
        std::string lower;
        for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        if (lower == "hourly" || lower == "h") return hourly();
        if (lower == "daily" || lower == "d") return daily();
        if (lower == "weekly" || lower == "w") return weekly();
        if (lower == "monthly" || lower == "m") return monthly();
        throw ConfigError("unknown frequency '" + std::string(name) + "'");
    }

    [[nodiscard]] Frequency with_season_length(std::size_t season_length) const {
        if (season_length == 0) throw ConfigError("season_length must be positive");
        Frequency f = *this;
        f.season_length_ = season_length;
        return f;
    }

    [[nodiscard]] FrequencyKind kind() const noexcept { return kind_; }
    [[nodiscard]] std::size_t season_length() const noexcept { return season_length_; }
    [[nodiscard]] std::size_t default_horizon() const noexcept { return default_horizon_; }

    [[nodiscard]] std::string_view name() const noexcept {
        switch (kind_) {
            case FrequencyKind::Hourly: return "hourly";
            case FrequencyKind::Daily: return "daily";
            case FrequencyKind::Weekly: return "weekly";
            case FrequencyKind::Monthly: return "monthly";
        }
        return "unknown";
    }

    /// Distance between consecutive observations in timestamp-ordinal units.
    [[nodiscard]] std::int64_t step() const noexcept { return kind_ == FrequencyKind::Weekly ? 7 : 1; }

    friend bool operator==(const Frequency&, const Frequency&) = default;

private:
    Frequency(FrequencyKind kind, std::size_t season_length, std::size_t default_horizon)
        : kind_(kind), season_length_(season_length), default_horizon_(default_horizon) {}

    FrequencyKind kind_;
    std::size_t season_length_;
    std::size_t default_horizon_;
};

// Timestamps are ordinals on a per-kind grid: months since year 0 for monthly
// data, days since 1970-01-01 for daily and weekly data, hours since the epoch
// for hourly data.
namespace detail {

inline bool all_digits(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

inline std::optional<std::int64_t> days_from_date(int y, unsigned m, unsigned d) {
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{m}, day{d}};
    if (!ymd.ok()) return std::nullopt;
    return sys_days{ymd}.time_since_epoch().count();
}

inline std::string two_digits(unsigned v) {
    std::string s = std::to_string(v);
    return s.size() < 2 ? "0" + s : s;
}

inline std::string four_digits(long long v) {
    std::string s = std::to_string(v < 0 ? -v : v);
    while (s.size() < 4) s = "0" + s;
    return v < 0 ? "-" + s : s;
}

inline std::string format_days(std::int64_t days) {
    using namespace std::chrono;
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    return four_digits(static_cast<int>(ymd.year())) + "-" + two_digits(static_cast<unsigned>(ymd.month())) + "-" +
           two_digits(static_cast<unsigned>(ymd.day()));
}

}  // namespace detail

/// Parses a timestamp written in the canonical format for @p kind.
inline std::optional<std::int64_t> parse_timestamp(std::string_view text, FrequencyKind kind) {
    text = detail::trim(text);
    auto field = [&](std::size_t pos, std::size_t len) { return text.substr(pos, len); };
    if (kind == FrequencyKind::Monthly) {
        if (text.size() != 7 || text[4] != '-' || !detail::all_digits(field(0, 4)) || !detail::all_digits(field(5, 2)))
            return std::nullopt;
        const auto y = *detail::parse_int(field(0, 4));
        const auto m = *detail::parse_int(field(5, 2));
        if (m < 1 || m > 12) return std::nullopt;
        return y * 12 + (m - 1);
    }
    const bool hourly = kind == FrequencyKind::Hourly;
    if (text.size() != (hourly ? 13U : 10U) || text[4] != '-' || text[7] != '-') return std::nullopt;
    if (!detail::all_digits(field(0, 4)) || !detail::all_digits(field(5, 2)) || !detail::all_digits(field(8, 2)))
        return std::nullopt;
    const auto days = detail::days_from_date(static_cast<int>(*detail::parse_int(field(0, 4))),
                                             static_cast<unsigned>(*detail::parse_int(field(5, 2))),
                                             static_cast<unsigned>(*detail::parse_int(field(8, 2))));
    if (!days) return std::nullopt;
    if (!hourly) return *days;
    if (text[10] != 'T' || !detail::all_digits(field(11, 2))) return std::nullopt;
    const auto hour = *detail::parse_int(field(11, 2));
    if (hour > 23) return std::nullopt;
    return *days * 24 + hour;
}

inline std::string format_timestamp(std::int64_t ordinal, FrequencyKind kind) {
    switch (kind) {
        case FrequencyKind::Monthly: {
            const auto y = ordinal >= 0 ? ordinal / 12 : -((-ordinal + 11) / 12);
            const auto m = ordinal - y * 12 + 1;
            return detail::four_digits(y) + "-" + detail::two_digits(static_cast<unsigned>(m));
        }
        case FrequencyKind::Daily:
        case FrequencyKind::Weekly: return detail::format_days(ordinal);
        case FrequencyKind::Hourly: {
            std::int64_t days = ordinal / 24;
            std::int64_t hour = ordinal % 24;
            if (hour < 0) {
                hour += 24;
                --days;
            }
            return detail::format_days(days) + "T" + detail::two_digits(static_cast<unsigned>(hour));
        }
    }
    return {};
}

struct ExogenousChannel {
    std::string name;
    std::vector<double> values;

    friend bool operator==(const ExogenousChannel&, const ExogenousChannel&) = default;
};

/**
 * @brief Immutable, frequency-regular observation sequence.
 *
 * Exogenous channels are aligned with the target values and may run past the
 * last observation; the extra entries are known future covariates.
 */
class TimeSeries {
public:
    TimeSeries(std::string id, std::int64_t start, Frequency freq, std::vector<double> values,
               std::vector<ExogenousChannel> exogenous = {})
        : id_(std::move(id)), start_(start), freq_(freq), values_(std::move(values)), exogenous_(std::move(exogenous)) {
        if (values_.empty()) throw DataError("series '" + id_ + "' has no values");
        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (!std::isfinite(values_[i]))
                throw DataError("series '" + id_ + "' has a non-finite value at index " + std::to_string(i));
        }
        for (const auto& ch : exogenous_) {
            if (ch.values.size() < values_.size())
                throw DataError("series '" + id_ + "': exogenous channel '" + ch.name + "' is shorter than the values");
            if (ch.values.size() != exogenous_.front().values.size())
                throw DataError("series '" + id_ + "': exogenous channels have different lengths");
            for (double v : ch.values) {
                if (!std::isfinite(v))
                    throw DataError("series '" + id_ + "': exogenous channel '" + ch.name + "' has a non-finite value");
            }
        }
    }

    [[nodiscard]] const std::string& id() const noexcept { return id_; }
    [[nodiscard]] std::int64_t start() const noexcept { return start_; }
    [[nodiscard]] const Frequency& freq() const noexcept { return freq_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] const std::vector<ExogenousChannel>& exogenous() const noexcept { return exogenous_; }

    /// Number of covariate steps known beyond the last observation.
    [[nodiscard]] std::size_t future_steps() const noexcept {
        return exogenous_.empty() ? 0 : exogenous_.front().values.size() - values_.size();
    }

    [[nodiscard]] std::int64_t ordinal_at(std::int64_t index) const noexcept { return start_ + index * freq_.step(); }

    [[nodiscard]] std::string timestamp_at(std::int64_t index) const {
        return format_timestamp(ordinal_at(index), freq_.kind());
    }

    /// First @p n values; exogenous channels keep up to @p keep_future entries past the cut.
    [[nodiscard]] TimeSeries head(std::size_t n, std::size_t keep_future = 0) const {
        if (n == 0 || n > values_.size()) throw DataError("series '" + id_ + "': invalid head length");
        std::vector<ExogenousChannel> exo;
        for (const auto& ch : exogenous_) {
            const std::size_t len = std::min(ch.values.size(), n + keep_future);
            exo.push_back({ch.name, std::vector<double>(ch.values.begin(), ch.values.begin() + static_cast<std::ptrdiff_t>(len))});
        }
        return TimeSeries(id_, start_, freq_, std::vector<double>(values_.begin(), values_.begin() + static_cast<std::ptrdiff_t>(n)),
                          std::move(exo));
    }

    /// Values from index @p offset to the end, with the matching exogenous tail.
    [[nodiscard]] TimeSeries tail_from(std::size_t offset) const {
        if (offset >= values_.size()) throw DataError("series '" + id_ + "': invalid tail offset");
        std::vector<ExogenousChannel> exo;
        for (const auto& ch : exogenous_)
            exo.push_back({ch.name, std::vector<double>(ch.values.begin() + static_cast<std::ptrdiff_t>(offset), ch.values.end())});
        return TimeSeries(id_, ordinal_at(static_cast<std::int64_t>(offset)), freq_,
                          std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(offset), values_.end()), std::move(exo));
    }

    /// Same series with all values multiplied by @p a and shifted by @p b.
    [[nodiscard]] TimeSeries affine(double a, double b) const {
        std::vector<double> v(values_);
        for (double& x : v) x = a * x + b;
        return TimeSeries(id_, start_, freq_, std::move(v), exogenous_);
    }

    friend bool operator==(const TimeSeries&, const TimeSeries&) = default;

private:
    std::string id_;
    std::int64_t start_;
    Frequency freq_;
    std::vector<double> values_;
    std::vector<ExogenousChannel> exogenous_;
};

enum class DatasetRole { Source, Target };

/// Collection of series sharing one frequency, with unique ids.
class Dataset {
public:
    Dataset(Frequency freq, std::vector<TimeSeries> series, DatasetRole role = DatasetRole::Target)
        : freq_(freq), series_(std::move(series)), role_(role) {
        std::unordered_set<std::string> ids;
        for (const auto& s : series_) {
            if (s.freq().kind() != freq_.kind())
                throw DataError("series '" + s.id() + "' has frequency " + std::string(s.freq().name()) +
                                ", dataset is " + std::string(freq_.name()));
            if (!ids.insert(s.id()).second) throw DataError("duplicate series id '" + s.id() + "'");
        }
    }

    [[nodiscard]] const Frequency& freq() const noexcept { return freq_; }
    [[nodiscard]] DatasetRole role() const noexcept { return role_; }
    [[nodiscard]] const std::vector<TimeSeries>& series() const noexcept { return series_; }
    [[nodiscard]] std::size_t size() const noexcept { return series_.size(); }
    [[nodiscard]] bool empty() const noexcept { return series_.empty(); }
    [[nodiscard]] const TimeSeries& operator[](std::size_t i) const { return series_.at(i); }

    [[nodiscard]] const TimeSeries* find(std::string_view id) const {
        for (const auto& s : series_)
            if (s.id() == id) return &s;
        return nullptr;
    }

    [[nodiscard]] Dataset with_role(DatasetRole role) const { return Dataset(freq_, series_, role); }

    friend bool operator==(const Dataset&, const Dataset&) = default;

private:
    Frequency freq_;
    std::vector<TimeSeries> series_;
    DatasetRole role_;
};

enum class FillPolicy { ForwardThenBackFill, Zero, Error };

inline FillPolicy parse_fill_policy(std::string_view name) {
    if (name == "ffill" || name == "forward") return FillPolicy::ForwardThenBackFill;
    if (name == "zero") return FillPolicy::Zero;
    if (name == "error") return FillPolicy::Error;
    throw ConfigError("unknown fill policy '" + std::string(name) + "'");
}

namespace detail {

inline bool is_missing_token(std::string_view s) {
    s = trim(s);
    return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null" || s == "NULL";
}

struct RawRow {
    std::int64_t ordinal;
    std::optional<double> y;
    std::vector<std::optional<double>> exo;
    std::size_t line;
};

/// Fills the missing entries of @p slots in place according to @p policy.
inline void fill_gaps(std::vector<std::optional<double>>& slots, FillPolicy policy, const std::string& what) {
    std::optional<double> first;
    for (const auto& v : slots) {
        if (v) {
            first = v;
            break;
        }
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i]) continue;
        switch (policy) {
            case FillPolicy::Error: throw DataError(what + ": missing value at grid position " + std::to_string(i));
            case FillPolicy::Zero: slots[i] = 0.0; break;
            case FillPolicy::ForwardThenBackFill:
                if (!first) throw DataError(what + ": no observed values to fill from");
                slots[i] = i == 0 || !slots[i - 1] ? *first : slots[i - 1];
                break;
        }
    }
}

inline std::optional<double> parse_cell(std::string_view cell, std::size_t line, const std::string& column) {
    if (is_missing_token(cell)) return std::nullopt;
    const auto v = parse_double(cell);
    if (!v || !std::isfinite(*v))
        throw DataError("line " + std::to_string(line) + ": non-numeric " + column + " value '" + std::string(trim(cell)) + "'");
    return v;
}

}  // namespace detail

/**
 * @brief Infers the frequency from the timestamp text format and spacing.
 *
 * `YYYY-MM` is monthly, `YYYY-MM-DDTHH` hourly; for `YYYY-MM-DD` the data is
 * weekly when every observed spacing within a series is a multiple of 7 days.
 */
inline Frequency infer_frequency(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty stream");
    const auto header = detail::split_csv_record(line);
    if (!header) throw DataError("malformed header");
    std::size_t id_col = header->size(), ds_col = header->size();
    for (std::size_t i = 0; i < header->size(); ++i) {
        if ((*header)[i] == "unique_id") id_col = i;
        if ((*header)[i] == "ds") ds_col = i;
    }
    if (ds_col == header->size() || id_col == header->size()) throw DataError("header must contain unique_id and ds");
    std::map<std::string, std::vector<std::int64_t>> days;
    std::optional<std::size_t> width;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_record(line);
        if (!fields || fields->size() <= std::max(ds_col, id_col)) throw DataError("malformed row");
        const auto ds = detail::trim((*fields)[ds_col]);
        if (!width) width = ds.size();
        if (ds.size() == 7) return Frequency::monthly();
        if (ds.size() == 13) return Frequency::hourly();
        const auto d = parse_timestamp(ds, FrequencyKind::Daily);
        if (!d) throw DataError("unparseable timestamp '" + std::string(ds) + "'");
        days[(*fields)[id_col]].push_back(*d);
    }
    if (!width) throw DataError("no data rows");
    bool weekly = true;
    bool any_spacing = false;
    for (auto& [id, ds] : days) {
        std::sort(ds.begin(), ds.end());
        for (std::size_t i = 1; i < ds.size(); ++i) {
            const auto diff = ds[i] - ds[i - 1];
            if (diff == 0) continue;
            any_spacing = true;
            if (diff % 7 != 0) weekly = false;
        }
    }
    return weekly && any_spacing ? Frequency::weekly() : Frequency::daily();
}

/**
 * @brief Reads long-format CSV (`unique_id,ds,y[,exo...]`) into a dataset.
 *
 * Extra numeric columns become exogenous channels. Empty or NA cells are
 * missing values; rows after a series' last observed y only extend its
 * exogenous channels (future covariates). Gaps on the regular grid are
 * filled according to @p policy.
 */
inline Dataset ingest_long_csv(std::istream& in, const Frequency& freq, FillPolicy policy = FillPolicy::ForwardThenBackFill,
                               DatasetRole role = DatasetRole::Target) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) throw DataError("empty stream");
    const auto header = detail::split_csv_record(line);
    if (!header) throw DataError("malformed header");
    std::optional<std::size_t> id_col, ds_col, y_col;
    std::vector<std::size_t> exo_cols;
    std::vector<std::string> exo_names;
    for (std::size_t i = 0; i < header->size(); ++i) {
        const auto& name = (*header)[i];
        if (name == "unique_id") id_col = i;
        else if (name == "ds") ds_col = i;
        else if (name == "y") y_col = i;
        else {
            exo_cols.push_back(i);
            exo_names.push_back(name);
        }
    }
    if (!id_col || !ds_col || !y_col) throw DataError("header must contain unique_id, ds and y columns");

    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<detail::RawRow>> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_record(line);
        if (!fields) throw DataError("line " + std::to_string(line_no) + ": unterminated quote");
        if (fields->size() != header->size())
            throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header->size()) + " fields");
        const auto& id = (*fields)[*id_col];
        const auto ordinal = parse_timestamp((*fields)[*ds_col], freq.kind());
        if (!ordinal)
            throw DataError("line " + std::to_string(line_no) + ": unparseable timestamp '" + (*fields)[*ds_col] + "'");
        detail::RawRow row{*ordinal, detail::parse_cell((*fields)[*y_col], line_no, "y"), {}, line_no};
        for (std::size_t k = 0; k < exo_cols.size(); ++k)
            row.exo.push_back(detail::parse_cell((*fields)[exo_cols[k]], line_no, exo_names[k]));
        auto [it, inserted] = rows.try_emplace(id);
        if (inserted) order.push_back(id);
        it->second.push_back(std::move(row));
    }
    if (order.empty()) throw DataError("no data rows");

    const std::int64_t step = freq.step();
    std::vector<TimeSeries> out;
    for (const auto& id : order) {
        auto& rs = rows[id];
        std::stable_sort(rs.begin(), rs.end(), [](const auto& a, const auto& b) { return a.ordinal < b.ordinal; });
        for (std::size_t i = 1; i < rs.size(); ++i) {
            if (rs[i].ordinal == rs[i - 1].ordinal)
                throw DataError("duplicate (unique_id, ds) pair for '" + id + "' at line " + std::to_string(rs[i].line));
        }
        const std::int64_t first = rs.front().ordinal;
        std::optional<std::int64_t> last_observed;
        for (const auto& r : rs) {
            if ((r.ordinal - first) % step != 0)
                throw DataError("series '" + id + "' is not on a regular " + std::string(freq.name()) + " grid (line " +
                                std::to_string(r.line) + ")");
            if (r.y) last_observed = r.ordinal;
        }
        if (!last_observed) throw DataError("series '" + id + "' has no observed y values");
        const auto n_values = static_cast<std::size_t>((*last_observed - first) / step + 1);
        const auto n_total = exo_cols.empty() ? n_values : static_cast<std::size_t>((rs.back().ordinal - first) / step + 1);

        std::vector<std::optional<double>> y(n_values);
        std::vector<std::vector<std::optional<double>>> exo(exo_cols.size(), std::vector<std::optional<double>>(n_total));
        for (const auto& r : rs) {
            const auto idx = static_cast<std::size_t>((r.ordinal - first) / step);
            if (idx < n_values) y[idx] = r.y;
            for (std::size_t k = 0; k < exo_cols.size() && idx < n_total; ++k) exo[k][idx] = r.exo[k];
        }
        detail::fill_gaps(y, policy, "series '" + id + "'");
        std::vector<ExogenousChannel> channels;
        for (std::size_t k = 0; k < exo_cols.size(); ++k) {
            detail::fill_gaps(exo[k], policy, "series '" + id + "' channel '" + exo_names[k] + "'");
            ExogenousChannel ch{exo_names[k], {}};
            for (const auto& v : exo[k]) ch.values.push_back(*v);
            channels.push_back(std::move(ch));
        }
        std::vector<double> values;
        values.reserve(y.size());
        for (const auto& v : y) values.push_back(*v);
        out.emplace_back(id, first, freq, std::move(values), std::move(channels));
    }
    return Dataset(freq, std::move(out), role);
}

inline Dataset ingest_long_csv(std::string_view text, const Frequency& freq, FillPolicy policy = FillPolicy::ForwardThenBackFill) {
    std::istringstream in{std::string(text)};
    return ingest_long_csv(in, freq, policy);
}

/// Writes the dataset in the long format accepted by ingest_long_csv.
inline void write_long_csv(std::ostream& out, const Dataset& ds) {
    std::vector<std::string> exo_names;
    if (!ds.empty())
        for (const auto& ch : ds[0].exogenous()) exo_names.push_back(ch.name);
    for (const auto& s : ds.series()) {
        std::vector<std::string> names;
        for (const auto& ch : s.exogenous()) names.push_back(ch.name);
        if (names != exo_names) throw DataError("series '" + s.id() + "' has a different set of exogenous channels");
    }
    out << "unique_id,ds,y";
    for (const auto& n : exo_names) out << ',' << detail::quote_csv_field(n);
    out << '\n';
    for (const auto& s : ds.series()) {
        const std::size_t total = s.size() + s.future_steps();
        for (std::size_t i = 0; i < total; ++i) {
            out << detail::quote_csv_field(s.id()) << ',' << s.timestamp_at(static_cast<std::int64_t>(i)) << ',';
            if (i < s.size()) out << detail::format_double(s.values()[i]);
            for (const auto& ch : s.exogenous()) out << ',' << detail::format_double(ch.values[i]);
            out << '\n';
        }
    }
}

struct TrainTestSplit {
    Dataset train;
    Dataset test;
};

/**
 * @brief Holds out the final @p horizon observations of every series.
 *
 * Train series keep the exogenous values covering the held-out window as
 * future covariates; test series carry the matching exogenous tail.
 */
inline TrainTestSplit last_window_split(const Dataset& ds, std::size_t horizon) {
    if (horizon == 0) throw ConfigError("horizon must be positive");
    std::vector<TimeSeries> train, test;
    for (const auto& s : ds.series()) {
        if (s.size() <= horizon)
            throw DataError("series '" + s.id() + "' has length " + std::to_string(s.size()) + ", needs more than " +
                            std::to_string(horizon));
        const std::size_t cut = s.size() - horizon;
        train.push_back(s.head(cut, horizon + s.future_steps()));
        test.push_back(s.tail_from(cut));
    }
    return {Dataset(ds.freq(), std::move(train), ds.role()), Dataset(ds.freq(), std::move(test), ds.role())};
}

struct RollingWindow {
    std::size_t cut;              ///< number of history observations before the window
    std::vector<double> actuals;  ///< the next `horizon` observations
};

/// Back-to-back windows ending at the series end, oldest first.
inline std::vector<RollingWindow> rolling_origins(const TimeSeries& series, std::size_t horizon, std::size_t n_windows) {
    if (horizon == 0 || n_windows == 0) throw ConfigError("horizon and n_windows must be positive");
    if (series.size() <= horizon * n_windows)
        throw DataError("series '" + series.id() + "' has length " + std::to_string(series.size()) + ", rolling origins need more than " +
                        std::to_string(horizon * n_windows));
    std::vector<RollingWindow> windows;
    const auto values = series.values();
    for (std::size_t k = 1; k <= n_windows; ++k) {
        const std::size_t cut = series.size() - (n_windows - k + 1) * horizon;
        windows.push_back({cut, std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(cut),
                                                    values.begin() + static_cast<std::ptrdiff_t>(cut + horizon))});
    }
    return windows;
}

}  // namespace tgpt
