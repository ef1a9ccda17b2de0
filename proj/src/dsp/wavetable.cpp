#include "wavespace/dsp/wavetable.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "wavespace/errors.hpp"

namespace wavespace::dsp {

Wavetable::Wavetable(std::span<const Waveform> rows)
{
    if (rows.empty()) {
        throw ShapeError("wavetable needs at least one row");
    }
    columns_ = rows.front().size();
    rows_ = rows.size();
    data_.reserve(rows_ * columns_);
    for (const auto& w : rows) {
        if (w.size() != columns_) {
            throw ShapeError("wavetable rows differ in length: " + std::to_string(columns_) +
                             " vs " + std::to_string(w.size()));
        }
        data_.insert(data_.end(), w.samples().begin(), w.samples().end());
    }
}

Wavetable::Wavetable(std::vector<double> data, std::size_t rows, std::size_t columns)
    : data_(std::move(data)), rows_(rows), columns_(columns)
{
    if (rows == 0 || columns == 0 || data_.size() != rows * columns) {
        throw ShapeError("wavetable data of " + std::to_string(data_.size()) +
                         " samples does not match " + std::to_string(rows) + " x " +
                         std::to_string(columns));
    }
}

std::span<const double> Wavetable::row(std::size_t i) const
{
    if (i >= rows_) {
        throw RangeError("row " + std::to_string(i) + " out of range for " + std::to_string(rows_) +
                         " rows");
    }
    return std::span<const double>(data_).subspan(i * columns_, columns_);
}

namespace {

struct ColumnPair {
    std::size_t lo;
    std::size_t hi;
    double frac;
};

inline ColumnPair split_column(double column_index, std::size_t n) noexcept
{
    const double len = static_cast<double>(n);
    double c = std::fmod(column_index, len);
    if (c < 0.0) {
        c += len;
    }
    auto lo = static_cast<std::size_t>(c);
    if (lo >= n) { // fmod rounding can land exactly on n
        lo = 0;
        c = 0.0;
    }
    const std::size_t hi = lo + 1 == n ? 0 : lo + 1;
    return {lo, hi, c - static_cast<double>(lo)};
}

} // namespace

double read_row(std::span<const double> row, double column_index) noexcept
{
    const auto [lo, hi, frac] = split_column(column_index, row.size());
    return row[lo] + frac * (row[hi] - row[lo]);
}

double read(const WavetableView& table, double row_index, double column_index)
{
    const double last = static_cast<double>(table.rows - 1);
    if (!(row_index >= 0.0 && row_index <= last)) {
        throw RangeError("row index " + std::to_string(row_index) + " outside [0, " +
                         std::to_string(table.rows - 1) + "]");
    }
    const auto r0 = static_cast<std::size_t>(row_index);
    const std::size_t r1 = std::min(r0 + 1, table.rows - 1);
    const double row_frac = row_index - static_cast<double>(r0);
    const auto [c0, c1, col_frac] = split_column(column_index, table.columns);

    const double* a = table.data.data() + r0 * table.columns;
    const double* b = table.data.data() + r1 * table.columns;
    const double top = a[c0] + col_frac * (a[c1] - a[c0]);
    const double bottom = b[c0] + col_frac * (b[c1] - b[c0]);
    return top + row_frac * (bottom - top);
}

double advance_phase(PhaseState& state, double f0) noexcept
{
    const double nyquist = 0.5 * state.sample_rate;
    if (!(f0 > 0.0)) {
        f0 = 0.0;
    } else if (f0 >= nyquist) {
        f0 = std::nextafter(nyquist, 0.0);
    }
    const double len = static_cast<double>(state.length);
    const double current = state.accumulator;
    double next = current + len * f0 / state.sample_rate;
    if (next >= len) {
        next -= len;
        if (next >= len) {
            next = std::fmod(next, len);
        }
    }
    state.accumulator = next;
    return current;
}

void render_into(const WavetableView& table, std::span<const double> row_signal,
                 std::span<const double> f0_signal, PhaseState& phase, std::span<double> out)
{
    if (row_signal.size() < out.size() || f0_signal.size() < out.size()) {
        throw ShapeError("render control streams shorter than the output block");
    }
    phase.length = table.columns;
    for (std::size_t n = 0; n < out.size(); ++n) {
        const double column = advance_phase(phase, f0_signal[n]);
        out[n] = read(table, row_signal[n], column);
    }
}

std::vector<double> render(const Wavetable& table, std::span<const double> row_signal,
                           std::span<const double> f0_signal, double sample_rate,
                           std::size_t n_samples)
{
    std::vector<double> out(n_samples);
    PhaseState phase{0.0, sample_rate, table.columns()};
    render_into(table.view(), row_signal, f0_signal, phase, out);
    return out;
}

} // namespace wavespace::dsp
