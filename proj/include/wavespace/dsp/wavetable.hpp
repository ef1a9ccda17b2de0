#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "wavespace/dsp/waveform.hpp"

namespace wavespace::dsp {

/// Non-owning row-major M x N view used by the render path.
struct WavetableView {
    std::span<const double> data;
    std::size_t rows = 0;
    std::size_t columns = 0;
};

class Wavetable {
public:
    /// Throws ShapeError when `rows` is empty or lengths differ.
    explicit Wavetable(std::span<const Waveform> rows);
    Wavetable(std::vector<double> data, std::size_t rows, std::size_t columns);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t columns() const noexcept { return columns_; }
    std::span<const double> row(std::size_t i) const;
    std::span<const double> data() const noexcept { return data_; }
    WavetableView view() const noexcept { return {data_, rows_, columns_}; }

private:
    std::vector<double> data_;
    std::size_t rows_ = 0;
    std::size_t columns_ = 0;
};

/// Bilinear read at fractional (row, column). Columns wrap modulo N;
/// rows outside [0, M-1] throw RangeError.
double read(const WavetableView& table, double row_index, double column_index);
inline double read(const Wavetable& table, double row_index, double column_index)
{
    return read(table.view(), row_index, column_index);
}

/// Linear read of a single row with modulo wrap. Never throws.
double read_row(std::span<const double> row, double column_index) noexcept;

struct PhaseState {
    double accumulator = 0.0;
    double sample_rate = 48000.0;
    std::size_t length = 1024;
};

/// Returns the column index for this sample and advances by N*f0/fs.
/// f0 saturates into [0, fs/2).
double advance_phase(PhaseState& state, double f0) noexcept;

/// Per-sample advance_phase + read into `out`. Allocation-free.
/// out.size() samples are produced; row/f0 streams must be at least as long.
void render_into(const WavetableView& table, std::span<const double> row_signal,
                 std::span<const double> f0_signal, PhaseState& phase, std::span<double> out);

std::vector<double> render(const Wavetable& table, std::span<const double> row_signal,
                           std::span<const double> f0_signal, double sample_rate,
                           std::size_t n_samples);

} // namespace wavespace::dsp
