#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "advmr/attack.hpp"
#include "advmr/tensor.hpp"

namespace advmr {

// %.12g, with non-finite values spelled inf/-inf/nan.
std::string format_g(double v);

// Write to <path>.tmp.<pid> in the target directory, then rename over path.
void write_text_atomic(const std::string& path, const std::string& content);

std::string read_text(const std::string& path); // DataError(io/missing) on failure

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed = 0);

// Everything needed to rerun a command: the config snapshot determines the
// outputs byte for byte; timing lives in a separate provenance section that
// is excluded from that guarantee.
struct RunManifest {
    std::string command;
    std::vector<std::pair<std::string, std::string>> config; // flag -> value
    std::vector<std::string> inputs, outputs;
    std::string code_version;
    double wall_seconds = 0;

    std::string to_json() const;
};

void write_manifest(const std::string& out_dir, const RunManifest& m);

inline constexpr int kCsvSchemaVersion = 1;
extern const char* const kSweepCsvHeader; // model,R,attack,...

std::string sweep_rows_to_csv(std::vector<SweepRow> rows); // sorts, formats

struct SummaryRow {
    std::string model, attack, smode;
    int accel = 0;
    double param = 0;
    int n = 0;
    double mean_ssim_adv = 0, std_ssim_adv = 0;
    double mean_psnr_adv = 0;
    double mean_objective = 0;
};

std::vector<SummaryRow> summarize(const std::vector<SweepRow>& rows);
std::string summary_to_csv(const std::vector<SummaryRow>& rows);

// 8-bit binary portable graymap, scaled so scale_max (default: the image
// max) maps to 255. Values clip into [0, 255].
void write_pgm(const std::string& path, const Tensor& img, double scale_max = 0);

struct SvgSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

// Minimal static line chart for quick inspection of sweep curves.
void write_svg_chart(const std::string& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<SvgSeries>& series);

// Run fn(i) for i in [0, n) on a bounded pool. workers = 0 reads
// ADVMR_WORKERS, falling back to the logical processor count. Exceptions
// propagate to the caller after the pool drains.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

// CLI entry point; returns the process exit code (0 ok, 1 usage, 2 data,
// 3 numerical).
int run_cli(int argc, const char* const* argv);

} // namespace advmr
