#include "advmr/runio.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>
#include <unistd.h>

#include <json.hpp>

#include "advmr/errors.hpp"

namespace advmr {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_g(double v) {
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw DataError(DataError::Code::missing, "cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    if (f.bad())
        throw DataError(DataError::Code::io, "read failed for " + path);
    return ss.str();
}

void write_text_atomic(const std::string& path, const std::string& content) {
    const fs::path target(path);
    const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp." + std::to_string(::getpid()));
    {
        std::ofstream f(tmp, std::ios::binary);
        f.write(content.data(), std::streamsize(content.size()));
        f.flush();
        if (!f) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw DataError(DataError::Code::io, "write failed for " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw DataError(DataError::Code::io, "cannot move " + path + " into place");
    }
}

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed) {
    // standard reflected CRC-32 (polynomial 0xEDB88320), table built once
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = ~seed;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i)
        c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
    return ~c;
}

std::string RunManifest::to_json() const {
    // ordered [flag, value] pairs: an object would collapse repeated flags
    // (several --model or --param entries) and lose the replay snapshot
    json cfg = json::array();
    for (const auto& [k, v] : config)
        cfg.push_back(json::array({k, v}));
    json j = {{"command", command},
              {"config", cfg},
              {"inputs", inputs},
              {"outputs", outputs},
              {"code_version", code_version},
              {"csv_schema_version", kCsvSchemaVersion},
              // provenance only; excluded from the reproducibility guarantee
              {"provenance", {{"wall_seconds", wall_seconds}}}};
    return j.dump(2) + "\n";
}

void write_manifest(const std::string& out_dir, const RunManifest& m) {
    write_text_atomic((fs::path(out_dir) / "run_manifest.json").string(), m.to_json());
}

const char* const kSweepCsvHeader = "model,R,attack,smode,param,seed,sample,ssim_base,ssim_adv,psnr_base,psnr_adv,objective";

std::string sweep_rows_to_csv(std::vector<SweepRow> rows) {
    std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        return std::tie(a.model, a.accel, a.attack, a.smode, a.param, a.seed, a.sample) <
               std::tie(b.model, b.accel, b.attack, b.smode, b.param, b.seed, b.sample);
    });
    std::string out = kSweepCsvHeader;
    out += "\n";
    for (const SweepRow& r : rows) {
        out += r.model + "," + std::to_string(r.accel) + "," + r.attack + "," + r.smode + "," +
               format_g(r.param) + "," + std::to_string(r.seed) + "," + std::to_string(r.sample) + "," +
               format_g(r.ssim_base) + "," + format_g(r.ssim_adv) + "," + format_g(r.psnr_base) + "," +
               format_g(r.psnr_adv) + "," + format_g(r.objective) + "\n";
    }
    return out;
}

std::vector<SummaryRow> summarize(const std::vector<SweepRow>& rows) {
    // group by (model, R, attack, smode, param), preserving sorted order
    std::vector<SweepRow> sorted = rows;
    std::sort(sorted.begin(), sorted.end(), [](const SweepRow& a, const SweepRow& b) {
        return std::tie(a.model, a.accel, a.attack, a.smode, a.param) <
               std::tie(b.model, b.accel, b.attack, b.smode, b.param);
    });
    std::vector<SummaryRow> out;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        double s = 0, s2 = 0, ps = 0, ob = 0;
        while (j < sorted.size() && sorted[j].model == sorted[i].model && sorted[j].accel == sorted[i].accel &&
               sorted[j].attack == sorted[i].attack && sorted[j].smode == sorted[i].smode &&
               sorted[j].param == sorted[i].param) {
            s += sorted[j].ssim_adv;
            s2 += sorted[j].ssim_adv * sorted[j].ssim_adv;
            ps += sorted[j].psnr_adv;
            ob += sorted[j].objective;
            ++j;
        }
        const int n = int(j - i);
        SummaryRow r;
        r.model = sorted[i].model;
        r.accel = sorted[i].accel;
        r.attack = sorted[i].attack;
        r.smode = sorted[i].smode;
        r.param = sorted[i].param;
        r.n = n;
        r.mean_ssim_adv = s / n;
        const double var = std::max(0.0, s2 / n - r.mean_ssim_adv * r.mean_ssim_adv);
        r.std_ssim_adv = std::sqrt(var);
        r.mean_psnr_adv = ps / n;
        r.mean_objective = ob / n;
        out.push_back(r);
        i = j;
    }
    return out;
}

std::string summary_to_csv(const std::vector<SummaryRow>& rows) {
    std::string out = "model,R,attack,smode,param,n,mean_ssim_adv,std_ssim_adv,mean_psnr_adv,mean_objective\n";
    for (const SummaryRow& r : rows)
        out += r.model + "," + std::to_string(r.accel) + "," + r.attack + "," + r.smode + "," +
               format_g(r.param) + "," + std::to_string(r.n) + "," + format_g(r.mean_ssim_adv) + "," +
               format_g(r.std_ssim_adv) + "," + format_g(r.mean_psnr_adv) + "," + format_g(r.mean_objective) +
               "\n";
    return out;
}

void write_pgm(const std::string& path, const Tensor& img, double scale_max) {
    if (img.rank() != 2)
        throw ShapeError("pgm: image must be [H,W], got " + img.shape_str());
    const int h = img.dim(0), w = img.dim(1);
    const double top = scale_max > 0 ? scale_max : img.max_real();
    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + std::size_t(h) * w);
    for (std::int64_t i = 0; i < img.numel(); ++i) {
        double v = top > 0 ? double(img[i].real()) / top * 255.0 : 0.0;
        v = std::min(std::max(v, 0.0), 255.0);
        out.push_back(char(static_cast<unsigned char>(std::lround(v))));
    }
    write_text_atomic(path, out);
}

void write_svg_chart(const std::string& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<SvgSeries>& series) {
    const int W = 640, H = 420, ml = 60, mr = 20, mt = 40, mb = 50;
    double xmin = HUGE_VAL, xmax = -HUGE_VAL, ymin = HUGE_VAL, ymax = -HUGE_VAL;
    for (const SvgSeries& s : series)
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (!(xmin <= xmax)) {
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (xmax == xmin)
        xmax = xmin + 1;
    if (ymax == ymin)
        ymax = ymin + 1;
    const auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    const auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n"
        << "<rect width='100%' height='100%' fill='white'/>\n"
        << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='15'>" << title << "</text>\n"
        << "<text x='" << W / 2 << "' y='" << H - 12 << "' text-anchor='middle' font-size='12'>" << x_label
        << "</text>\n"
        << "<text x='16' y='" << H / 2 << "' text-anchor='middle' font-size='12' transform='rotate(-90 16 "
        << H / 2 << ")'>" << y_label << "</text>\n"
        << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
        << "' stroke='black'/>\n"
        << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb << "' stroke='black'/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 4.0;
        const double fy = ymin + (ymax - ymin) * i / 4.0;
        svg << "<text x='" << px(fx) << "' y='" << H - mb + 16 << "' text-anchor='middle' font-size='10'>"
            << format_g(fx) << "</text>\n"
            << "<text x='" << ml - 6 << "' y='" << py(fy) + 3 << "' text-anchor='end' font-size='10'>"
            << format_g(fy) << "</text>\n";
    }
    for (std::size_t si = 0; si < series.size(); ++si) {
        const char* col = colors[si % 6];
        std::ostringstream pts;
        for (const auto& [x, y] : series[si].points)
            pts << px(x) << "," << py(y) << " ";
        svg << "<polyline fill='none' stroke='" << col << "' stroke-width='1.5' points='" << pts.str()
            << "'/>\n"
            << "<text x='" << W - mr - 4 << "' y='" << mt + 14 * double(si) << "' text-anchor='end' "
            << "font-size='11' fill='" << col << "'>" << series[si].label << "</text>\n";
    }
    svg << "</svg>\n";
    write_text_atomic(path, svg.str());
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    if (n <= 0)
        return;
    if (workers <= 0) {
        if (const char* env = std::getenv("ADVMR_WORKERS"))
            workers = std::max(1, std::atoi(env));
        else
            workers = int(std::thread::hardware_concurrency());
        if (workers <= 0)
            workers = 1;
    }
    workers = std::min(workers, n);
    if (workers == 1) {
        for (int i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex err_mu;
    std::exception_ptr err;
    auto body = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n)
                return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!err)
                    err = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(workers));
    for (int t = 0; t < workers; ++t)
        pool.emplace_back(body);
    for (auto& th : pool)
        th.join();
    if (err)
        std::rethrow_exception(err);
}

} // namespace advmr
